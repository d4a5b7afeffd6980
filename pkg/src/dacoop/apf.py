"""Artificial potential field layer with wall following and virtual obstacles.

Forces are dimensionless 2-vectors; distances are millimetres. The
attractive force is always unit length, so ``eta`` and ``lambda_`` set the
strength of obstacle avoidance and teammate spacing relative to pursuit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from dacoop.geometry import Arena, PenetrationError, Vec2, nearest_obstacle_point

ZERO: Vec2 = (0.0, 0.0)


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.remainder(a, math.tau)
    return math.pi if a <= -math.pi else a


def heading_of(v: Vec2) -> float:
    return wrap_angle(math.atan2(v[1], v[0]))


def norm(v: Vec2) -> float:
    return math.hypot(v[0], v[1])


@dataclass(frozen=True)
class ApfParams:
    eta: float = 0.0
    lambda_: float = 1000.0
    rho0: float = 500.0
    b_threshold: float = 1.0

    def __post_init__(self):
        if self.eta < 0 or self.lambda_ <= 0 or self.rho0 <= 0 or self.b_threshold < 0:
            raise ValueError(f"invalid APF parameters {self}")


@dataclass(frozen=True)
class ForceSet:
    f_a: Vec2
    f_r: Vec2
    f_in: Vec2

    @property
    def f_ar(self) -> Vec2:
        return (self.f_a[0] + self.f_r[0], self.f_a[1] + self.f_r[1])

    @property
    def f_total(self) -> Vec2:
        return (self.f_a[0] + self.f_r[0] + self.f_in[0], self.f_a[1] + self.f_r[1] + self.f_in[1])


def attractive_force(p: Vec2, target: Vec2) -> Vec2:
    dx, dy = target[0] - p[0], target[1] - p[1]
    d = math.hypot(dx, dy)
    if d == 0.0:
        return ZERO
    return (dx / d, dy / d)


def repulsive_force(p: Vec2, obstacle_point: Vec2, eta: float, rho0: float) -> Vec2:
    dx, dy = p[0] - obstacle_point[0], p[1] - obstacle_point[1]
    d = math.hypot(dx, dy)
    if d == 0.0:
        raise PenetrationError(f"penetrating obstacle at {p}")
    if d > rho0:
        return ZERO
    mag = eta * (rho0 - d) / (d ** 3 * rho0)
    return (mag * dx / d, mag * dy / d)


def interindividual_force(p: Vec2, neighbor_positions: Sequence[Vec2], lambda_: float) -> Vec2:
    fx = fy = 0.0
    for q in neighbor_positions:
        dx, dy = q[0] - p[0], q[1] - p[1]
        d = math.hypot(dx, dy)
        if d == 0.0:
            raise PenetrationError(f"penetrating teammate at {p}")
        c = (0.5 - lambda_ / d) / d
        fx += c * dx
        fy += c * dy
    return (fx, fy)


def compute_forces(p: Vec2, target: Vec2, obstacle_point: Vec2, neighbor_positions: Sequence[Vec2],
                   params: ApfParams) -> ForceSet:
    return ForceSet(
        f_a=attractive_force(p, target),
        f_r=repulsive_force(p, obstacle_point, params.eta, params.rho0),
        f_in=interindividual_force(p, neighbor_positions, params.lambda_),
    )


def wall_following_active(forces: ForceSet) -> bool:
    """True when the attractive+repulsive resultant points more than 90 degrees away from the target.

    Exactly 90 degrees does not trigger. A vanishing resultant (repulsion
    exactly cancelling attraction) does.
    """
    f_a, f_ar = forces.f_a, forces.f_ar
    if f_ar == ZERO and f_a != ZERO:
        return True
    return f_a[0] * f_ar[0] + f_a[1] * f_ar[1] < 0.0


def resolve_heading(forces: ForceSet, current_heading: float, b_threshold: float,
                    wall_following: bool = True) -> float:
    if not (wall_following and wall_following_active(forces)):
        total = forces.f_total
        if total == ZERO:
            return wrap_angle(current_heading)
        return heading_of(total)

    f_r = forces.f_r
    r = norm(f_r)
    assert r > 0.0, "wall following requires a repulsive force"
    # n1 is f_r rotated by +90 degrees; n2 = -n1
    n1 = (-f_r[1] / r, f_r[0] / r)
    f_in = forces.f_in
    if norm(f_in) < b_threshold:
        ref = (math.cos(current_heading), math.sin(current_heading))
    else:
        ref = f_in
    score = n1[0] * ref[0] + n1[1] * ref[1]
    chosen = n1 if score >= 0.0 else (-n1[0], -n1[1])
    return heading_of(chosen)


class ObstacleQuery:
    """Nearest-obstacle queries over the arena plus virtual disc obstacles.

    Each captured teammate becomes a disc of radius ``disc_radius``. Real
    obstacles and walls win ties against virtual ones. A query point that
    overlaps a disc reports the disc centre as the nearest point.
    """

    def __init__(self, arena: Arena, captured_teammates: Sequence[Vec2] = (), disc_radius: float = 80.0):
        self.arena = arena
        self.discs = tuple(captured_teammates)
        self.disc_radius = disc_radius

    def nearest(self, p: Vec2) -> tuple[Vec2, float]:
        best_pt, best_d = nearest_obstacle_point(p, self.arena)
        r = self.disc_radius
        for c in self.discs:
            dx, dy = p[0] - c[0], p[1] - c[1]
            dc = math.hypot(dx, dy)
            if dc == 0.0:
                continue
            if dc > r:
                d = dc - r
                q = (c[0] + r * dx / dc, c[1] + r * dy / dc)
            else:
                d, q = dc, c
            if d < best_d:
                best_pt, best_d = q, d
        return best_pt, best_d


def effective_obstacle_set(arena: Arena, captured_teammates: Sequence[Vec2], disc_radius: float = 80.0) -> ObstacleQuery:
    return ObstacleQuery(arena, captured_teammates, disc_radius)


def apf_heading(p: Vec2, heading: float, target: Vec2, obstacle_point: Vec2,
                neighbor_positions: Sequence[Vec2], params: ApfParams, wall_following: bool = True) -> float:
    forces = compute_forces(p, target, obstacle_point, neighbor_positions, params)
    return resolve_heading(forces, heading, params.b_threshold, wall_following)


def local_heading(obs, params: ApfParams, wall_following: bool = True) -> float:
    """Heading command relative to the observer's own heading.

    Works purely from a local observation (nearest obstacle, evader and
    neighbours as distance/bearing pairs), with the observer at the origin
    facing +x.
    """
    target = (obs.d_e * math.cos(obs.phi_e), obs.d_e * math.sin(obs.phi_e))
    obstacle_point = (obs.d_o * math.cos(obs.phi_o), obs.d_o * math.sin(obs.phi_o))
    neighbors = [(d * math.cos(phi), d * math.sin(phi)) for d, phi in obs.neighbors]
    return apf_heading(ZERO, 0.0, target, obstacle_point, neighbors, params, wall_following)
