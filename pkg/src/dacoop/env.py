"""Multi-pursuer, single-evader pursuit game on a rectangular arena.

Pursuers and the evader move at constant speed along their headings with
fixed-step Euler integration. Capture flags are sticky by default: a
pursuer that comes within ``d_capture`` of the evader halts and is seen by
its teammates as a (virtual) disc obstacle. The mission succeeds once every
pursuer has captured.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from dacoop.apf import ObstacleQuery, heading_of, repulsive_force, wrap_angle
from dacoop.geometry import Arena, Vec2, clearance, in_collision, nearest_obstacle_point, sample_spawn

# Potential staircase for shaping: (upper distance bound in mm, potential).
POTENTIAL_STEPS = ((400.0, 15.0), (600.0, 10.0), (800.0, 5.0))

R_MAIN = 20.0
R_TIME = -5.0
R_TEAMMATE = -20.0
R_OBSTACLE_HIT = -20.0
R_OBSTACLE_NEAR = -2.0
HEADING_JUMP = math.pi / 4

CAPTURE_MODES = ("sticky", "simultaneous")
EVADER_MODES = ("escape", "stationary")


class InvalidCommand(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioParams:
    n_pursuers: int = 3
    v_p: float = 300.0
    v_e: float = 400.0
    radius_p: float = 80.0
    radius_e: float = 80.0
    d_capture: float = 300.0
    d_sense: float = 2000.0
    dt: float = 0.1
    max_steps: int = 1000
    gamma: float = 0.99
    capture_mode: str = "sticky"
    evader_mode: str = "escape"
    # escape policy stand-in
    evader_eta: float = 1e9
    evader_rho0: float = 500.0
    evader_bias: float = 0.3
    evader_sense: float = 10000.0
    evader_probe: float = 500.0

    def __post_init__(self):
        if self.n_pursuers < 1:
            raise ValueError("n_pursuers must be >= 1")
        for name in ("v_p", "radius_p", "radius_e", "d_capture", "d_sense", "dt",
                     "evader_rho0", "evader_sense", "evader_probe"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.capture_mode not in CAPTURE_MODES:
            raise ValueError(f"capture_mode must be one of {CAPTURE_MODES}")
        if self.evader_mode not in EVADER_MODES:
            raise ValueError(f"evader_mode must be one of {EVADER_MODES}")
        if self.evader_mode == "escape" and not self.v_e > self.v_p:
            raise ValueError("an escaping evader must be faster than the pursuers (v_e > v_p)")
        if self.v_e < 0 or self.evader_eta < 0 or self.evader_bias < 0:
            raise ValueError("evader parameters must be non-negative")


@dataclass(frozen=True)
class AgentState:
    position: Vec2
    heading: float
    captured: bool = False


@dataclass(frozen=True)
class EnvState:
    pursuers: tuple[AgentState, ...]
    evader: AgentState
    t: int = 0
    success: bool = False
    timeout: bool = False

    @property
    def done(self) -> bool:
        return self.success or self.timeout

    def captured_positions(self, exclude: int = -1) -> list[Vec2]:
        return [a.position for k, a in enumerate(self.pursuers) if a.captured and k != exclude]


@dataclass(frozen=True)
class Observation:
    d_o: float
    phi_o: float
    d_e: float
    phi_e: float
    neighbors: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class RewardBreakdown:
    r_main: float = 0.0
    r_time: float = 0.0
    r_tm: float = 0.0
    r_o: float = 0.0
    r_pot: float = 0.0

    @property
    def total(self) -> float:
        return self.r_main + self.r_time + self.r_tm + self.r_o + self.r_pot


@dataclass
class StepResult:
    state: EnvState
    observations: list[Observation]
    rewards: list[RewardBreakdown]
    done: bool
    info: dict = field(default_factory=dict)


def potential(d_e: float) -> float:
    for bound, value in POTENTIAL_STEPS:
        if d_e < bound:
            return value
    return 0.0


def obstacle_penalty(d_o: float, radius_p: float) -> float:
    if d_o < radius_p:
        return R_OBSTACLE_HIT
    if d_o < 1.5 * radius_p:
        return R_OBSTACLE_NEAR
    return 0.0


def _bearing(frm: Vec2, to: Vec2, heading: float) -> float:
    return wrap_angle(math.atan2(to[1] - frm[1], to[0] - frm[0]) - heading)


class PursuitEnv:
    """The pursuit Markov game. States are immutable; ``step`` returns a new one."""

    def __init__(self, arena: Arena, params: ScenarioParams):
        self.arena = arena
        self.params = params

    # -- lifecycle ------------------------------------------------------------

    def reset(self, seed) -> tuple[EnvState, list[Observation]]:
        p = self.params
        rng = np.random.default_rng(seed)
        taken: list[Vec2] = []
        pursuers = []
        for _ in range(p.n_pursuers):
            pos = sample_spawn(self.arena.pursuer_spawn, p.radius_p, rng, self.arena, taken)
            taken.append(pos)
            pursuers.append(AgentState(pos, wrap_angle(float(rng.uniform(-math.pi, math.pi)))))
        evader_pos = sample_spawn(self.arena.evader_spawn, p.radius_e, rng, self.arena, taken)
        evader = AgentState(evader_pos, wrap_angle(float(rng.uniform(-math.pi, math.pi))))
        state = EnvState(tuple(pursuers), evader)
        return state, self.observations(state)

    def step(self, state: EnvState, headings: Sequence[float | None]) -> StepResult:
        p = self.params
        if len(headings) != p.n_pursuers:
            raise InvalidCommand(f"expected {p.n_pursuers} headings, got {len(headings)}")
        if state.done:
            return StepResult(state, self.observations(state),
                              [RewardBreakdown()] * p.n_pursuers, True,
                              {"success": state.success, "timeout": state.timeout,
                               "active": [False] * p.n_pursuers})

        sticky = p.capture_mode == "sticky"
        active = [not (sticky and a.captured) for a in state.pursuers]
        evader_heading = self.evader_policy(state) if p.evader_mode == "escape" else state.evader.heading

        moved = []
        for i, agent in enumerate(state.pursuers):
            if not active[i]:
                moved.append(agent)
                continue
            h = headings[i]
            if h is None or not math.isfinite(h):
                raise InvalidCommand(f"invalid command for pursuer {i}: {h!r}")
            h = wrap_angle(float(h))
            moved.append(AgentState(self._move(agent.position, h, p.v_p * p.dt, p.radius_p), h))

        evader = state.evader
        if p.evader_mode == "escape":
            evader = AgentState(self._move(evader.position, evader_heading, p.v_e * p.dt, p.radius_e),
                                evader_heading)

        newly = [False] * p.n_pursuers
        final = []
        for i, agent in enumerate(moved):
            near = math.dist(agent.position, evader.position) < p.d_capture
            if sticky:
                flag = agent.captured or near
            else:
                flag = near
            newly[i] = flag and not state.pursuers[i].captured
            final.append(replace(agent, captured=flag))

        t = state.t + 1
        success = all(a.captured for a in final)
        new_state = EnvState(tuple(final), evader, t, success, (not success) and t >= p.max_steps)
        obs = self.observations(new_state)
        rewards = [self.compute_reward(state, new_state, i, obs[i]) if active[i] else RewardBreakdown()
                   for i in range(p.n_pursuers)]
        info = {"success": new_state.success, "timeout": new_state.timeout,
                "active": active, "newly_captured": newly}
        return StepResult(new_state, obs, rewards, new_state.done, info)

    def _move(self, pos: Vec2, heading: float, dist: float, radius: float) -> Vec2:
        """Constant-speed move; a blocked move stops short of contact."""
        ux, uy = math.cos(heading), math.sin(heading)
        target = (pos[0] + dist * ux, pos[1] + dist * uy)
        if not in_collision(target, radius, self.arena):
            return target
        lo, hi = 0.0, 1.0
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if in_collision((pos[0] + mid * dist * ux, pos[1] + mid * dist * uy), radius, self.arena):
                hi = mid
            else:
                lo = mid
        return (pos[0] + lo * dist * ux, pos[1] + lo * dist * uy)

    # -- sensing --------------------------------------------------------------

    def obstacle_query(self, state: EnvState, i: int) -> ObstacleQuery:
        discs = state.captured_positions(exclude=i) if self.params.capture_mode == "sticky" else ()
        return ObstacleQuery(self.arena, discs, self.params.radius_p)

    def build_observation(self, state: EnvState, i: int) -> Observation:
        p = self.params
        me = state.pursuers[i]
        pos, h = me.position, me.heading
        q, d_o = self.obstacle_query(state, i).nearest(pos)
        e = state.evader.position
        neighbors = []
        for j, other in enumerate(state.pursuers):
            if j == i or (other.captured and p.capture_mode == "sticky"):
                continue
            d = math.dist(pos, other.position)
            if d <= p.d_sense:
                neighbors.append((d, _bearing(pos, other.position, h)))
        neighbors.sort()
        return Observation(d_o, _bearing(pos, q, h), math.dist(pos, e), _bearing(pos, e, h), tuple(neighbors))

    def observations(self, state: EnvState) -> list[Observation]:
        return [self.build_observation(state, i) for i in range(self.params.n_pursuers)]

    # -- reward ---------------------------------------------------------------

    def compute_reward(self, prev: EnvState, state: EnvState, i: int, obs: Observation | None = None) -> RewardBreakdown:
        p = self.params
        before, after = prev.pursuers[i], state.pursuers[i]
        if obs is None:
            obs = self.build_observation(state, i)
        r_main = R_MAIN if after.captured and not before.captured else 0.0
        r_time = R_TIME if abs(wrap_angle(after.heading - before.heading)) > HEADING_JUMP else 0.0
        r_tm = 0.0
        for j, other in enumerate(state.pursuers):
            if j != i and math.dist(after.position, other.position) < 2 * p.radius_p:
                r_tm = R_TEAMMATE
                break
        r_o = obstacle_penalty(obs.d_o, p.radius_p)
        d_prev = math.dist(before.position, prev.evader.position)
        r_pot = p.gamma * potential(obs.d_e) - potential(d_prev)
        return RewardBreakdown(r_main, r_time, r_tm, r_o, r_pot)

    # -- evader -----------------------------------------------------------------

    def evader_policy(self, state: EnvState) -> float:
        """Deterministic escape heading.

        Sum of inverse-square repulsion from every pursuer within
        ``evader_sense`` (distances in metres), obstacle repulsion of the
        same form as the pursuers' with ``evader_eta``/``evader_rho0``, and
        a fixed-size tangential bias perpendicular to the pursuer repulsion,
        turned toward the side with more free space.
        """
        p = self.params
        x = state.evader.position
        rx = ry = 0.0
        for agent in state.pursuers:
            dx, dy = x[0] - agent.position[0], x[1] - agent.position[1]
            d = math.hypot(dx, dy)
            if d == 0.0 or d > p.evader_sense:
                continue
            w = (1000.0 / d) ** 2
            rx += w * dx / d
            ry += w * dy / d
        q, _ = nearest_obstacle_point(x, self.arena)
        wx, wy = repulsive_force(x, q, p.evader_eta, p.evader_rho0)
        bx = by = 0.0
        r = math.hypot(rx, ry)
        if r > 0.0 and p.evader_bias > 0.0:
            t1 = (-ry / r, rx / r)
            c1 = clearance((x[0] + p.evader_probe * t1[0], x[1] + p.evader_probe * t1[1]), self.arena)
            c2 = clearance((x[0] - p.evader_probe * t1[0], x[1] - p.evader_probe * t1[1]), self.arena)
            sign = 1.0 if c1 >= c2 else -1.0
            bx, by = sign * p.evader_bias * t1[0], sign * p.evader_bias * t1[1]
        total = (rx + wx + bx, ry + wy + by)
        if total == (0.0, 0.0):
            return state.evader.heading
        return heading_of(total)


# -- trajectory export ----------------------------------------------------------

TRAJECTORY_COLUMNS = ("step", "agent_id", "role", "x_mm", "y_mm", "heading_rad", "captured",
                      "r_main", "r_time", "r_tm", "r_o", "r_pot")


class TrajectoryRecorder:
    """Collects per-step rows in the trajectory CSV schema."""

    def __init__(self):
        self.rows: list[tuple] = []

    def record(self, state: EnvState, rewards: Sequence[RewardBreakdown] | None = None):
        for i, a in enumerate(state.pursuers):
            r = rewards[i] if rewards is not None else RewardBreakdown()
            self.rows.append((state.t, i, "pursuer", a.position[0], a.position[1], a.heading, int(a.captured),
                              r.r_main, r.r_time, r.r_tm, r.r_o, r.r_pot))
        e = state.evader
        self.rows.append((state.t, len(state.pursuers), "evader", e.position[0], e.position[1], e.heading, 0,
                          0.0, 0.0, 0.0, 0.0, 0.0))

    def write(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAJECTORY_COLUMNS)
            for row in self.rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
