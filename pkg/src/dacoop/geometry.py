"""Arena geometry: walls, axis-aligned rectangular obstacles, spawn regions.

All coordinates are millimetres in double precision. Points are plain
``(x, y)`` tuples; the simulator makes millions of these queries and
tuple arithmetic is markedly cheaper than small numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from dacoop import kvfile

Vec2 = tuple[float, float]

SPAWN_MAX_REJECTIONS = 1000


class PenetrationError(ValueError):
    """A distance query was issued from inside solid geometry."""


class SpawnError(RuntimeError):
    pass


class ArenaFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RectObstacle:
    min_corner: Vec2
    max_corner: Vec2

    def __post_init__(self):
        if not (self.min_corner[0] < self.max_corner[0] and self.min_corner[1] < self.max_corner[1]):
            raise ValueError(f"degenerate obstacle {self.min_corner} -> {self.max_corner}")

    def closest_point(self, p: Vec2) -> Vec2:
        (x0, y0), (x1, y1) = self.min_corner, self.max_corner
        return (min(max(p[0], x0), x1), min(max(p[1], y0), y1))

    def contains(self, p: Vec2) -> bool:
        """Strict interior test."""
        return (self.min_corner[0] < p[0] < self.max_corner[0]
                and self.min_corner[1] < p[1] < self.max_corner[1])

    def intersects_rect(self, lo: Vec2, hi: Vec2) -> bool:
        return not (hi[0] < self.min_corner[0] or lo[0] > self.max_corner[0]
                    or hi[1] < self.min_corner[1] or lo[1] > self.max_corner[1])


@dataclass(frozen=True)
class RectRegion:
    """Spawn region. Unlike obstacles it may be degenerate (a segment or a point)."""

    min_corner: Vec2
    max_corner: Vec2

    def __post_init__(self):
        if not (self.min_corner[0] <= self.max_corner[0] and self.min_corner[1] <= self.max_corner[1]):
            raise ValueError(f"inverted region {self.min_corner} -> {self.max_corner}")

    @property
    def center(self) -> Vec2:
        return ((self.min_corner[0] + self.max_corner[0]) / 2, (self.min_corner[1] + self.max_corner[1]) / 2)

    @property
    def diagonal(self) -> float:
        return math.dist(self.min_corner, self.max_corner)


@dataclass(frozen=True)
class Arena:
    width: float
    height: float
    obstacles: tuple[RectObstacle, ...]
    pursuer_spawn: RectRegion
    evader_spawn: RectRegion
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("arena dimensions must be positive")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "_boxes", tuple((*o.min_corner, *o.max_corner) for o in self.obstacles))
        boxes = [(o.min_corner, o.max_corner, f"obstacle {k}") for k, o in enumerate(self.obstacles)]
        boxes += [(self.pursuer_spawn.min_corner, self.pursuer_spawn.max_corner, "pursuer_spawn"),
                  (self.evader_spawn.min_corner, self.evader_spawn.max_corner, "evader_spawn")]
        for lo, hi, what in boxes:
            if lo[0] < 0 or lo[1] < 0 or hi[0] > self.width or hi[1] > self.height:
                raise ValueError(f"{what} extends outside the arena")
        for region, what in ((self.pursuer_spawn, "pursuer_spawn"), (self.evader_spawn, "evader_spawn")):
            for k, o in enumerate(self.obstacles):
                if o.intersects_rect(region.min_corner, region.max_corner):
                    raise ValueError(f"{what} intersects obstacle {k}")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def boxes(self) -> tuple[tuple[float, float, float, float], ...]:
        return self._boxes

    def inside(self, p: Vec2) -> bool:
        return 0.0 <= p[0] <= self.width and 0.0 <= p[1] <= self.height

    def wall_points(self, p: Vec2) -> list[Vec2]:
        """Closest point on each wall, in the fixed order west, east, south, north."""
        return [(0.0, p[1]), (self.width, p[1]), (p[0], 0.0), (p[0], self.height)]

    def with_spawns(self, pursuer_spawn: RectRegion | None = None,
                    evader_spawn: RectRegion | None = None) -> "Arena":
        return Arena(self.width, self.height, self.obstacles,
                     pursuer_spawn or self.pursuer_spawn, evader_spawn or self.evader_spawn, self.name)


def nearest_obstacle_point(p: Vec2, arena: Arena) -> tuple[Vec2, float]:
    """Closest point over all obstacle boundaries and the four walls.

    Ties go to the lowest obstacle index; walls rank after obstacles.
    """
    px, py = p
    w, h = arena.width, arena.height
    if not (0.0 <= px <= w and 0.0 <= py <= h):
        raise PenetrationError(f"penetrating query: {p} lies outside the arena")
    best_pt = None
    best_d = math.inf
    for x0, y0, x1, y1 in arena.boxes:
        if x0 < px < x1 and y0 < py < y1:
            raise PenetrationError(f"penetrating query: {p} lies inside obstacle {(x0, y0, x1, y1)}")
        qx = x0 if px < x0 else (x1 if px > x1 else px)
        qy = y0 if py < y0 else (y1 if py > y1 else py)
        d = math.hypot(qx - px, qy - py)
        if d < best_d:
            best_pt, best_d = (qx, qy), d
    if px < best_d:
        best_pt, best_d = (0.0, py), px
    if w - px < best_d:
        best_pt, best_d = (w, py), w - px
    if py < best_d:
        best_pt, best_d = (px, 0.0), py
    if h - py < best_d:
        best_pt, best_d = (px, h), h - py
    return best_pt, best_d


def clearance(p: Vec2, arena: Arena) -> float:
    """Distance to the nearest solid surface, or -1 when ``p`` is not in free space."""
    try:
        return nearest_obstacle_point(p, arena)[1]
    except PenetrationError:
        return -1.0


def in_collision(p: Vec2, radius: float, arena: Arena) -> bool:
    """True iff a disc at ``p`` touches or overlaps an obstacle or a wall."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    return clearance(p, arena) <= radius


def sample_spawn(region: RectRegion, clearance_mm: float, rng: np.random.Generator,
                 arena: Arena, taken: Sequence[Vec2] = ()) -> Vec2:
    """Uniform rejection sample from ``region``.

    A candidate is kept when its disc of radius ``clearance_mm`` is collision
    free and it is at least ``2 * clearance_mm`` from every point in ``taken``.
    """
    (x0, y0), (x1, y1) = region.min_corner, region.max_corner
    for _ in range(SPAWN_MAX_REJECTIONS):
        p = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
        if in_collision(p, clearance_mm, arena):
            continue
        if any(math.dist(p, q) < 2 * clearance_mm for q in taken):
            continue
        return p
    raise SpawnError(f"spawn region infeasible: {SPAWN_MAX_REJECTIONS} consecutive rejections in {region}")


# -- arena files --------------------------------------------------------------

_REQUIRED = ("arena.width_mm", "arena.height_mm", "pursuer_spawn", "evader_spawn")
_ALLOWED = set(_REQUIRED) | {"obstacle", "arena.name"}


def _rect(value, lineno: int) -> tuple[Vec2, Vec2]:
    if not (isinstance(value, list) and len(value) == 4
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ArenaFormatError(f"line {lineno}: expected [xmin, ymin, xmax, ymax], got {value!r}")
    x0, y0, x1, y1 = (float(v) for v in value)
    return (x0, y0), (x1, y1)


def parse_arena(text: str, name: str = "") -> Arena:
    try:
        entries = kvfile.parse(text)
    except kvfile.KVSyntaxError as exc:
        raise ArenaFormatError(str(exc)) from exc
    scalars = {}
    obstacles = []
    for e in entries:
        key = e.qualified
        if key not in _ALLOWED:
            raise ArenaFormatError(f"line {e.lineno}: unknown key {key!r}")
        if key == "obstacle":
            try:
                obstacles.append(RectObstacle(*_rect(e.value, e.lineno)))
            except ValueError as exc:
                raise ArenaFormatError(f"line {e.lineno}: {exc}") from exc
        elif key in scalars:
            raise ArenaFormatError(f"line {e.lineno}: duplicate key {key!r}")
        else:
            scalars[key] = e
    for key in _REQUIRED:
        if key not in scalars:
            raise ArenaFormatError(f"missing required key {key!r}")
    try:
        return Arena(
            width=float(scalars["arena.width_mm"].value),
            height=float(scalars["arena.height_mm"].value),
            obstacles=tuple(obstacles),
            pursuer_spawn=RectRegion(*_rect(scalars["pursuer_spawn"].value, scalars["pursuer_spawn"].lineno)),
            evader_spawn=RectRegion(*_rect(scalars["evader_spawn"].value, scalars["evader_spawn"].lineno)),
            name=str(scalars["arena.name"].value) if "arena.name" in scalars else name,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ArenaFormatError):
            raise
        raise ArenaFormatError(str(exc)) from exc


def bundled_arenas() -> list[str]:
    return sorted(p.name.removesuffix(".arena") for p in resources.files("dacoop.arenas").iterdir()
                  if p.name.endswith(".arena"))


def load_arena(path_or_name: str | Path) -> Arena:
    """Load an arena file by path, or a bundled one by name (``train_fig5a``)."""
    path = Path(path_or_name)
    if path.is_file():
        return parse_arena(path.read_text(), name=path.stem)
    stem = path.name.removesuffix(".arena")
    bundled = resources.files("dacoop.arenas") / f"{stem}.arena"
    if path.parent in (Path("."), Path("arenas")) and bundled.is_file():
        return parse_arena(bundled.read_text(), name=stem)
    raise FileNotFoundError(f"no arena file {str(path_or_name)!r}")


def arena_to_text(arena: Arena) -> str:
    def rect(lo, hi):
        return f"[{lo[0]:g}, {lo[1]:g}, {hi[0]:g}, {hi[1]:g}]"

    lines = [f"arena.width_mm = {arena.width:g}", f"arena.height_mm = {arena.height:g}"]
    lines += [f"obstacle = {rect(o.min_corner, o.max_corner)}" for o in arena.obstacles]
    lines.append(f"pursuer_spawn = {rect(arena.pursuer_spawn.min_corner, arena.pursuer_spawn.max_corner)}")
    lines.append(f"evader_spawn = {rect(arena.evader_spawn.min_corner, arena.evader_spawn.max_corner)}")
    return "\n".join(lines) + "\n"

