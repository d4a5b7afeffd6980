import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dacoop.geometry import (Arena, ArenaFormatError, PenetrationError, RectObstacle, RectRegion, SpawnError,
                             arena_to_text, bundled_arenas, clearance, in_collision, load_arena,
                             nearest_obstacle_point, parse_arena, sample_spawn)
from oracles import point_rect_distance


def empty_arena(w=3600.0, h=5000.0):
    region = RectRegion((100.0, 100.0), (w - 100.0, h - 100.0))
    return Arena(w, h, (), region, region)


def block_arena():
    obstacle = RectObstacle((600.0, 400.0), (800.0, 700.0))
    return Arena(3600.0, 5000.0, (obstacle,), RectRegion((100, 1000), (3500, 1500)),
                 RectRegion((100, 4000), (3500, 4900)))


class TestNearestObstacle:
    def test_nearest_wall(self):
        pt, d = nearest_obstacle_point((100.0, 100.0), empty_arena())
        assert pt == (0.0, 100.0) and d == 100.0

    def test_center_tie_goes_to_first_wall(self):
        pt, d = nearest_obstacle_point((500.0, 500.0), empty_arena(1000.0, 1000.0))
        assert d == 500.0 and pt == (0.0, 500.0)

    def test_obstacle_face(self):
        pt, d = nearest_obstacle_point((500.0, 500.0), block_arena())
        assert pt == (600.0, 500.0)
        assert d == pytest.approx(point_rect_distance((500, 500), (600, 400), (800, 700)), abs=1e-12)

    def test_obstacle_ranks_before_wall_on_tie(self):
        # 100 mm from x=0 wall and 100 mm from the obstacle face at x=200
        obstacle = RectObstacle((200.0, 2000.0), (400.0, 3000.0))
        region = RectRegion((1000, 100), (2000, 500))
        arena = Arena(3600.0, 5000.0, (obstacle,), region, region)
        pt, d = nearest_obstacle_point((100.0, 2500.0), arena)
        assert d == 100.0 and pt == (200.0, 2500.0)

    def test_penetrating_query(self):
        with pytest.raises(PenetrationError, match="penetrating query"):
            nearest_obstacle_point((700.0, 500.0), block_arena())
        with pytest.raises(PenetrationError):
            nearest_obstacle_point((-1.0, 500.0), block_arena())

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 3600), st.floats(0, 5000), st.floats(0, 3600), st.floats(0, 5000))
    def test_one_lipschitz(self, x1, y1, x2, y2):
        arena = load_arena("train_fig5a")
        a, b = (x1, y1), (x2, y2)
        if clearance(a, arena) < 0 or clearance(b, arena) < 0:
            return
        da = nearest_obstacle_point(a, arena)[1]
        db = nearest_obstacle_point(b, arena)[1]
        assert abs(da - db) <= math.dist(a, b) + 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.floats(1, 3599), st.floats(1, 4999))
    def test_matches_brute_force_boundary_samples(self, x, y):
        arena = load_arena("train_fig5a")
        if clearance((x, y), arena) < 0:
            return
        samples = []
        step = 1.0
        for x0, y0, x1, y1 in [(0, 0, arena.width, arena.height), *arena.boxes]:
            xs = np.arange(x0, x1 + step, step)
            ys = np.arange(y0, y1 + step, step)
            samples += [np.column_stack([xs, np.full_like(xs, y0)]), np.column_stack([xs, np.full_like(xs, y1)]),
                        np.column_stack([np.full_like(ys, x0), ys]), np.column_stack([np.full_like(ys, x1), ys])]
        pts = np.concatenate(samples)
        brute = np.min(np.hypot(pts[:, 0] - x, pts[:, 1] - y))
        d = nearest_obstacle_point((x, y), arena)[1]
        assert d <= brute + 1e-9
        assert brute - d <= 1.0


class TestCollision:
    def test_interior_disc_is_free(self):
        assert not in_collision((1800.0, 2500.0), 80.0, empty_arena())

    def test_touching_counts(self):
        assert in_collision((500.0, 500.0), 100.0, block_arena())
        assert not in_collision((500.0, 500.0), 99.999, block_arena())

    def test_wall(self):
        assert in_collision((50.0, 2500.0), 100.0, empty_arena())

    def test_negative_radius(self):
        with pytest.raises(ValueError):
            in_collision((10.0, 10.0), -1.0, empty_arena())


class TestSpawn:
    def test_degenerate_region(self):
        region = RectRegion((1000.0, 1000.0), (1000.0, 1000.0))
        rng = np.random.default_rng(0)
        assert sample_spawn(region, 80.0, rng, empty_arena()) == (1000.0, 1000.0)

    def test_deterministic(self):
        arena = load_arena("train_fig5a")
        a = [sample_spawn(arena.pursuer_spawn, 80, np.random.default_rng(5), arena) for _ in range(3)]
        b = [sample_spawn(arena.pursuer_spawn, 80, np.random.default_rng(5), arena) for _ in range(3)]
        assert a == b

    def test_mean_near_center(self):
        arena = empty_arena()
        region = RectRegion((500.0, 500.0), (2500.0, 3500.0))
        rng = np.random.default_rng(1)
        pts = np.array([sample_spawn(region, 80.0, rng, arena) for _ in range(10_000)])
        err = math.dist(tuple(pts.mean(axis=0)), region.center)
        assert err < 0.02 * region.diagonal

    def test_infeasible(self):
        region = RectRegion((10.0, 10.0), (20.0, 20.0))
        with pytest.raises(SpawnError, match="spawn region infeasible"):
            sample_spawn(region, 80.0, np.random.default_rng(0), empty_arena())

    def test_separation_from_taken(self):
        arena = load_arena("train_fig5a")
        rng = np.random.default_rng(2)
        taken = []
        for _ in range(6):
            p = sample_spawn(arena.pursuer_spawn, 80.0, rng, arena, taken)
            assert not in_collision(p, 80.0, arena)
            assert all(math.dist(p, q) >= 160.0 for q in taken)
            taken.append(p)


class TestArenaFiles:
    def test_bundled(self):
        names = bundled_arenas()
        for name in ("train_fig5a", "val_fig5b", "open", "u_trap"):
            assert name in names
            assert load_arena(name).name == name

    def test_path_prefix(self):
        assert load_arena("arenas/val_fig5b") == load_arena("val_fig5b")

    def test_gaps(self):
        # training layout: 0.5 m between o1 and o2; validation layout: 0.4 m passage on the right
        train = load_arena("train_fig5a")
        o1, o2 = train.obstacles[0], train.obstacles[1]
        assert o2.min_corner[0] - o1.max_corner[0] == 500.0
        val = load_arena("val_fig5b")
        assert val.width - val.obstacles[5].max_corner[0] == 400.0

    def test_round_trip(self):
        arena = load_arena("train_fig5a")
        assert parse_arena(arena_to_text(arena)) == arena

    def test_errors(self):
        with pytest.raises(ArenaFormatError, match="line 2"):
            parse_arena("arena.width_mm = 100\nobstacle = [1, 2]\n")
        with pytest.raises(ArenaFormatError):
            parse_arena("arena.width_mm = 100\n")
        with pytest.raises(FileNotFoundError):
            load_arena("/nonexistent/file.arena")

    def test_spawn_inside_obstacle_rejected(self):
        with pytest.raises(ValueError, match="intersects"):
            Arena(1000.0, 1000.0, (RectObstacle((0, 0), (500, 500)),), RectRegion((100, 100), (200, 200)),
                  RectRegion((600, 600), (700, 700)))
