import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dacoop.apf import ApfParams
from dacoop.baselines import (ApfPolicy, ApfSchedule, HeadingActionGrid, VanillaAdapter, adapter_for,
                              grid_search_best_init, scheduled_params, vanilla_reward_bonus)
from dacoop.env import Observation, PursuitEnv, ScenarioParams
from dacoop.geometry import load_arena
from dacoop.trainer import DacoopAdapter, TrainConfig, Trainer


def small_env():
    return PursuitEnv(load_arena("train_fig5a"), ScenarioParams(n_pursuers=2, max_steps=40))


class TestVanilla:
    def test_bonus_example(self):
        assert vanilla_reward_bonus(1000.0, 970.0) == pytest.approx(0.15, abs=1e-15)
        assert vanilla_reward_bonus(500.0, 500.0) == 0.0

    @given(st.floats(0, 1e4), st.floats(0, 1e4))
    def test_bonus_antisymmetric(self, a, b):
        assert vanilla_reward_bonus(a, b) == -vanilla_reward_bonus(b, a)

    def test_heading_grid(self):
        grid = HeadingActionGrid()
        assert len(grid) == 24 and grid[0] == 0.0
        assert grid[6] == pytest.approx(math.pi / 2, abs=1e-15)
        assert grid[12] == pytest.approx(math.pi)
        assert all(-math.pi < h <= math.pi for h in grid.headings)

    def test_adapter_ignores_observation(self):
        a = VanillaAdapter()
        obs = Observation(300.0, 1.0, 900.0, -2.0)
        assert a.heading(obs, 2.5, 6) == a.heading(Observation(1.0, 0.0, 1.0, 0.0), -1.0, 6)
        assert a.n_actions == 24

    def test_adapter_lookup(self):
        assert isinstance(adapter_for("dacoop"), DacoopAdapter)
        assert isinstance(adapter_for("vanilla_d3qn"), VanillaAdapter)
        with pytest.raises(ValueError):
            adapter_for("modified_apf")

    def test_trains_through_shared_loop(self):
        cfg = TrainConfig(episodes=2, embed_units=8, trunk_units=8, stream_units=8, updates_per_episode=3,
                          batch_size=8, learning_starts=8, replay_capacity=512)
        trainer = Trainer(small_env(), cfg, seed=0, adapter=VanillaAdapter())
        result = trainer.run()
        assert len(result.metrics) == 2
        assert trainer.online["adv2.b"].shape == (24,)


class TestSchedule:
    def test_examples(self):
        s = ApfSchedule(3e8, 1000.0)
        assert scheduled_params(4000.0, s) == (3e8, 1000.0)
        assert scheduled_params(2000.0, s) == (3e8, 1000.0)
        assert scheduled_params(1000.0, s) == (1.5e8, 500.0)
        assert scheduled_params(0.0, s) == (0.0, 1.0)

    @given(st.floats(0, 5000), st.floats(0, 5000))
    def test_monotone(self, a, b):
        s = ApfSchedule(1.5e8, 3000.0)
        lo, hi = sorted((a, b))
        e1, l1 = scheduled_params(lo, s)
        e2, l2 = scheduled_params(hi, s)
        assert e1 <= e2 and l1 <= l2 and l1 >= 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            ApfSchedule(1e8, 0.0)

    def test_fixed_policy(self):
        p = ApfPolicy(ApfSchedule(1.5e8, 500.0), ApfParams(rho0=400.0), scheduled=False)
        got = p.params_for(Observation(1000.0, 0.0, 100.0, 0.0))
        assert (got.eta, got.lambda_, got.rho0) == (1.5e8, 500.0, 400.0)


class TestGridSearch:
    def test_single_candidate(self):
        r = grid_search_best_init(small_env(), [(1.5e8, 500.0)], 3, seed=0)
        assert r.index == 0 and r.schedule.eta0 == 1.5e8 and len(r.rates) == 1

    def test_deterministic_and_argmax(self):
        pairs = [(0.0, 30.0), (1.5e8, 30.0), (3e8, 1000.0)]
        a = grid_search_best_init(small_env(), pairs, 4, seed=5, scheduled=False)
        b = grid_search_best_init(small_env(), pairs, 4, seed=5, scheduled=False)
        assert a.rates == b.rates
        assert a.rates[a.index] == max(a.rates) and a.index == int(np.argmax(a.rates))

    def test_empty(self):
        with pytest.raises(ValueError):
            grid_search_best_init(small_env(), [], 1, 0)
