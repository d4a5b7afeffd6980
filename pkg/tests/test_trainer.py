import math

import numpy as np
import pytest

from dacoop import nn
from dacoop.env import PursuitEnv, ScenarioParams
from dacoop.geometry import load_arena
from dacoop.trainer import (EVAL_TAG, TRAIN_TAG, ActionGrid, DacoopAdapter, TrainConfig, Trainer, compute_target,
                            compute_targets, episode_seed, epsilon, evaluate, metrics_line, select_action)

TINY = dict(embed_units=8, trunk_units=8, stream_units=8, updates_per_episode=5, batch_size=8,
            learning_starts=8, replay_capacity=1024, target_sync=3)


def small_env(**kw):
    params = dict(n_pursuers=2, max_steps=40)
    params.update(kw)
    return PursuitEnv(load_arena("train_fig5a"), ScenarioParams(**params))


class TestActionGrid:
    def test_default_grid(self):
        grid = ActionGrid.product()
        assert len(grid) == 24
        assert grid[0] == (0.0, 30.0) and grid[7] == (0.0, 3000.0) and grid[8] == (1.5e8, 30.0)
        assert grid[23] == (3e8, 3000.0)
        assert grid.index((1.5e8, 500.0)) == 11

    def test_unique(self):
        with pytest.raises(ValueError):
            ActionGrid(((0.0, 1.0), (0.0, 1.0)))


class TestEpsilon:
    def test_schedule(self):
        cfg = TrainConfig()
        assert epsilon(0, cfg) == 1.0
        assert epsilon(4000, cfg) == pytest.approx(0.01, abs=1e-15) and epsilon(9000, cfg) == 0.01
        assert epsilon(2000, cfg) == pytest.approx(0.505)

    def test_nonincreasing(self):
        cfg = TrainConfig()
        values = [epsilon(e, cfg) for e in range(0, 6000, 7)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestSelectAction:
    def test_greedy(self):
        rng = np.random.default_rng(0)
        assert select_action(np.array([1.0, 3.0, 2.0]), 0.0, rng) == 1
        assert select_action(np.array([5.0, 5.0]), 0.0, rng) == 0

    def test_uniform_exploration(self):
        rng = np.random.default_rng(1)
        h, n = 24, 100_000
        counts = np.bincount([select_action(np.zeros(h), 1.0, rng) for _ in range(n)], minlength=h)
        sigma = math.sqrt(n * (1 / h) * (1 - 1 / h))
        assert np.all(np.abs(counts - n / h) <= 3 * sigma + 1)


class TestTargets:
    def nets(self, seed=0):
        shape = nn.NetworkShape(2, 4, 4, 4)
        online = nn.init_params(shape, np.random.default_rng(seed))
        target = nn.init_params(shape, np.random.default_rng(seed + 1))
        return online, target

    def next_obs(self):
        return nn.EncodedObservation(np.linspace(-1, 1, 6), np.array([[0.2, 0.3, 0.4]]))

    def test_terminal(self):
        online, target = self.nets()
        assert compute_target(20.0, self.next_obs(), True, online, target, 0.99) == 20.0

    def test_same_nets_is_max(self):
        online, _ = self.nets()
        q = nn.q_forward(self.next_obs(), online)
        y = compute_target(1.0, self.next_obs(), False, online, online, 0.9)
        assert y == pytest.approx(1.0 + 0.9 * q.max(), rel=1e-14)

    def test_double_q_uses_online_argmax(self):
        online, target = self.nets(3)
        e = self.next_obs()
        a = int(np.argmax(nn.q_forward(e, online)))
        want = 0.5 + 0.99 * nn.q_forward(e, target)[a]
        assert compute_target(0.5, e, False, online, target, 0.99) == pytest.approx(want, rel=1e-14)

    def test_tabular_fixture(self):
        # Two next states, two actions; the network is rigged so Q is a lookup table on the sign of local[0].
        shape = nn.NetworkShape(2, 1, 2, 2)
        online = {k: np.zeros((i, o)) if k.endswith("W") else np.zeros(o)
                  for name, (i, o) in shape.layer_dims().items() for k in (f"{name}.W", f"{name}.b")}
        # trunk: x = (relu(s), relu(-s)) where s = local[0]
        online["trunk.W"][1, 0], online["trunk.W"][1, 1] = 1.0, -1.0
        online["adv1.W"][...] = np.eye(2)
        online["val1.W"][...] = np.eye(2)
        # state +1: A = (2, 0), V = 1 -> Q = (2, 0); state -1: A = (0, 4), V = 3 -> Q = (1, 5)
        online["adv2.W"][...] = [[2.0, 0.0], [0.0, 4.0]]
        online["val2.W"][...] = [[1.0], [3.0]]
        target = nn.clone_into_target(online)
        target["val2.W"][...] = [[10.0], [20.0]]  # target Q: state +1 -> (11, 9); state -1 -> (18, 22)
        pos = nn.EncodedObservation(np.array([1.0, 0, 0, 0, 0, 0]), np.zeros((0, 3)))
        neg = nn.EncodedObservation(np.array([-1.0, 0, 0, 0, 0, 0]), np.zeros((0, 3)))
        y = compute_targets(np.array([1.0, 2.0]), nn.pack([pos, neg]), np.zeros(2), online, target, 0.5)
        assert y.tolist() == [1.0 + 0.5 * 11.0, 2.0 + 0.5 * 22.0]

    def test_gamma_zero_limit(self):
        online, target = self.nets()
        y = compute_targets(np.array([3.0]), nn.pack([self.next_obs()]), np.zeros(1), online, target, 1e-300)
        assert y[0] == 3.0


class TestTrainer:
    def test_zero_episodes(self):
        result = Trainer(small_env(), TrainConfig(episodes=0, **TINY), seed=0).run()
        assert [e for e, _ in result.checkpoints] == [0] and result.metrics == []

    def test_deterministic_metrics(self):
        cfg = TrainConfig(episodes=3, **TINY)
        a = Trainer(small_env(), cfg, seed=11).run()
        b = Trainer(small_env(), cfg, seed=11).run()
        assert [metrics_line(m) for m in a.metrics] == [metrics_line(m) for m in b.metrics]
        assert set(a.metrics[0]) == {"episode", "success", "steps", "mean_return", "loss_mean", "epsilon",
                                     "wall_ms"}

    def test_target_sync_points(self):
        trainer = Trainer(small_env(), TrainConfig(episodes=2, **TINY), seed=1)
        trainer.collect_episode(0)
        before = nn.clone_into_target(trainer.target)
        for k in range(1, 7):
            trainer.update(0.4)
            if k % 3:
                assert all(np.array_equal(trainer.target[n], before[n]) for n in before)
            else:
                assert all(np.array_equal(trainer.target[n], trainer.online[n]) for n in before)
                before = nn.clone_into_target(trainer.target)

    def test_captured_pursuers_stop_storing(self):
        env = PursuitEnv(load_arena("open"), ScenarioParams(n_pursuers=1, v_e=0.0, evader_mode="stationary",
                                                            max_steps=400))
        trainer = Trainer(env, TrainConfig(episodes=1, eps_start=0.0, eps_end=0.0, **TINY), seed=2)
        stats = trainer.collect_episode(0)
        assert len(trainer.replay) == stats["steps"]
        if stats["success"]:
            assert trainer.replay.dones[len(trainer.replay) - 1] == 1.0

    def test_numeric_failure(self):
        from dacoop.trainer import NumericFailure
        trainer = Trainer(small_env(), TrainConfig(episodes=1, **TINY), seed=3)
        trainer.collect_episode(0)
        trainer.online["val2.b"][...] = np.inf
        with pytest.raises(NumericFailure):
            with np.errstate(all="ignore"):
                trainer.update(0.4)

    def test_seed_ranges_disjoint(self):
        assert episode_seed(5, TRAIN_TAG, 0) != episode_seed(5, EVAL_TAG, 0)


class TestEvaluate:
    def test_empty(self):
        params = nn.init_params(nn.NetworkShape(24, 8, 8, 8), np.random.default_rng(0))
        with pytest.raises(ValueError, match="empty evaluation"):
            evaluate(params, small_env(), 0, 0)

    def test_repeatable(self):
        params = nn.init_params(nn.NetworkShape(24, 8, 8, 8), np.random.default_rng(0))
        a = evaluate(params, small_env(), 3, 4)
        b = evaluate(params, small_env(), 3, 4)
        assert a.success_rate == b.success_rate and [e.steps for e in a.episodes] == [e.steps for e in b.episodes]

    def test_action_count_mismatch(self):
        params = nn.init_params(nn.NetworkShape(5, 8, 8, 8), np.random.default_rng(0))
        with pytest.raises(nn.CheckpointError):
            evaluate(params, small_env(), 1, 0, DacoopAdapter())
