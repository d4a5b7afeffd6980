"""Independent D3QN learners with a shared network and prioritized replay.

Every uncaptured pursuer encodes its own observation, picks an action from
the shared Q-network, and stores its own transition. After each episode the
network is updated ``updates_per_episode`` times from the replay buffer.
What an action *means* is delegated to an adapter: DACOOP maps the index to
an APF parameter pair, the vanilla baseline to an absolute heading.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from dacoop import nn
from dacoop.apf import ApfParams, local_heading, wrap_angle
from dacoop.env import EnvState, Observation, PursuitEnv
from dacoop.replay import PrioritizedReplay

log = logging.getLogger(__name__)

ETA_VALUES = (0.0, 1.5e8, 3e8)
LAMBDA_VALUES = (30.0, 100.0, 250.0, 500.0, 750.0, 1000.0, 2000.0, 3000.0)

# Seed-sequence tags keeping training and evaluation episodes disjoint.
TRAIN_TAG = 0
EVAL_TAG = 1


class NumericFailure(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ActionGrid:
    pairs: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("empty action grid")
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("action grid pairs must be unique")

    @classmethod
    def product(cls, etas: Sequence[float] = ETA_VALUES, lambdas: Sequence[float] = LAMBDA_VALUES) -> "ActionGrid":
        return cls(tuple((float(e), float(l)) for e in etas for l in lambdas))

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, k: int) -> tuple[float, float]:
        return self.pairs[k]

    def index(self, pair: tuple[float, float]) -> int:
        return self.pairs.index((float(pair[0]), float(pair[1])))


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 1500
    gamma: float = 0.99
    lr: float = 3e-4
    eps_start: float = 1.0
    eps_end: float = 0.01
    eps_decay_episodes: int = 4000
    updates_per_episode: int = 1000
    target_sync: int = 1000
    batch_size: int = 64
    replay_capacity: int = 2 ** 17
    learning_starts: int = 64
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    per_epsilon: float = 1e-3
    embed_units: int = 128
    trunk_units: int = 128
    stream_units: int = 64
    checkpoint_every: int = 0
    eval_every: int = 0
    eval_episodes: int = 0
    record_wall_time: bool = False

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.eps_end <= self.eps_start:
            raise ValueError("eps_end must not exceed eps_start")
        if self.episodes < 0 or self.updates_per_episode < 0:
            raise ValueError("episodes and updates_per_episode must be non-negative")
        if self.eps_decay_episodes < 1 or self.target_sync < 1 or self.batch_size < 1:
            raise ValueError("eps_decay_episodes, target_sync and batch_size must be positive")
        cap = self.replay_capacity
        if cap < 1 or cap & (cap - 1):
            raise ValueError("replay_capacity must be a power of two")
        if self.lr <= 0 or self.per_alpha < 0 or self.per_epsilon <= 0:
            raise ValueError("lr and per_epsilon must be positive, per_alpha non-negative")

    def network_shape(self, n_actions: int) -> nn.NetworkShape:
        return nn.NetworkShape(n_actions, self.embed_units, self.trunk_units, self.stream_units)

    def beta(self, episode: int) -> float:
        frac = min(1.0, episode / max(1, self.episodes - 1))
        return self.per_beta_start + (self.per_beta_end - self.per_beta_start) * frac


def epsilon(episode: int, config: TrainConfig = TrainConfig()) -> float:
    span = config.eps_start - config.eps_end
    return max(config.eps_end, config.eps_start - span * episode / config.eps_decay_episodes)


def select_action(q_values: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties resolve to the lowest index."""
    explore = rng.random() < eps
    if explore:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def compute_targets(rewards: np.ndarray, next_obs: nn.Batch, dones: np.ndarray,
                    online: nn.Params, target: nn.Params, gamma: float) -> np.ndarray:
    """Double-Q targets: the online net picks a', the target net values it."""
    q_next_online, _ = nn.forward(online, next_obs)
    q_next_target, _ = nn.forward(target, next_obs)
    best = np.argmax(q_next_online, axis=1)
    bootstrap = q_next_target[np.arange(len(best)), best]
    return rewards + gamma * (1.0 - dones) * bootstrap


def compute_target(reward: float, next_obs: nn.EncodedObservation, done: bool,
                   online: nn.Params, target: nn.Params, gamma: float) -> float:
    if done:
        return float(reward)
    y = compute_targets(np.array([reward]), nn.pack([next_obs]), np.array([0.0]), online, target, gamma)
    return float(y[0])


# -- action adapters -------------------------------------------------------------------

class ActionAdapter(Protocol):
    name: str

    @property
    def n_actions(self) -> int: ...

    def heading(self, obs: Observation, current_heading: float, action: int) -> float: ...

    def extra_reward(self, prev_obs: Observation, obs: Observation) -> float: ...


class DacoopAdapter:
    """Action index -> (eta, lambda) -> APF heading with wall following."""

    name = "dacoop"

    def __init__(self, grid: ActionGrid | None = None, base: ApfParams = ApfParams()):
        self.grid = grid or ActionGrid.product()
        self.params = [ApfParams(e, l, base.rho0, base.b_threshold) for e, l in self.grid.pairs]

    @property
    def n_actions(self) -> int:
        return len(self.grid)

    def heading(self, obs: Observation, current_heading: float, action: int) -> float:
        return wrap_angle(current_heading + local_heading(obs, self.params[action]))

    def extra_reward(self, prev_obs: Observation, obs: Observation) -> float:
        return 0.0


# -- policies and rollouts ------------------------------------------------------------

Policy = Callable[[EnvState, Sequence[Observation]], list]


def encoder_for(env: PursuitEnv) -> Callable[[Observation], nn.EncodedObservation]:
    d_sense, diag = env.params.d_sense, env.arena.diagonal

    def encode(obs: Observation) -> nn.EncodedObservation:
        return nn.encode_observation(obs, d_sense, diag)

    return encode


class QPolicy:
    """Greedy (or epsilon-greedy) pursuit policy from a Q-network and an adapter."""

    def __init__(self, params: nn.Params, adapter: ActionAdapter, env: PursuitEnv, eps: float = 0.0,
                 rng: np.random.Generator | None = None):
        self.params = params
        self.adapter = adapter
        self.encode = encoder_for(env)
        self.eps = eps
        self.rng = rng or np.random.default_rng(0)
        self.last_actions: dict[int, int] = {}

    def __call__(self, state: EnvState, observations: Sequence[Observation]) -> list:
        active = [i for i, a in enumerate(state.pursuers) if not a.captured]
        headings: list = [None] * len(state.pursuers)
        if not active:
            return headings
        q, _ = nn.forward(self.params, nn.pack([self.encode(observations[i]) for i in active]))
        self.last_actions = {}
        for row, i in enumerate(active):
            a = select_action(q[row], self.eps, self.rng)
            self.last_actions[i] = a
            headings[i] = self.adapter.heading(observations[i], state.pursuers[i].heading, a)
        return headings


@dataclass
class EpisodeStats:
    seed: list
    success: bool
    steps: int
    captures: int


def episode_seed(seed: int, tag: int, k: int) -> list[int]:
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, tag, k]


def run_episode(env: PursuitEnv, policy: Policy, seed, recorder=None) -> EpisodeStats:
    state, obs = env.reset(seed)
    if recorder is not None:
        recorder.record(state)
    while not state.done:
        result = env.step(state, policy(state, obs))
        state, obs = result.state, result.observations
        if recorder is not None:
            recorder.record(state, result.rewards)
    return EpisodeStats(list(seed) if isinstance(seed, (list, tuple)) else seed, state.success, state.t,
                        sum(a.captured for a in state.pursuers))


@dataclass
class EvalResult:
    success_rate: float
    episodes: list[EpisodeStats]

    def summary(self) -> dict:
        n = len(self.episodes)
        return {
            "episodes": n,
            "success_rate": self.success_rate,
            "mean_steps": sum(e.steps for e in self.episodes) / n,
            "mean_captures": sum(e.captures for e in self.episodes) / n,
        }


def evaluate_policy(env: PursuitEnv, policy: Policy, n_episodes: int, seed: int) -> EvalResult:
    if n_episodes <= 0:
        raise ValueError("empty evaluation")
    stats = [run_episode(env, policy, episode_seed(seed, EVAL_TAG, k)) for k in range(n_episodes)]
    return EvalResult(sum(s.success for s in stats) / n_episodes, stats)


def evaluate(params: nn.Params, env: PursuitEnv, n_episodes: int, seed: int,
             adapter: ActionAdapter | None = None) -> EvalResult:
    """Greedy rollouts of a Q-network policy over a disjoint evaluation seed range."""
    adapter = adapter or DacoopAdapter()
    if params["adv2.W"].shape[1] != adapter.n_actions:
        raise nn.CheckpointError(f"network has {params['adv2.W'].shape[1]} actions, adapter expects {adapter.n_actions}")
    return evaluate_policy(env, QPolicy(params, adapter, env), n_episodes, seed)


# -- training ------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: nn.Params
    metrics: list[dict] = field(default_factory=list)
    checkpoints: list[tuple[int, bytes]] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)


class Trainer:
    def __init__(self, env: PursuitEnv, config: TrainConfig, seed: int, adapter: ActionAdapter | None = None):
        self.env = env
        self.config = config
        self.seed = seed
        self.adapter = adapter or DacoopAdapter()
        self.encode = encoder_for(env)
        init_ss, act_ss, replay_ss = np.random.SeedSequence(seed).spawn(3)
        self.act_rng = np.random.default_rng(act_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        shape = config.network_shape(self.adapter.n_actions)
        self.online = nn.init_params(shape, np.random.default_rng(init_ss))
        self.target = nn.clone_into_target(self.online)
        self.adam = nn.Adam(self.online, lr=config.lr)
        self.replay = PrioritizedReplay(config.replay_capacity, max(0, env.params.n_pursuers - 1),
                                        config.per_alpha, config.per_epsilon)
        self.n_updates = 0

    def meta(self, episode: int) -> dict:
        return {"method": self.adapter.name, "n_actions": self.adapter.n_actions, "episode": episode,
                "seed": self.seed}

    def collect_episode(self, episode: int) -> dict:
        env, cfg = self.env, self.config
        eps = epsilon(episode, cfg)
        state, obs = env.reset(episode_seed(self.seed, TRAIN_TAG, episode))
        enc = [self.encode(o) for o in obs]
        n = env.params.n_pursuers
        returns = [0.0] * n
        while not state.done:
            active = [i for i, a in enumerate(state.pursuers) if not a.captured]
            q, _ = nn.forward(self.online, nn.pack([enc[i] for i in active]))
            actions = {}
            headings: list = [None] * n
            for row, i in enumerate(active):
                a = select_action(q[row], eps, self.act_rng)
                actions[i] = a
                headings[i] = self.adapter.heading(obs[i], state.pursuers[i].heading, a)
            result = env.step(state, headings)
            new_enc = [self.encode(o) for o in result.observations]
            for i in active:
                r = result.rewards[i].total + self.adapter.extra_reward(obs[i], result.observations[i])
                returns[i] += r
                terminal = result.state.pursuers[i].captured or result.state.success
                self.replay.add(enc[i], actions[i], r, new_enc[i], terminal)
            state, obs, enc = result.state, result.observations, new_enc
        return {"success": state.success, "steps": state.t, "mean_return": sum(returns) / n, "epsilon": eps}

    def update(self, beta: float) -> float:
        cfg = self.config
        batch = self.replay.sample(cfg.batch_size, beta, self.replay_rng)
        try:
            y = compute_targets(batch.rewards, batch.next_obs, batch.dones, self.online, self.target, cfg.gamma)
            q, cache = nn.forward(self.online, batch.obs, cache=True)
        except FloatingPointError as exc:
            raise NumericFailure(str(exc), {"update": self.n_updates}) from exc
        rows = np.arange(len(y))
        td = y - q[rows, batch.actions]
        w = batch.is_weights
        loss = float(np.mean(w * 0.5 * td * td))
        if not math.isfinite(loss):
            raise NumericFailure("non-finite loss", {"update": self.n_updates, "loss": loss,
                                                     "max_abs_q": float(np.nanmax(np.abs(q)))})
        d_q = np.zeros_like(q)
        d_q[rows, batch.actions] = -w * td / len(y)
        grads = nn.backward(self.online, cache, d_q)
        self.adam.step(self.online, grads)
        self.replay.update_priorities(batch.indices, td)
        self.n_updates += 1
        if self.n_updates % cfg.target_sync == 0:
            self.target = nn.clone_into_target(self.online)
        return loss

    def train_episode(self, episode: int) -> dict:
        cfg = self.config
        t0 = time.perf_counter()
        stats = self.collect_episode(episode)
        losses = []
        if len(self.replay) >= max(cfg.batch_size, cfg.learning_starts):
            beta = cfg.beta(episode)
            for _ in range(cfg.updates_per_episode):
                losses.append(self.update(beta))
        wall_ms = round((time.perf_counter() - t0) * 1000.0, 3) if cfg.record_wall_time else None
        return {
            "episode": episode,
            "success": bool(stats["success"]),
            "steps": int(stats["steps"]),
            "mean_return": float(stats["mean_return"]),
            "loss_mean": float(np.mean(losses)) if losses else None,
            "epsilon": float(stats["epsilon"]),
            "wall_ms": wall_ms,
        }

    def greedy_success(self, n_episodes: int) -> float:
        return evaluate(self.online, self.env, n_episodes, self.seed, self.adapter).success_rate

    def run(self, on_metrics: Callable[[dict], None] | None = None,
            on_checkpoint: Callable[[int, bytes], None] | None = None,
            on_eval: Callable[[int, float], None] | None = None) -> TrainResult:
        cfg = self.config
        result = TrainResult(self.online)
        ckpt = nn.dumps_checkpoint(self.online, self.meta(0))
        result.checkpoints.append((0, ckpt))
        if on_checkpoint:
            on_checkpoint(0, ckpt)
        for episode in range(cfg.episodes):
            metrics = self.train_episode(episode)
            result.metrics.append(metrics)
            if on_metrics:
                on_metrics(metrics)
            done = episode + 1
            if cfg.eval_every and cfg.eval_episodes and (done % cfg.eval_every == 0 or done == cfg.episodes):
                rate = self.greedy_success(cfg.eval_episodes)
                result.evals.append((done, rate))
                log.info("episode %d greedy success %.3f", done, rate)
                if on_eval:
                    on_eval(done, rate)
            if cfg.checkpoint_every and (done % cfg.checkpoint_every == 0 or done == cfg.episodes):
                ckpt = nn.dumps_checkpoint(self.online, self.meta(done))
                result.checkpoints.append((done, ckpt))
                if on_checkpoint:
                    on_checkpoint(done, ckpt)
        result.params = self.online
        return result


def train(env: PursuitEnv, config: TrainConfig, seed: int, adapter: ActionAdapter | None = None,
          **callbacks) -> TrainResult:
    return Trainer(env, config, seed, adapter).run(**callbacks)


def metrics_line(metrics: dict) -> str:
    return json.dumps(metrics, sort_keys=False, separators=(", ", ": "))
