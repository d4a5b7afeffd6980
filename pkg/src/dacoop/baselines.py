"""Comparison methods: vanilla D3QN over absolute headings, and APF with
distance-scheduled parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from dacoop.apf import ApfParams, local_heading, wrap_angle
from dacoop.env import EnvState, Observation, PursuitEnv
from dacoop.trainer import ActionGrid, DacoopAdapter, evaluate_policy, select_action

METHODS = ("dacoop", "vanilla_d3qn", "modified_apf")
N_HEADINGS = 24
LAMBDA_MIN = 1.0


@dataclass(frozen=True)
class HeadingActionGrid:
    n: int = N_HEADINGS

    @property
    def headings(self) -> tuple[float, ...]:
        return tuple(wrap_angle(2 * math.pi * k / self.n) for k in range(self.n))

    def __len__(self):
        return self.n

    def __getitem__(self, k: int) -> float:
        return wrap_angle(2 * math.pi * k / self.n)


def vanilla_reward_bonus(d_e_prev: float, d_e_now: float) -> float:
    """Approach bonus in millimetres: 30 mm closer earns 0.15."""
    return (d_e_prev - d_e_now) / 200.0


def vanilla_step_policy(q_values: np.ndarray, eps: float, rng: np.random.Generator,
                        grid: HeadingActionGrid = HeadingActionGrid()) -> float:
    return grid[select_action(q_values, eps, rng)]


class VanillaAdapter:
    """Action index -> absolute heading, no APF layer; adds the approach bonus."""

    name = "vanilla_d3qn"

    def __init__(self, grid: HeadingActionGrid = HeadingActionGrid()):
        self.grid = grid

    @property
    def n_actions(self) -> int:
        return len(self.grid)

    def heading(self, obs: Observation, current_heading: float, action: int) -> float:
        return self.grid[action]

    def extra_reward(self, prev_obs: Observation, obs: Observation) -> float:
        return vanilla_reward_bonus(prev_obs.d_e, obs.d_e)


def adapter_for(method: str, base: ApfParams = ApfParams()):
    if method == "dacoop":
        return DacoopAdapter(base=base)
    if method == "vanilla_d3qn":
        return VanillaAdapter()
    raise ValueError(f"method {method!r} has no learned policy")


# -- modified APF ----------------------------------------------------------------------

@dataclass(frozen=True)
class ApfSchedule:
    eta0: float
    lambda0: float
    d_ref: float = 2000.0
    lambda_min: float = LAMBDA_MIN

    def __post_init__(self):
        if self.d_ref <= 0 or self.lambda_min <= 0 or self.eta0 < 0 or self.lambda0 <= 0:
            raise ValueError(f"invalid schedule {self}")


def scheduled_params(d_e: float, schedule: ApfSchedule) -> tuple[float, float]:
    """Linear ramp of (eta, lambda) from their initial values down to zero as the evader gets closer.

    Lambda is floored at ``lambda_min`` so the parameter pair stays valid.
    """
    factor = min(max(d_e / schedule.d_ref, 0.0), 1.0)
    return schedule.eta0 * factor, max(schedule.lambda_min, schedule.lambda0 * factor)


class ApfPolicy:
    """Rule-based pursuer: fixed (eta, lambda), or scheduled on evader distance."""

    def __init__(self, schedule: ApfSchedule, base: ApfParams = ApfParams(), scheduled: bool = True):
        self.schedule = schedule
        self.base = base
        self.scheduled = scheduled
        self.fixed = ApfParams(schedule.eta0, schedule.lambda0, base.rho0, base.b_threshold)

    def params_for(self, obs: Observation) -> ApfParams:
        if not self.scheduled:
            return self.fixed
        eta, lam = scheduled_params(obs.d_e, self.schedule)
        return ApfParams(eta, lam, self.base.rho0, self.base.b_threshold)

    def __call__(self, state: EnvState, observations: Sequence[Observation]) -> list:
        headings: list = [None] * len(state.pursuers)
        for i, agent in enumerate(state.pursuers):
            if not agent.captured:
                headings[i] = wrap_angle(agent.heading + local_heading(observations[i], self.params_for(observations[i])))
        return headings


@dataclass
class GridSearchResult:
    schedule: ApfSchedule
    index: int
    rates: list[float]


def grid_search_best_init(env: PursuitEnv, candidates: Sequence[tuple[float, float]] | ActionGrid,
                          episodes_per_pair: int, seed: int, scheduled: bool = True,
                          base: ApfParams = ApfParams(), d_ref: float = 2000.0) -> GridSearchResult:
    """Evaluate every candidate (eta0, lambda0) on the same episodes; ties go to the lower index."""
    pairs = list(candidates.pairs if isinstance(candidates, ActionGrid) else candidates)
    if not pairs:
        raise ValueError("no candidate pairs")
    rates = []
    for eta0, lambda0 in pairs:
        policy = ApfPolicy(ApfSchedule(eta0, lambda0, d_ref), base, scheduled)
        rates.append(evaluate_policy(env, policy, episodes_per_pair, seed).success_rate)
    best = int(np.argmax(rates))
    eta0, lambda0 = pairs[best]
    return GridSearchResult(ApfSchedule(eta0, lambda0, d_ref), best, rates)
