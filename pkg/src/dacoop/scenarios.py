"""Single-agent APF rollouts against a fixed target, used to exercise
wall following in concave layouts."""

from __future__ import annotations

import math
from dataclasses import dataclass

from dacoop.apf import ApfParams, local_heading, wrap_angle
from dacoop.env import PursuitEnv, ScenarioParams
from dacoop.geometry import Arena, Vec2


@dataclass
class Rollout:
    positions: list[Vec2]
    success: bool
    steps: int

    def displacement(self, start: int, end: int) -> float:
        """Straight-line distance between the positions at two step indices."""
        return math.dist(self.positions[start], self.positions[end])

    def path_length(self, start: int, end: int) -> float:
        return sum(math.dist(a, b) for a, b in zip(self.positions[start:end], self.positions[start + 1:end + 1]))


def stationary_target_params(max_steps: int = 1000) -> ScenarioParams:
    return ScenarioParams(n_pursuers=1, v_e=0.0, evader_mode="stationary", max_steps=max_steps)


def apf_rollout(arena: Arena, params: ApfParams, wall_following: bool = True, max_steps: int = 1000,
                seed: int = 0) -> Rollout:
    """One pursuer steered purely by the APF rule toward a motionless target.

    ``positions`` keeps ``max_steps + 1`` entries; after capture the agent
    holds still, so the list is padded with its final position.
    """
    env = PursuitEnv(arena, stationary_target_params(max_steps))
    state, obs = env.reset(seed)
    positions = [state.pursuers[0].position]
    while not state.done:
        agent = state.pursuers[0]
        heading = wrap_angle(agent.heading + local_heading(obs[0], params, wall_following=wall_following))
        result = env.step(state, [heading])
        state, obs = result.state, result.observations
        positions.append(state.pursuers[0].position)
    steps = state.t
    positions += [positions[-1]] * (max_steps + 1 - len(positions))
    return Rollout(positions, state.success, steps)
