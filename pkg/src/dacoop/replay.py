"""Proportional prioritized experience replay backed by an array sum tree."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dacoop.nn import LOCAL_FEATURES, NEIGHBOR_FEATURES, Batch, EncodedObservation


class ReplayUnderfilled(RuntimeError):
    pass


class SumTree:
    """Binary sum tree over ``capacity`` leaves (capacity must be a power of two).

    Node 1 is the root; leaves live at ``capacity .. 2*capacity - 1``.
    Internal nodes are recomputed from their children on every update, so
    they never accumulate drift.
    """

    def __init__(self, capacity: int):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError("capacity must be a power of two")
        self.capacity = capacity
        self.depth = capacity.bit_length() - 1
        self.tree = np.zeros(2 * capacity)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def leaves(self) -> np.ndarray:
        return self.tree[self.capacity:]

    def update(self, indices, values) -> None:
        if np.ndim(indices) == 0:
            self._update_one(int(indices), float(values))
            return
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if np.any(values < 0) or not np.isfinite(values).all():
            raise ValueError("leaf values must be finite and non-negative")
        # later duplicates win, as with sequential assignment
        nodes = indices + self.capacity
        self.tree[nodes] = values
        nodes = np.unique(nodes // 2)
        while nodes.size and nodes[0] >= 1:
            self.tree[nodes] = self.tree[2 * nodes] + self.tree[2 * nodes + 1]
            if nodes[0] == 1:
                break
            nodes = np.unique(nodes // 2)

    def _update_one(self, index: int, value: float) -> None:
        if not (value >= 0 and np.isfinite(value)):
            raise ValueError("leaf values must be finite and non-negative")
        tree = self.tree
        node = index + self.capacity
        tree[node] = value
        node //= 2
        while node >= 1:
            tree[node] = tree[2 * node] + tree[2 * node + 1]
            node //= 2

    def rebuild(self) -> None:
        for level in range(self.depth - 1, -1, -1):
            lo, hi = 1 << level, 1 << (level + 1)
            self.tree[lo:hi] = self.tree[2 * lo:2 * hi:2] + self.tree[2 * lo + 1:2 * hi:2]

    def find(self, values) -> np.ndarray:
        """Leaf indices whose cumulative-sum interval contains each value."""
        v = np.array(values, dtype=float, ndmin=1)
        idx = np.ones(v.shape, dtype=np.int64)
        for _ in range(self.depth):
            left = 2 * idx
            left_sum = self.tree[left]
            go_right = v >= left_sum
            v = np.where(go_right, v - left_sum, v)
            idx = np.where(go_right, left + 1, left)
        return idx - self.capacity

    def check(self, tol: float = 1e-9) -> bool:
        internal = np.arange(1, self.capacity)
        return bool(np.all(np.abs(self.tree[internal] - self.tree[2 * internal] - self.tree[2 * internal + 1]) <= tol))


@dataclass
class SampledBatch:
    obs: Batch
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: Batch
    dones: np.ndarray
    indices: np.ndarray
    is_weights: np.ndarray


class PrioritizedReplay:
    """FIFO ring buffer of transitions with proportional prioritized sampling.

    Leaf values are ``priority ** alpha``; new transitions enter at the
    current maximum leaf value so each is replayed at least once.
    """

    def __init__(self, capacity: int, max_neighbors: int, alpha: float = 0.6, epsilon: float = 1e-3):
        self.tree = SumTree(capacity)
        self.capacity = capacity
        self.alpha = alpha
        self.epsilon = epsilon
        self.max_neighbors = max_neighbors
        self.size = 0
        self.cursor = 0
        self.inserted = 0
        self.max_leaf = 1.0
        m = max_neighbors
        self.local = np.zeros((capacity, LOCAL_FEATURES))
        self.nbr = np.zeros((capacity, m, NEIGHBOR_FEATURES))
        self.mask = np.zeros((capacity, m))
        self.next_local = np.zeros((capacity, LOCAL_FEATURES))
        self.next_nbr = np.zeros((capacity, m, NEIGHBOR_FEATURES))
        self.next_mask = np.zeros((capacity, m))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.order = np.full(capacity, -1, dtype=np.int64)

    def __len__(self):
        return self.size

    def _store(self, local, nbr, mask, k, e: EncodedObservation):
        n = e.neighbors.shape[0]
        if n > self.max_neighbors:
            raise ValueError(f"{n} neighbours exceed buffer width {self.max_neighbors}")
        local[k] = e.local
        nbr[k] = 0.0
        mask[k] = 0.0
        nbr[k, :n] = e.neighbors
        mask[k, :n] = 1.0

    def add(self, obs: EncodedObservation, action: int, reward: float, next_obs: EncodedObservation,
            done: bool) -> int:
        k = self.cursor
        self._store(self.local, self.nbr, self.mask, k, obs)
        self._store(self.next_local, self.next_nbr, self.next_mask, k, next_obs)
        self.actions[k] = action
        self.rewards[k] = reward
        self.dones[k] = float(done)
        self.order[k] = self.inserted
        self.tree.update(k, self.max_leaf)
        self.inserted += 1
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return k

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0 or self.size < batch_size:
            raise ReplayUnderfilled(f"replay underfilled: {self.size} transitions, batch of {batch_size} requested")
        total = self.tree.total
        segment = total / batch_size
        u = (np.arange(batch_size) + rng.random(batch_size)) * segment
        idx = self.tree.find(np.minimum(u, np.nextafter(total, 0.0)))
        return np.minimum(idx, self.size - 1)

    def sample(self, batch_size: int, beta: float, rng: np.random.Generator) -> SampledBatch:
        idx = self.sample_indices(batch_size, rng)
        probs = self.tree.leaves()[idx] / self.tree.total
        weights = (self.size * probs) ** (-beta)
        weights /= weights.max()
        return SampledBatch(
            obs=Batch(self.nbr[idx], self.mask[idx], self.local[idx]),
            actions=self.actions[idx].copy(),
            rewards=self.rewards[idx].copy(),
            next_obs=Batch(self.next_nbr[idx], self.next_mask[idx], self.next_local[idx]),
            dones=self.dones[idx].copy(),
            indices=idx,
            is_weights=weights,
        )

    def update_priorities(self, indices, td_errors) -> None:
        leaf = (np.abs(np.asarray(td_errors, dtype=float)) + self.epsilon) ** self.alpha
        self.tree.update(indices, leaf)
        self.max_leaf = max(self.max_leaf, float(leaf.max()))

    def set_priorities(self, indices, priorities) -> None:
        """Set raw priorities (before the alpha exponent)."""
        leaf = np.asarray(priorities, dtype=float) ** self.alpha
        self.tree.update(indices, leaf)
        self.max_leaf = max(self.max_leaf, float(leaf.max()))


def sample_batch(replay: PrioritizedReplay, batch_size: int, beta: float, rng: np.random.Generator) -> SampledBatch:
    return replay.sample(batch_size, beta, rng)
