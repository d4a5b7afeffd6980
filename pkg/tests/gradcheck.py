"""Finite-difference check of the analytic network gradients on small random nets."""

import numpy as np

from dacoop import nn
from oracles import finite_difference_grads

SMALL = nn.NetworkShape(n_actions=4, embed=6, trunk=8, stream=5)


def random_batch(rng, batch=3, max_neighbors=3):
    encoded = []
    for _ in range(batch):
        m = int(rng.integers(0, max_neighbors + 1))
        encoded.append(nn.EncodedObservation(rng.uniform(-1, 1, nn.LOCAL_FEATURES),
                                             rng.uniform(-1, 1, (m, nn.NEIGHBOR_FEATURES))))
    return nn.pack(encoded)


def max_relative_error(seed: int, h: float = 1e-5) -> tuple[float, int]:
    rng = np.random.default_rng(seed)
    params = nn.init_params(SMALL, rng)
    for k in params:
        if k.endswith(".b"):
            params[k] = rng.uniform(-0.1, 0.1, params[k].shape)
    batch = random_batch(rng)
    actions = rng.integers(0, SMALL.n_actions, len(batch))
    y = rng.normal(size=len(batch))
    w = rng.uniform(0.2, 1.0, len(batch))
    rows = np.arange(len(batch))

    def loss():
        q, _ = nn.forward(params, batch)
        td = y - q[rows, actions]
        return float(np.sum(w * 0.5 * td * td))

    q, cache = nn.forward(params, batch, cache=True)
    td = y - q[rows, actions]
    d_q = np.zeros_like(q)
    d_q[rows, actions] = -w * td
    analytic = nn.backward(params, cache, d_q)
    numeric = finite_difference_grads(loss, params, h)
    worst = 0.0
    for name in params:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-7)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst, SMALL.n_weights()
