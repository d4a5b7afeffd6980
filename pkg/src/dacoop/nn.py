"""Dueling Q-network with a mean-pooled neighbour embedding, in plain numpy.

Layout::

    neighbours (M x 3) --embed+ReLU--> mean --+
                                              +--concat--> trunk+ReLU --+--> adv1+ReLU --> adv2 (H)
    local features (6) -----------------------+                         +--> val1+ReLU --> val2 (1)

    Q = V + A - mean(A)

Everything runs in float64 on padded batches: ``nbr`` has shape (B, M, F),
``mask`` (B, M) marks real neighbours, ``local`` is (B, L). A row with no
neighbours gets a zero embedding.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

NEIGHBOR_FEATURES = 3
LOCAL_FEATURES = 6
MAGIC = b"DACOOP1\n"

LAYER_ORDER = ("embed", "trunk", "adv1", "adv2", "val1", "val2")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkShape:
    n_actions: int
    embed: int = 128
    trunk: int = 128
    stream: int = 64
    neighbor_features: int = NEIGHBOR_FEATURES
    local_features: int = LOCAL_FEATURES

    def layer_dims(self) -> dict[str, tuple[int, int]]:
        return {
            "embed": (self.neighbor_features, self.embed),
            "trunk": (self.embed + self.local_features, self.trunk),
            "adv1": (self.trunk, self.stream),
            "adv2": (self.stream, self.n_actions),
            "val1": (self.trunk, self.stream),
            "val2": (self.stream, 1),
        }

    def n_weights(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims().values())


Params = dict[str, np.ndarray]


def init_params(shape: NetworkShape, rng: np.random.Generator) -> Params:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for name, (fan_in, fan_out) in shape.layer_dims().items():
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}.W"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[f"{name}.b"] = np.zeros(fan_out)
    return params


def shape_of(params: Params) -> NetworkShape:
    return NetworkShape(
        n_actions=params["adv2.W"].shape[1],
        embed=params["embed.W"].shape[1],
        trunk=params["trunk.W"].shape[1],
        stream=params["adv1.W"].shape[1],
        neighbor_features=params["embed.W"].shape[0],
        local_features=params["trunk.W"].shape[0] - params["embed.W"].shape[1],
    )


def clone_into_target(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


# -- observation encoding -------------------------------------------------------

@dataclass(frozen=True)
class EncodedObservation:
    local: np.ndarray       # (LOCAL_FEATURES,)
    neighbors: np.ndarray   # (M, NEIGHBOR_FEATURES), ascending distance


def encode_observation(obs, d_sense: float, diagonal: float) -> EncodedObservation:
    """Bounded, wrap-free features: distances scaled into [0, 1], bearings as (sin, cos)."""
    local = np.array([
        min(obs.d_o / d_sense, 1.0), math.sin(obs.phi_o), math.cos(obs.phi_o),
        min(obs.d_e / diagonal, 1.0), math.sin(obs.phi_e), math.cos(obs.phi_e),
    ])
    nbrs = np.array([(min(d / d_sense, 1.0), math.sin(phi), math.cos(phi)) for d, phi in obs.neighbors],
                    dtype=float).reshape(-1, NEIGHBOR_FEATURES)
    return EncodedObservation(local, nbrs)


@dataclass
class Batch:
    nbr: np.ndarray
    mask: np.ndarray
    local: np.ndarray

    def __len__(self):
        return self.local.shape[0]


def pack(encoded: Sequence[EncodedObservation], max_neighbors: int | None = None) -> Batch:
    m = max((e.neighbors.shape[0] for e in encoded), default=0)
    if max_neighbors is not None:
        m = max(m, max_neighbors)
    b = len(encoded)
    f = encoded[0].neighbors.shape[1] if encoded else NEIGHBOR_FEATURES
    nbr = np.zeros((b, m, f))
    mask = np.zeros((b, m))
    local = np.empty((b, encoded[0].local.shape[0] if encoded else LOCAL_FEATURES))
    for i, e in enumerate(encoded):
        k = e.neighbors.shape[0]
        nbr[i, :k] = e.neighbors
        mask[i, :k] = 1.0
        local[i] = e.local
    return Batch(nbr, mask, local)


# -- forward / backward -----------------------------------------------------------

def _pool(h: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    count = mask.sum(axis=1)
    inv = 1.0 / np.maximum(count, 1.0)
    pooled = (h * mask[:, :, None]).sum(axis=1) * inv[:, None]
    return pooled, inv


def embed(neighbors: Sequence[Sequence[float]] | np.ndarray, params: Params) -> np.ndarray:
    """Mean of ReLU(W f + b) over a neighbour set; zero vector for an empty set.

    Rows are sorted lexicographically first, so any permutation of the same
    set produces bitwise-identical output.
    """
    W, b = params["embed.W"], params["embed.b"]
    feats = np.asarray(neighbors, dtype=float)
    if feats.size == 0:
        return np.zeros(W.shape[1])
    if feats.ndim != 2 or feats.shape[1] != W.shape[0]:
        raise ValueError(f"neighbour features must have width {W.shape[0]}, got shape {feats.shape}")
    feats = feats[np.lexsort(feats.T[::-1])]
    # row by row, so the kernel (and rounding) never depends on the set size
    total = np.zeros(W.shape[1])
    for f in feats:
        total += np.maximum(f @ W + b, 0.0)
    return total * (1.0 / feats.shape[0])


def forward(params: Params, batch: Batch, cache: bool = False):
    """Q-values for a batch; returns ``(Q, cache_dict_or_None)``."""
    nbr, mask, local = batch.nbr, batch.mask, batch.local
    if nbr.shape[1]:
        z_e = nbr @ params["embed.W"] + params["embed.b"]
        h_e = np.maximum(z_e, 0.0)
        pooled, inv = _pool(h_e, mask)
    else:
        z_e = h_e = None
        pooled = np.zeros((local.shape[0], params["embed.W"].shape[1]))
        inv = np.ones(local.shape[0])
    x0 = np.concatenate([pooled, local], axis=1)
    z_t = x0 @ params["trunk.W"] + params["trunk.b"]
    x = np.maximum(z_t, 0.0)
    z_a = x @ params["adv1.W"] + params["adv1.b"]
    a1 = np.maximum(z_a, 0.0)
    adv = a1 @ params["adv2.W"] + params["adv2.b"]
    z_v = x @ params["val1.W"] + params["val1.b"]
    v1 = np.maximum(z_v, 0.0)
    val = v1 @ params["val2.W"] + params["val2.b"]
    q = val + adv - adv.mean(axis=1, keepdims=True)
    if not np.isfinite(q).all():
        layers = (h_e, x, a1, adv, v1, val)
        bad = next((k for k, arr in enumerate(layers) if arr is not None and not np.isfinite(arr).all()), len(layers))
        raise FloatingPointError(f"numeric overflow at layer {bad} ({(LAYER_ORDER + ('q',))[bad]})")
    if not cache:
        return q, None
    return q, dict(batch=batch, z_e=z_e, h_e=h_e, inv=inv, x0=x0, z_t=z_t, x=x, z_a=z_a, a1=a1, z_v=z_v, v1=v1)


def backward(params: Params, cache: dict, d_q: np.ndarray) -> Params:
    """Gradients of a scalar loss given dLoss/dQ of shape (B, H)."""
    grads = {}
    n_actions = d_q.shape[1]
    d_adv = d_q - d_q.sum(axis=1, keepdims=True) / n_actions
    d_val = d_q.sum(axis=1, keepdims=True)

    grads["adv2.W"] = cache["a1"].T @ d_adv
    grads["adv2.b"] = d_adv.sum(axis=0)
    d_za = (d_adv @ params["adv2.W"].T) * (cache["z_a"] > 0)
    grads["adv1.W"] = cache["x"].T @ d_za
    grads["adv1.b"] = d_za.sum(axis=0)

    grads["val2.W"] = cache["v1"].T @ d_val
    grads["val2.b"] = d_val.sum(axis=0)
    d_zv = (d_val @ params["val2.W"].T) * (cache["z_v"] > 0)
    grads["val1.W"] = cache["x"].T @ d_zv
    grads["val1.b"] = d_zv.sum(axis=0)

    d_x = d_za @ params["adv1.W"].T + d_zv @ params["val1.W"].T
    d_zt = d_x * (cache["z_t"] > 0)
    grads["trunk.W"] = cache["x0"].T @ d_zt
    grads["trunk.b"] = d_zt.sum(axis=0)

    embed_width = params["embed.W"].shape[1]
    batch = cache["batch"]
    if cache["h_e"] is None:
        grads["embed.W"] = np.zeros_like(params["embed.W"])
        grads["embed.b"] = np.zeros_like(params["embed.b"])
    else:
        d_pooled = (d_zt @ params["trunk.W"][:embed_width].T) * cache["inv"][:, None]
        d_ze = d_pooled[:, None, :] * batch.mask[:, :, None] * (cache["z_e"] > 0)
        f = batch.nbr.shape[2]
        grads["embed.W"] = batch.nbr.reshape(-1, f).T @ d_ze.reshape(-1, embed_width)
        grads["embed.b"] = d_ze.sum(axis=(0, 1))
    return grads


def q_forward(encoded: EncodedObservation, params: Params) -> np.ndarray:
    return forward(params, pack([encoded]))[0][0]


def q_backward(encoded: EncodedObservation, params: Params, action_index: int, td_error: float,
               is_weight: float = 1.0) -> Params:
    """Gradients of ``is_weight * 0.5 * td_error**2`` where ``td_error = y - Q(s, a)``, y held fixed."""
    _, cache = forward(params, pack([encoded]), cache=True)
    d_q = np.zeros((1, params["adv2.W"].shape[1]))
    d_q[0, action_index] = -is_weight * td_error
    return backward(params, cache, d_q)


# -- Adam ------------------------------------------------------------------------

class Adam:
    def __init__(self, params: Params, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params, lr: float | None = None) -> None:
        """In-place bias-corrected Adam update."""
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params: Params, grads: Params, state: Adam, lr: float | None = None) -> Params:
    state.step(params, grads, lr)
    return params


# -- checkpoints -------------------------------------------------------------------

def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def dumps_checkpoint(params: Params, meta: dict | None = None) -> bytes:
    names = [f"{layer}.{part}" for layer in LAYER_ORDER for part in ("W", "b")]
    manifest = {"layers": [[n, list(params[n].shape)] for n in names], "meta": meta or {}}
    head = json.dumps(manifest, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names)
    payload = MAGIC + struct.pack("<I", len(head)) + head + body
    return payload + _checksum(payload)


def loads_checkpoint(data: bytes) -> tuple[Params, dict]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(data) < len(MAGIC) + 12:
        raise CheckpointError("truncated checkpoint")
    payload, digest = data[:-8], data[-8:]
    if _checksum(payload) != digest:
        raise CheckpointError("checksum mismatch")
    (n,) = struct.unpack_from("<I", payload, len(MAGIC))
    offset = len(MAGIC) + 4
    manifest = json.loads(payload[offset:offset + n])
    offset += n
    params = {}
    for name, shape in manifest["layers"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[name] = arr.astype(np.float64)
        offset += 8 * count
    if offset != len(payload):
        raise CheckpointError("trailing bytes after weight arrays")
    return params, manifest.get("meta", {})


def save_checkpoint(path: str | Path, params: Params, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps_checkpoint(params, meta))


def load_checkpoint(path: str | Path) -> tuple[Params, dict]:
    return loads_checkpoint(Path(path).read_bytes())
