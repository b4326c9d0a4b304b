"""DeepFEFM: FEFM logit plus a ReLU feed-forward network.

The network input is the concatenation of the per-pair FEFM scores (one per
unordered field pair) and the active feature embeddings in field order.
Four flags switch off individual parts of the graph for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .shallow import (
    ShallowParams,
    SparseGradient,
    effective_pair_matrices,
    fefm_pair_backward,
    fefm_pair_scores,
    linear_part,
    row_sum,
)

DEFAULT_WIDTHS = (1024, 1024, 1024)
DEFAULT_DROPOUT = 0.2
ABLATION_FLAGS = (
    "use_fefm_logit",
    "use_linear_terms",
    "dnn_input_feature_embeddings",
    "dnn_input_fefm_embeddings",
)


class StaleCacheError(ValueError):
    pass


@dataclass
class DnnParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    w_logit: np.ndarray
    dropout: float = DEFAULT_DROPOUT

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if len(self.weights) != len(self.biases):
            raise ConfigError("one bias vector per layer required")
        prev = None
        for W, b in zip(self.weights, self.biases):
            if prev is not None and W.shape[0] != prev:
                raise ConfigError(f"layer expects input width {W.shape[0]}, previous layer gives {prev}")
            if b.shape != (W.shape[1],):
                raise ConfigError("bias shape does not match layer width")
            prev = W.shape[1]
        last = prev if prev is not None else None
        if last is not None and self.w_logit.shape != (last,):
            raise ConfigError(f"w_logit must have shape ({last},)")

    @property
    def widths(self) -> list[int]:
        return [W.shape[1] for W in self.weights]

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0] if self.weights else len(self.w_logit)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"dnn_W{i}"] = W
            out[f"dnn_b{i}"] = b
        out["w_logit"] = self.w_logit
        return out

    @classmethod
    def init(cls, input_width: int, widths=DEFAULT_WIDTHS, dropout=DEFAULT_DROPOUT, seed=0, gain=1.0):
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        prev = input_width
        for width in widths:
            std = gain * np.sqrt(2.0 / (prev + width))
            weights.append(rng.normal(0.0, std, size=(prev, width)))
            biases.append(np.zeros(width))
            prev = width
        w_logit = rng.normal(0.0, gain * np.sqrt(2.0 / (prev + 1)), size=prev)
        return cls(weights, biases, w_logit, dropout)


def dnn_forward(dnn: DnnParams, x: np.ndarray, mode: str = "eval", rng=None):
    """Run the network on ``x`` of shape ``(B, d)``.

    Returns ``(outputs (B,), cache)``.  In train mode inverted dropout is
    applied after every hidden activation, drawing masks from ``rng``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != dnn.input_width:
        raise ValueError(f"DNN input width {x.shape[1]} != expected {dnn.input_width}")
    drop = mode == "train" and dnn.dropout > 0
    if drop and rng is None:
        raise ValueError("train mode with dropout needs a random generator")
    h = x
    layers = []
    for W, b in zip(dnn.weights, dnn.biases):
        z = h @ W + b
        a = np.maximum(z, 0.0)
        mask = None
        if drop:
            keep = 1.0 - dnn.dropout
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        layers.append((h, z, mask))
        h = a
    return h @ dnn.w_logit, (layers, h)


def dnn_backward(dnn: DnnParams, cache, upstream: np.ndarray):
    """Return ``(parameter gradients, d input)`` for ``sum_b upstream[b] * out_b``."""
    layers, h_last = cache
    grads = {"w_logit": upstream @ h_last}
    dh = upstream[:, None] * dnn.w_logit[None, :]
    for i in range(len(layers) - 1, -1, -1):
        h_in, z, mask = layers[i]
        if mask is not None:
            dh = dh * mask
        dz = dh * (z > 0)
        grads[f"dnn_W{i}"] = h_in.T @ dz
        grads[f"dnn_b{i}"] = dz.sum(0)
        dh = dz @ dnn.weights[i].T
    return grads, dh


def dnn_input_width(n: int, k: int, feature_embeddings: bool = True, fefm_embeddings: bool = True) -> int:
    if not (feature_embeddings or fefm_embeddings):
        raise ConfigError("at least one DNN input block must be enabled")
    return (n * (n - 1) // 2 if fefm_embeddings else 0) + (n * k if feature_embeddings else 0)


def build_dnn_input(v_fefm, active_embeddings, feature_embeddings=True, fefm_embeddings=True) -> np.ndarray:
    """Concatenate the FEFM score block and the field-ordered embeddings.

    Works on one instance (``v_fefm`` of shape (P,), embeddings (n, k)) or a
    batch (``(B, P)`` and ``(B, n, k)``).
    """
    if not (feature_embeddings or fefm_embeddings):
        raise ConfigError("at least one DNN input block must be enabled")
    v_fefm = np.asarray(v_fefm, dtype=float)
    emb = np.asarray(active_embeddings, dtype=float)
    single = v_fefm.ndim == 1
    if single:
        v_fefm, emb = v_fefm[None], emb[None]
    blocks = []
    if fefm_embeddings:
        blocks.append(v_fefm)
    if feature_embeddings:
        blocks.append(emb.reshape(len(emb), -1))
    out = np.concatenate(blocks, axis=1)
    return out[0] if single else out


@dataclass
class DeepFefmParams:
    fefm: ShallowParams
    dnn: DnnParams
    use_fefm_logit: bool = True
    use_linear_terms: bool = True
    dnn_input_feature_embeddings: bool = True
    dnn_input_fefm_embeddings: bool = True
    version: int = field(default=0, compare=False)

    kind = "DeepFEFM"

    def __post_init__(self):
        if self.fefm.kind != "FEFM":
            raise ConfigError("DeepFEFM needs FEFM shallow parameters")
        width = dnn_input_width(self.n, self.k, self.dnn_input_feature_embeddings, self.dnn_input_fefm_embeddings)
        if width != self.dnn.input_width:
            raise ConfigError(f"DNN input width {self.dnn.input_width} != {width} implied by n, k and flags")

    @property
    def n(self) -> int:
        return self.fefm.n

    @property
    def k(self) -> int:
        return self.fefm.k

    @property
    def m(self) -> int:
        return self.fefm.m

    @property
    def symmetric(self) -> bool:
        return self.fefm.symmetric

    @property
    def flags(self) -> dict[str, bool]:
        return {name: getattr(self, name) for name in ABLATION_FLAGS}

    def arrays(self) -> dict[str, np.ndarray]:
        return {**self.fefm.arrays(), **self.dnn.arrays()}

    def copy(self) -> "DeepFefmParams":
        dnn = DnnParams(
            [W.copy() for W in self.dnn.weights],
            [b.copy() for b in self.dnn.biases],
            self.dnn.w_logit.copy(),
            self.dnn.dropout,
        )
        return DeepFefmParams(self.fefm.copy(), dnn, **self.flags)

    @classmethod
    def init(cls, m: int, n: int, k: int, widths=DEFAULT_WIDTHS, dropout=DEFAULT_DROPOUT,
             seed: int = 0, symmetric: bool = True, **flags) -> "DeepFefmParams":
        unknown = set(flags) - set(ABLATION_FLAGS)
        if unknown:
            raise ConfigError(f"unknown ablation flags {sorted(unknown)}")
        fefm = ShallowParams.init("FEFM", m, n, k, seed=seed, symmetric=symmetric)
        width = dnn_input_width(
            n, k,
            flags.get("dnn_input_feature_embeddings", True),
            flags.get("dnn_input_fefm_embeddings", True),
        )
        dnn = DnnParams.init(width, widths, dropout, seed=seed + 1)
        return cls(fefm, dnn, **flags)


@dataclass
class DeepCache:
    active: np.ndarray
    version: int
    owner: int
    V: np.ndarray
    W: np.ndarray
    pair_cache: tuple
    dnn_cache: tuple


def fefm_interaction_vector(fefm: ShallowParams, inst) -> np.ndarray:
    """Per-pair FEFM scores of one instance, length n(n-1)/2, pair-index order."""
    if fefm.kind != "FEFM":
        raise ConfigError("interaction vector needs FEFM parameters")
    active = np.asarray(inst.active, dtype=np.int64)[None]
    scores, _ = fefm_pair_scores(fefm.v[active], effective_pair_matrices(fefm), fefm.pairs)
    return scores[0]


def deep_forward(params: DeepFefmParams, active: np.ndarray, mode: str = "eval", rng=None):
    active = np.atleast_2d(np.asarray(active, dtype=np.int64))
    if active.shape[1] != params.n:
        raise ValueError(f"instance has {active.shape[1]} fields, model expects {params.n}")
    fefm = params.fefm
    V = fefm.v[active]
    W = effective_pair_matrices(fefm)
    scores, pair_cache = fefm_pair_scores(V, W, fefm.pairs)
    phi = np.zeros(len(active))
    if params.use_linear_terms:
        phi += linear_part(fefm, active)
    if params.use_fefm_logit:
        phi += scores.sum(-1)
    x = build_dnn_input(scores, V, params.dnn_input_feature_embeddings, params.dnn_input_fefm_embeddings)
    out, dnn_cache = dnn_forward(params.dnn, x, mode, rng)
    phi += out
    return phi, DeepCache(active, params.version, id(params), V, W, pair_cache, dnn_cache)


def deep_backward(params: DeepFefmParams, cache: DeepCache, upstream) -> SparseGradient:
    if cache.owner != id(params) or cache.version != params.version:
        raise StaleCacheError("cache was produced by a different parameter state")
    active = cache.active
    B, n, k = active.shape[0], params.n, params.k
    P = n * (n - 1) // 2
    up = np.broadcast_to(np.asarray(upstream, dtype=float), (B,))
    grad = SparseGradient()
    if params.use_linear_terms:
        grad.dense["w0"] = np.array([up.sum()])
        grad.rows["w"] = row_sum(active.ravel(), np.repeat(up, n))
    dnn_grads, dx = dnn_backward(params.dnn, cache.dnn_cache, up)
    grad.dense.update(dnn_grads)

    G = np.zeros((B, P))
    pair_path = False
    if params.use_fefm_logit:
        G += up[:, None]
        pair_path = True
    col = 0
    if params.dnn_input_fefm_embeddings:
        G += dx[:, :P]
        col = P
        pair_path = True
    dV = np.zeros((B, n, k))
    if pair_path:
        dV_pairs, d_u = fefm_pair_backward(G, cache.W, cache.pair_cache, params.fefm.pairs, params.symmetric)
        dV += dV_pairs
        grad.dense["u"] = d_u
    if params.dnn_input_feature_embeddings:
        dV += dx[:, col:].reshape(B, n, k)
    grad.rows["v"] = row_sum(active.ravel(), dV.reshape(B * n, k))
    return grad


def deepfefm_logit(params: DeepFefmParams, inst, mode: str = "eval", rng=None) -> float:
    phi, _ = deep_forward(params, inst.active, mode, rng)
    return float(phi[0])


def deepfefm_gradient(params: DeepFefmParams, inst, upstream: float, cache: DeepCache) -> SparseGradient:
    if not np.array_equal(cache.active[0], inst.active):
        raise StaleCacheError("cache belongs to a different instance")
    return deep_backward(params, cache, upstream)


def deep_param_count(params: DeepFefmParams) -> int:
    return sum(int(a.size) for a in params.arrays().values())
