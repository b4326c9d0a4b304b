"""Shallow CTR models: LR, FM, FFM, FwFM and FEFM.

Every model scores an instance as ``w0 + sum(w[active]) + interactions``
where the interaction term sums over the n(n-1)/2 pairs of active features
(one per field).  The kernels here are vectorised over a batch of instances;
``logit`` and ``gradient`` are single-instance wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

KINDS = ("LR", "FM", "FFM", "FwFM", "FEFM")
INIT_STD = 0.01


class FieldPairIndex:
    """Canonical numbering of unordered field pairs {f, g}, f != g.

    Pairs are ordered ascending by (min, max): (0,1), (0,2), ..., (n-2, n-1).
    """

    def __init__(self, n: int):
        if n < 1:
            raise ConfigError("need at least one field")
        self.n = n
        left, right = np.triu_indices(n, k=1)
        self.left = left.astype(np.int64)
        self.right = right.astype(np.int64)
        # incidence matrices used to fold per-pair gradients back onto fields
        self._left_inc = np.zeros((n, len(self)))
        self._left_inc[self.left, np.arange(len(self))] = 1.0
        self._right_inc = np.zeros((n, len(self)))
        self._right_inc[self.right, np.arange(len(self))] = 1.0

    def __len__(self) -> int:
        return self.n * (self.n - 1) // 2

    def index(self, f: int, g: int) -> int:
        if f == g or not (0 <= f < self.n and 0 <= g < self.n):
            raise IndexError(f"invalid field pair ({f}, {g}) for n={self.n}")
        a, b = min(f, g), max(f, g)
        return a * self.n - a * (a + 1) // 2 + (b - a - 1)

    def pair(self, p: int) -> tuple[int, int]:
        if not 0 <= p < len(self):
            raise IndexError(f"pair index {p} outside [0, {len(self)})")
        return int(self.left[p]), int(self.right[p])

    def fold(self, d_left: np.ndarray, d_right: np.ndarray) -> np.ndarray:
        """Sum per-pair ``(B, P, k)`` gradients into per-field ``(B, n, k)``."""
        return self._left_inc @ d_left + self._right_inc @ d_right


_PAIR_CACHE: dict[int, FieldPairIndex] = {}


def field_pairs(n: int) -> FieldPairIndex:
    if n not in _PAIR_CACHE:
        _PAIR_CACHE[n] = FieldPairIndex(n)
    return _PAIR_CACHE[n]


def ffm_slot(own: int, other: int) -> int:
    """Slot of ``other`` among the n-1 field-specific embeddings of a feature in ``own``."""
    return other if other < own else other - 1


@dataclass
class ShallowParams:
    kind: str
    n: int
    k: int
    w0: np.ndarray
    w: np.ndarray
    v: np.ndarray | None = None
    v_ffm: np.ndarray | None = None
    r: np.ndarray | None = None
    u: np.ndarray | None = None
    symmetric: bool = True
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        m, k, P = self.m, self.k, self.n * (self.n - 1) // 2
        expected = {
            "w0": (1,),
            "w": (m,),
            "v": (m, k) if self.kind in ("FM", "FwFM", "FEFM") else None,
            "v_ffm": (m, self.n - 1, k) if self.kind == "FFM" else None,
            "r": (P,) if self.kind == "FwFM" else None,
            "u": (P, k, k) if self.kind == "FEFM" else None,
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if shape is None:
                if arr is not None:
                    raise ConfigError(f"{self.kind} has no parameter {name!r}")
                continue
            if arr is None or arr.shape != shape:
                got = None if arr is None else arr.shape
                raise ConfigError(f"{self.kind}: {name} must have shape {shape}, got {got}")

    @property
    def m(self) -> int:
        return len(self.w)

    @property
    def pairs(self) -> FieldPairIndex:
        return field_pairs(self.n)

    def arrays(self) -> dict[str, np.ndarray]:
        """Parameter blocks in declaration order (the on-disk order)."""
        out = {}
        for name in ("w0", "w", "v", "v_ffm", "r", "u"):
            arr = getattr(self, name)
            if arr is not None:
                out[name] = arr
        return out

    def copy(self) -> "ShallowParams":
        blocks = {name: arr.copy() for name, arr in self.arrays().items()}
        return ShallowParams(self.kind, self.n, self.k, symmetric=self.symmetric, **blocks)

    @classmethod
    def init(cls, kind: str, m: int, n: int, k: int, seed: int = 0,
             symmetric: bool = True, std: float = INIT_STD) -> "ShallowParams":
        if kind not in KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")
        if m < 1 or n < 1 or k < 1:
            raise ConfigError("m, n and k must be positive")
        rng = np.random.default_rng(seed)
        P = n * (n - 1) // 2
        blocks = {"w0": np.zeros(1), "w": np.zeros(m)}
        if kind in ("FM", "FwFM", "FEFM"):
            blocks["v"] = rng.normal(0.0, std, size=(m, k))
        if kind == "FFM":
            blocks["v_ffm"] = rng.normal(0.0, std, size=(m, n - 1, k))
        if kind == "FwFM":
            # field-pair scalars start at 1 so the model begins as a plain FM
            blocks["r"] = np.ones(P)
        if kind == "FEFM":
            # W = u + u^T starts at the identity plus noise, i.e. at FM; a small
            # random W puts FEFM on a trilinear saddle that SGD leaves slowly.
            eye = np.eye(k) / 2.0 if symmetric else np.eye(k)
            blocks["u"] = eye + rng.normal(0.0, std, size=(P, k, k))
        return cls(kind, n, k, symmetric=symmetric, **blocks)


@dataclass
class SparseGradient:
    """Gradient restricted to the parameters a batch touched.

    ``rows[name] = (ids, values)`` holds row-indexed blocks (w, v, v_ffm) for
    the unique feature ids seen; ``dense[name]`` holds full blocks (w0, r, u and
    the DNN weights), which every instance touches.
    """

    dense: dict[str, np.ndarray] = field(default_factory=dict)
    rows: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def names(self):
        return list(self.dense) + list(self.rows)

    def to_dense(self, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {name: np.zeros_like(arr) for name, arr in arrays.items()}
        for name, g in self.dense.items():
            out[name] += g
        for name, (ids, vals) in self.rows.items():
            np.add.at(out[name], ids, vals)
        return out

    @property
    def d_w0(self) -> float:
        return float(self.dense["w0"][0])


def row_sum(ids: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum ``values`` rows that share an id.  Returns ``(unique_ids, sums)``."""
    uniq, inv = np.unique(ids, return_inverse=True)
    out = np.zeros((len(uniq),) + values.shape[1:])
    np.add.at(out, inv, values)
    return uniq, out


def effective_pair_matrices(params: ShallowParams) -> np.ndarray:
    """All field-pair matrices actually used in scoring, shape ``(P, k, k)``."""
    if params.kind != "FEFM":
        raise ConfigError(f"{params.kind} has no field-pair matrices")
    if params.symmetric:
        return params.u + params.u.transpose(0, 2, 1)
    return params.u


def effective_pair_matrix(params: ShallowParams, p: int) -> np.ndarray:
    if params.kind != "FEFM":
        raise ConfigError(f"{params.kind} has no field-pair matrices")
    if not 0 <= p < len(params.u):
        raise IndexError(f"pair index {p} outside [0, {len(params.u)})")
    u = params.u[p]
    return u + u.T if params.symmetric else u.copy()


def pair_score_fefm(v_i, v_j, W) -> float:
    v_i, v_j, W = np.asarray(v_i, float), np.asarray(v_j, float), np.asarray(W, float)
    k = len(v_i)
    if v_i.ndim != 1 or v_j.shape != (k,) or W.shape != (k, k):
        raise ValueError(f"shape mismatch: v_i {v_i.shape}, v_j {v_j.shape}, W {W.shape}")
    return float(v_i @ (W @ v_j))


# -- batched FEFM interaction, shared with the deep model -------------------

def fefm_pair_scores(V: np.ndarray, W: np.ndarray, pairs: FieldPairIndex):
    """Bilinear scores ``v_f^T W_fg v_g`` for every pair, shape ``(B, P)``.

    ``V`` is ``(B, n, k)``: the active embedding of each field.
    """
    # pair-major layout (P, B, k) so the products are batched matmuls
    Vi = V[:, pairs.left].transpose(1, 0, 2)
    Vj = V[:, pairs.right].transpose(1, 0, 2)
    WVj = Vj @ W.transpose(0, 2, 1)
    return (Vi * WVj).sum(-1).T, (Vi, Vj, WVj)


def fefm_pair_backward(G: np.ndarray, W: np.ndarray, cache, pairs: FieldPairIndex, symmetric: bool):
    """Backpropagate per-pair upstream ``G`` (B, P) to embeddings and ``u``."""
    Vi, Vj, WVj = cache
    Gt = G.T[..., None]
    d_vi = Gt * WVj
    d_vj = Gt * (Vi @ W)
    d_w = (Gt * Vi).transpose(0, 2, 1) @ Vj
    d_u = d_w + d_w.transpose(0, 2, 1) if symmetric else d_w
    return pairs.fold(d_vi.transpose(1, 0, 2), d_vj.transpose(1, 0, 2)), d_u


def _interactions(params: ShallowParams, active: np.ndarray):
    """Per-instance interaction sum and whatever the backward pass needs."""
    kind, pairs = params.kind, params.pairs
    if kind == "LR":
        return np.zeros(len(active)), None
    if kind == "FFM":
        E = params.v_ffm[active]  # (B, n, n-1, k)
        sl = np.array([ffm_slot(f, g) for f, g in zip(pairs.left, pairs.right)], dtype=np.int64)
        sr = np.array([ffm_slot(g, f) for f, g in zip(pairs.left, pairs.right)], dtype=np.int64)
        left = E[:, pairs.left, sl]
        right = E[:, pairs.right, sr]
        return (left * right).sum((-1, -2)), (left, right, sl, sr)
    V = params.v[active]
    if kind == "FEFM":
        W = effective_pair_matrices(params)
        scores, cache = fefm_pair_scores(V, W, pairs)
        return scores.sum(-1), (V, W, cache)
    dots = (V[:, pairs.left] * V[:, pairs.right]).sum(-1)
    if kind == "FwFM":
        return (dots * params.r).sum(-1), (V, dots)
    return dots.sum(-1), (V,)


def _check_active(params: ShallowParams, active: np.ndarray) -> np.ndarray:
    active = np.asarray(active, dtype=np.int64)
    if active.ndim == 1:
        active = active[None]
    if active.shape[1] != params.n:
        raise ValueError(f"instance has {active.shape[1]} fields, model expects {params.n}")
    return active


def linear_part(params: ShallowParams, active: np.ndarray) -> np.ndarray:
    return params.w0[0] + params.w[active].sum(-1)


def batch_logits(params: ShallowParams, active: np.ndarray) -> np.ndarray:
    active = _check_active(params, active)
    inter, _ = _interactions(params, active)
    return linear_part(params, active) + inter


def batch_gradient(params: ShallowParams, active: np.ndarray, upstream) -> SparseGradient:
    """Gradient of ``sum_b upstream[b] * logit_b`` over touched parameters."""
    active = _check_active(params, active)
    up = np.broadcast_to(np.asarray(upstream, dtype=float), (len(active),))
    B, n, k = len(active), params.n, params.k
    grad = SparseGradient()
    grad.dense["w0"] = np.array([up.sum()])
    grad.rows["w"] = row_sum(active.ravel(), np.repeat(up, n))
    if params.kind == "LR":
        return grad
    pairs = params.pairs
    _, cache = _interactions(params, active)
    G = np.broadcast_to(up[:, None], (B, len(pairs)))
    if params.kind == "FFM":
        left, right, sl, sr = cache
        dE = np.zeros((B, n, n - 1, k))
        dE[:, pairs.left, sl] = G[..., None] * right
        dE[:, pairs.right, sr] = G[..., None] * left
        grad.rows["v_ffm"] = row_sum(active.ravel(), dE.reshape(B * n, n - 1, k))
        return grad
    if params.kind == "FEFM":
        V, W, pcache = cache
        dV, d_u = fefm_pair_backward(G, W, pcache, pairs, params.symmetric)
        grad.dense["u"] = d_u
    else:
        V = cache[0]
        Vi, Vj = V[:, pairs.left], V[:, pairs.right]
        if params.kind == "FwFM":
            dots = cache[1]
            grad.dense["r"] = (G * dots).sum(0)
            G = G * params.r
        dV = pairs.fold(G[..., None] * Vj, G[..., None] * Vi)
    grad.rows["v"] = row_sum(active.ravel(), dV.reshape(B * n, k))
    return grad


def logit(params: ShallowParams, inst) -> float:
    return float(batch_logits(params, inst.active)[0])


def gradient(params: ShallowParams, inst, upstream: float) -> SparseGradient:
    return batch_gradient(params, inst.active, upstream)


def param_count(kind: str, m: int, n: int, k: int) -> int:
    """Exact number of trainable parameters of a shallow model."""
    if m < 1 or n < 1 or k < 1:
        raise ConfigError("m, n and k must be >= 1")
    pairs = n * (n - 1) // 2
    if kind == "LR":
        return m + 1
    if kind == "FM":
        return m + m * k + 1
    if kind == "FFM":
        return m + m * (n - 1) * k + 1
    if kind == "FwFM":
        return m + m * k + pairs + 1
    if kind == "FEFM":
        return m + m * k + pairs * k * k + 1
    raise ConfigError(f"unknown model kind {kind!r}")


def stored_parameter_count(params) -> int:
    return sum(int(a.size) for a in params.arrays().values())
