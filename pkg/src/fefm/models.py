"""Uniform forward/backward dispatch over shallow and deep models."""

from __future__ import annotations

import numpy as np

from .deep import DEFAULT_DROPOUT, DEFAULT_WIDTHS, DeepFefmParams, deep_backward, deep_forward, deep_param_count
from .errors import ConfigError
from .shallow import KINDS, ShallowParams, SparseGradient, batch_gradient, batch_logits, param_count

ALL_KINDS = KINDS + ("DeepFEFM",)

Model = ShallowParams | DeepFefmParams


def init_model(kind: str, m: int, n: int, k: int, seed: int = 0, symmetric: bool = True,
               widths=DEFAULT_WIDTHS, dropout: float = DEFAULT_DROPOUT, **flags) -> Model:
    if kind == "DeepFEFM":
        return DeepFefmParams.init(m, n, k, widths=widths, dropout=dropout, seed=seed, symmetric=symmetric, **flags)
    if flags:
        raise ConfigError(f"ablation flags only apply to DeepFEFM, got {sorted(flags)}")
    return ShallowParams.init(kind, m, n, k, seed=seed, symmetric=symmetric)


def forward(model: Model, active: np.ndarray, mode: str = "eval", rng=None):
    """Logits for a batch plus the cache ``backward`` needs."""
    if isinstance(model, DeepFefmParams):
        return deep_forward(model, active, mode, rng)
    return batch_logits(model, active), active


def backward(model: Model, cache, upstream) -> SparseGradient:
    if isinstance(model, DeepFefmParams):
        return deep_backward(model, cache, upstream)
    return batch_gradient(model, cache, upstream)


def predict_logits(model: Model, active: np.ndarray, chunk: int = 8192) -> np.ndarray:
    active = np.atleast_2d(active)
    out = [forward(model, active[i:i + chunk])[0] for i in range(0, len(active), chunk)]
    return np.concatenate(out)


def count_parameters(model: Model) -> int:
    if isinstance(model, DeepFefmParams):
        return deep_param_count(model)
    return param_count(model.kind, model.m, model.n, model.k)


def regularization_group(name: str) -> str | None:
    """Which L2 strength applies to a parameter block (None: unregularised)."""
    if name == "w":
        return "lambda1"
    if name in ("v", "v_ffm"):
        return "lambda2"
    if name in ("r", "u"):
        return "lambda3"
    if name.startswith("dnn_W") or name == "w_logit":
        return "lambda_deep"
    return None
