"""Random model and data factories shared by the test modules."""

import numpy as np

from fefm.data import Dataset
from fefm.models import backward, forward, init_model
from oracles import brute_logit, fd_gradient_check, touched_entries


def randomize(model, rng, scale=0.5):
    """Overwrite every parameter with N(0, scale^2) draws (in place)."""
    for arr in model.arrays().values():
        arr[...] = rng.normal(0.0, scale, size=arr.shape)
    return model


def random_model(kind, n, k, cardinality, rng, scale=0.5, **kwargs):
    m = n * cardinality
    model = init_model(kind, m, n, k, seed=int(rng.integers(1 << 30)), **kwargs)
    return randomize(model, rng, scale)


def random_active(n, cardinality, rng, size=None):
    offsets = np.arange(n) * cardinality
    shape = (n,) if size is None else (size, n)
    return rng.integers(0, cardinality, size=shape) + offsets


def random_dataset(n, cardinality, size, rng):
    active = random_active(n, cardinality, rng, size)
    labels = rng.choice([-1, 1], size=size)
    return Dataset(labels, active, n, n * cardinality, np.arange(n + 1) * cardinality)


def min_abs_preactivation(model, active):
    """Smallest |pre-activation| in the DNN for one instance (inf for shallow models)."""
    if model.kind != "DeepFEFM":
        return np.inf
    _, cache = forward(model, active[None])
    return min(float(np.abs(z).min()) for _, z, _ in cache.dnn_cache[0])


KINK_MARGIN = 0.05


def gradient_audit_once(kind, n, k, rng, cardinality=3, widths=(4, 4), scale=0.5, **kwargs):
    """Max relative error of one random (params, instance) draw against central differences.

    DeepFEFM draws with a pre-activation within ``KINK_MARGIN`` of the ReLU kink
    are redrawn: a finite difference straddling the kink measures a one-sided slope.
    """
    extra = dict(kwargs)
    if kind == "DeepFEFM":
        extra.update(widths=widths, dropout=0.0)
    while True:
        model = random_model(kind, n, k, cardinality, rng, scale, **extra)
        active = random_active(n, cardinality, rng)
        if min_abs_preactivation(model, active) >= KINK_MARGIN:
            break
    upstream = float(rng.normal())
    _, cache = forward(model, active[None])
    arrays = model.arrays()
    analytic = backward(model, cache, upstream).to_dense(arrays)

    def f():
        return upstream * float(forward(model, active[None])[0][0])

    return fd_gradient_check(arrays, f, analytic, touched_entries(arrays, active))


def manual_deep_logit(params, active):
    """Recompute the combined logit from its documented parts, one pair at a time."""
    fefm = params.fefm
    active = [int(a) for a in active]
    n = len(active)
    linear = brute_logit("LR", fefm.arrays(), active)
    vec = []
    for f in range(n):
        for g in range(f + 1, n):
            u = fefm.u[len(vec)]
            W = u + u.T if fefm.symmetric else u
            vec.append(float(fefm.v[active[f]] @ W @ fefm.v[active[g]]))
    x = []
    if params.dnn_input_fefm_embeddings:
        x += vec
    if params.dnn_input_feature_embeddings:
        for i in active:
            x += list(fefm.v[i])
    h = np.array(x)
    for W, b in zip(params.dnn.weights, params.dnn.biases):
        h = np.maximum(h @ W + b, 0)
    total = float(h @ params.dnn.w_logit)
    if params.use_linear_terms:
        total += linear
    if params.use_fefm_logit:
        total += sum(vec)
    return total
