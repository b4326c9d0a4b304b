"""Slow, obviously-correct reference computations used by the tests.

Nothing here calls the vectorised kernels it is used to check.
"""

import itertools
import math

import numpy as np

FD_STEP = 1e-3
REL_FLOOR = 1e-6


def brute_logit(kind, params, active, symmetric=True):
    """Direct double loop over active feature pairs, one term at a time."""
    active = [int(a) for a in active]
    n = len(active)
    total = float(params["w0"][0]) + sum(float(params["w"][i]) for i in active)
    if kind == "LR":
        return total
    pair = 0
    for f in range(n):
        for g in range(f + 1, n):
            i, j = active[f], active[g]
            if kind == "FM":
                term = sum(params["v"][i][t] * params["v"][j][t] for t in range(len(params["v"][i])))
            elif kind == "FwFM":
                term = params["r"][pair] * sum(params["v"][i][t] * params["v"][j][t] for t in range(len(params["v"][i])))
            elif kind == "FFM":
                slot_i = g if g < f else g - 1
                slot_j = f if f < g else f - 1
                a, b = params["v_ffm"][i][slot_i], params["v_ffm"][j][slot_j]
                term = sum(a[t] * b[t] for t in range(len(a)))
            elif kind == "FEFM":
                U = np.asarray(params["u"][pair])
                W = U + U.T if symmetric else U
                vi, vj = params["v"][i], params["v"][j]
                k = len(vi)
                term = sum(vi[a] * W[a][b] * vj[b] for a in range(k) for b in range(k))
            else:
                raise ValueError(kind)
            total += term
            pair += 1
    return total


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), REL_FLOOR)


def fd_gradient_check(arrays, f, analytic, entries):
    """Max relative error between ``analytic`` and central differences of ``f``.

    ``entries`` is an iterable of ``(name, index)`` to probe; ``f()`` reads the
    current contents of ``arrays``.
    """
    worst = 0.0
    for name, idx in entries:
        arr = arrays[name]
        old = arr[idx]
        arr[idx] = old + FD_STEP
        plus = f()
        arr[idx] = old - FD_STEP
        minus = f()
        arr[idx] = old
        numeric = (plus - minus) / (2 * FD_STEP)
        worst = max(worst, relative_error(float(analytic[name][idx]), numeric))
    return worst


def touched_entries(arrays, active):
    """All coordinates an instance can influence: touched rows plus dense blocks."""
    rows = set(int(a) for a in active)
    for name, arr in arrays.items():
        if name in ("w", "v", "v_ffm"):
            for i in sorted(rows):
                for rest in np.ndindex(arr.shape[1:]):
                    yield name, (i,) + rest
        else:
            for idx in np.ndindex(arr.shape):
                yield name, idx


def pairwise_auc(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels) > 0
    pos, neg = s[y], s[~y]
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (greater + 0.5 * ties) / (len(pos) * len(neg))


def cubic_eigenvalues(W):
    """Eigenvalues of a symmetric 3x3 from its characteristic polynomial."""
    W = np.asarray(W, dtype=float)
    tr = np.trace(W)
    minors = sum(W[i, i] * W[j, j] - W[i, j] * W[j, i] for i, j in itertools.combinations(range(3), 2))
    det = np.linalg.det(W)
    roots = np.roots([1.0, -tr, minors, -det])
    return np.sort(roots.real)[::-1]


def simulate_early_stopping(losses, min_delta, patience, max_epochs=None):
    """Reference stopping rule.  Returns ``(epochs_run, best_epoch)`` (1-based).

    An epoch improves when its loss is below the best so far by more than
    ``min_delta``; training stops after ``patience`` consecutive epochs without
    improvement.  The returned model is the one with the lowest loss.
    """
    limit = len(losses) if max_epochs is None else min(max_epochs, len(losses))
    best_for_patience = math.inf
    wait = 0
    run = 0
    for epoch in range(1, limit + 1):
        run = epoch
        loss = losses[epoch - 1]
        if loss < best_for_patience - min_delta:
            best_for_patience = loss
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                break
    seen = losses[:run]
    best_epoch = min(range(run), key=lambda e: (seen[e], e)) + 1
    return run, best_epoch
