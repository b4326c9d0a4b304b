"""Eigen-analysis of the FEFM field-pair matrices.

The strength of a field pair is the root sum of squared eigenvalues of its
symmetric interaction matrix.  Eigenvalues come from a cyclic Jacobi solver.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .deep import DeepFefmParams
from .errors import ConfigError, NumericError
from .shallow import ShallowParams, effective_pair_matrices

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
SYMMETRY_TOL = 1e-9


def _check_symmetric(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {W.shape}")
    scale = np.abs(W).max(initial=0.0)
    if np.abs(W - W.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    return W


def jacobi_eigh(W, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigenvalues (non-increasing) and orthonormal eigenvectors (columns).

    Sweeps cyclically over the upper triangle, zeroing one off-diagonal entry
    per rotation, until every off-diagonal magnitude is at most
    ``tol * ||W||_F``.
    """
    A = _check_symmetric(W).copy()
    A = (A + A.T) / 2.0
    k = A.shape[0]
    Q = np.eye(k)
    threshold = tol * np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.abs(A - np.diag(np.diag(A))).max(initial=0.0)
        if off <= threshold:
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                vec_p, vec_q = Q[:, p].copy(), Q[:, q].copy()
                Q[:, p] = c * vec_p - s * vec_q
                Q[:, q] = s * vec_p + c * vec_q
    else:
        off = np.abs(A - np.diag(np.diag(A))).max(initial=0.0)
        if off > threshold:
            raise NumericError(f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal {off:.3e})")
    evals = np.diag(A).copy()
    order = np.argsort(-evals, kind="stable")
    return evals[order], Q[:, order]


def symmetric_eigenvalues(W, tol: float = JACOBI_TOL) -> np.ndarray:
    return jacobi_eigh(W, tol)[0]


def pair_strength(W) -> float:
    lam = symmetric_eigenvalues(W)
    return float(math.sqrt(np.sum(lam * lam)))


@dataclass(frozen=True)
class PairStrength:
    field_a: str
    field_b: str
    strength: float
    eigenvalues: tuple[float, ...]


@dataclass
class PairStrengthReport:
    entries: list[PairStrength] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["field_a", "field_b", "strength", "eigenvalues"])
            for e in self.entries:
                writer.writerow([e.field_a, e.field_b, repr(e.strength), "|".join(repr(x) for x in e.eigenvalues)])

    def to_text(self) -> str:
        if not self.entries:
            return "(no field pairs)\n"
        wa = max(len("field_a"), *(len(e.field_a) for e in self.entries))
        wb = max(len("field_b"), *(len(e.field_b) for e in self.entries))
        lines = [f"{'rank':>4}  {'field_a':<{wa}}  {'field_b':<{wb}}  {'strength':>12}  top eigenvalues"]
        for i, e in enumerate(self.entries, start=1):
            top = ", ".join(f"{x:.4g}" for x in e.eigenvalues[:3])
            lines.append(f"{i:>4}  {e.field_a:<{wa}}  {e.field_b:<{wb}}  {e.strength:>12.6g}  {top}")
        return "\n".join(lines) + "\n"


def rank_field_pairs(model, field_names: Sequence[str] | None = None, top: int | None = None) -> PairStrengthReport:
    """Rank field pairs of a trained FEFM/DeepFEFM model by interaction strength.

    ``field_names`` may be a list of names or a ``Vocabulary``.
    """
    if isinstance(model, DeepFefmParams):
        model = model.fefm
    if not isinstance(model, ShallowParams) or model.kind != "FEFM":
        kind = getattr(model, "kind", type(model).__name__)
        raise ConfigError(f"field-pair analysis needs an FEFM or DeepFEFM model, got {kind}")
    if not model.symmetric:
        raise ConfigError(
            "model was trained with symmetric_mode off; its pair matrices are not symmetric, so "
            "eigenvalue strengths are undefined. Retrain with symmetric mode on."
        )
    if field_names is None:
        names = [f"f{i}" for i in range(model.n)]
    else:
        names = list(getattr(field_names, "field_names", field_names))
    if len(names) != model.n:
        raise ConfigError(f"{len(names)} field names for a model with {model.n} fields")
    if top is not None and top < 1:
        raise ConfigError("top must be >= 1")
    mats = effective_pair_matrices(model)
    pairs = model.pairs
    entries = []
    for p in range(len(pairs)):
        lam = symmetric_eigenvalues(mats[p])
        f, g = pairs.pair(p)
        entries.append(PairStrength(names[f], names[g], float(math.sqrt(np.sum(lam * lam))), tuple(float(x) for x in lam)))
    entries.sort(key=lambda e: (-e.strength, e.field_a, e.field_b))
    return PairStrengthReport(entries[:top] if top is not None else entries)
