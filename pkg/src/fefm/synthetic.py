"""Synthetic click data with a known field-pair interaction structure.

Each field has ``cardinality`` values with hidden embeddings.  Each field pair
gets its own hidden symmetric matrix whose sign and scale differ across pairs,
so a shared dot product (FM) cannot express the interaction while a per-pair
matrix (FEFM) can.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, FieldSchema
from .metrics import sigmoid


@dataclass
class PlantedTask:
    embeddings: np.ndarray  # (n, cardinality, rank)
    pair_matrices: np.ndarray  # (P, rank, rank)
    linear: np.ndarray  # (n, cardinality)
    bias: float

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def cardinality(self) -> int:
        return self.embeddings.shape[1]

    @property
    def m(self) -> int:
        return self.n * self.cardinality

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.cardinality

    def true_logits(self, values: np.ndarray) -> np.ndarray:
        left, right = np.triu_indices(self.n, k=1)
        Z = self.embeddings[np.arange(self.n), values]  # (B, n, rank)
        Zi, Zj = Z[:, left], Z[:, right]
        inter = np.einsum("bpk,pkl,bpl->b", Zi, self.pair_matrices, Zj)
        lin = self.linear[np.arange(self.n), values].sum(-1)
        return self.bias + lin + inter

    def sample(self, size: int, seed: int) -> Dataset:
        rng = np.random.default_rng(seed)
        values = rng.integers(0, self.cardinality, size=(size, self.n))
        p = sigmoid(self.true_logits(values))
        labels = np.where(rng.random(size) < p, 1, -1)
        active = values + self.offsets[:-1]
        return Dataset(labels, active, self.n, self.m, self.offsets)

    def schema(self) -> list[FieldSchema]:
        return [FieldSchema(f"f{i}") for i in range(self.n)]


def planted_task(n: int = 8, cardinality: int = 10, rank: int = 4, strength: float = 1.0,
                 linear_scale: float = 0.3, bias: float = 0.0, seed: int = 0) -> PlantedTask:
    rng = np.random.default_rng(seed)
    P = n * (n - 1) // 2
    emb = rng.normal(0.0, 1.0, size=(n, cardinality, rank))
    mats = np.empty((P, rank, rank))
    for p in range(P):
        a = rng.normal(size=(rank, rank))
        sym = (a + a.T) / 2.0
        mats[p] = rng.choice([-1.0, 1.0]) * strength * sym / np.sqrt(rank)
    linear = rng.normal(0.0, linear_scale, size=(n, cardinality))
    return PlantedTask(emb, mats, linear, bias)


def planted_splits(n_train: int = 20000, n_val: int = 5000, n_test: int = 5000, seed: int = 0, **kwargs):
    """Train/validation/test datasets drawn from one planted task."""
    task = planted_task(seed=seed, **kwargs)
    return (
        task.sample(n_train, seed * 3 + 101),
        task.sample(n_val, seed * 3 + 102),
        task.sample(n_test, seed * 3 + 103),
        task,
    )
