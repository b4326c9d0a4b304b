"""Mini-batch AdaGrad training with grouped L2 and validation early stopping."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, NumericError
from .metrics import auc_metric, instance_loss, log_loss_metric, sigmoid
from .models import Model, backward, forward, predict_logits, regularization_group
from .shallow import SparseGradient

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_logloss", "val_auc", "seconds")


@dataclass
class TrainConfig:
    eta: float = 0.05
    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    lambda_deep: float = 0.0
    batch_size: int = 1024
    max_epochs: int = 20
    min_delta: float = 0.000005
    patience: int = 2
    seed: int = 0
    shuffle_each_epoch: bool = True
    adagrad_initial: float = 0.1
    adagrad_eps: float = 1e-7

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        for name in ("lambda1", "lambda2", "lambda3", "lambda_deep"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.adagrad_initial < 0 or self.adagrad_eps < 0:
            raise ConfigError("AdaGrad constants must be non-negative")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training keys {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


class AdaGradState:
    """Per-coordinate squared-gradient accumulators mirroring the parameters."""

    def __init__(self, arrays: dict[str, np.ndarray], initial: float = 0.1, eps: float = 1e-7):
        self.initial = initial
        self.eps = eps
        self.acc = {name: np.full_like(arr, initial, dtype=float) for name, arr in arrays.items()}

    def apply(self, arrays: dict[str, np.ndarray], grad: SparseGradient, eta: float) -> None:
        for name, g in grad.dense.items():
            acc = self.acc[name]
            acc += g * g
            arrays[name] -= eta * g / (np.sqrt(acc) + self.eps)
        for name, (ids, g) in grad.rows.items():
            acc = self.acc[name][ids] + g * g
            self.acc[name][ids] = acc
            arrays[name][ids] -= eta * g / (np.sqrt(acc) + self.eps)


def add_l2(grad: SparseGradient, arrays: dict[str, np.ndarray], cfg: TrainConfig) -> SparseGradient:
    """Add ``lambda_g * theta`` for every block the gradient touches."""
    for name, g in grad.dense.items():
        group = regularization_group(name)
        lam = getattr(cfg, group) if group else 0.0
        if lam:
            grad.dense[name] = g + lam * arrays[name]
    for name, (ids, g) in grad.rows.items():
        group = regularization_group(name)
        lam = getattr(cfg, group) if group else 0.0
        if lam:
            grad.rows[name] = (ids, g + lam * arrays[name][ids])
    return grad


def batch_step(model: Model, active: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
               opt: AdaGradState, rng=None) -> float:
    """One AdaGrad update on the mean batch loss.  Returns that loss."""
    y = np.asarray(labels, dtype=float)
    if len(y) == 0:
        raise DataError("empty batch")
    phi, cache = forward(model, active, "train", rng)
    losses = instance_loss(phi, y)
    up = -y * sigmoid(-y * phi) / len(y)
    grad = add_l2(backward(model, cache, up), model.arrays(), cfg)
    opt.apply(model.arrays(), grad, cfg.eta)
    model.version += 1
    return float(np.mean(losses))


class EarlyStopping:
    """Stop once ``patience`` epochs pass without beating the best loss by ``min_delta``."""

    def __init__(self, min_delta: float = 0.000005, patience: int = 2):
        self.min_delta = min_delta
        self.patience = patience
        self.best = math.inf
        self.wait = 0

    def update(self, loss: float) -> bool:
        if loss < self.best - self.min_delta:
            self.best = loss
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_logloss: float
    val_auc: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def val_losses(self) -> list[float]:
        return [r.val_logloss for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for r in self.records:
                writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_logloss), repr(r.val_auc), f"{r.seconds:.3f}"])


def evaluate(model: Model, ds: Dataset) -> tuple[float, float]:
    """(AUC, log loss) of ``model`` on ``ds``.  Raises DataError when AUC is undefined."""
    probs = sigmoid(predict_logits(model, ds.active))
    return auc_metric(probs, ds.labels), log_loss_metric(probs, ds.labels)


def _validation_metrics(model: Model, ds: Dataset) -> tuple[float, float]:
    probs = sigmoid(predict_logits(model, ds.active))
    loss = log_loss_metric(probs, ds.labels)
    try:
        auc = auc_metric(probs, ds.labels)
    except DataError:
        auc = math.nan
    return loss, auc


def fit(model: Model, train: Dataset, val: Dataset, cfg: TrainConfig, on_epoch=None):
    """Train in place and return ``(best_model, history)``.

    The returned model is a copy of the parameters from the epoch with the
    lowest validation log loss.
    """
    if (train.n, train.m) != (model.n, model.m) or (val.n, val.m) != (model.n, model.m):
        raise DataError("dataset dimensions do not match the model")
    opt = AdaGradState(model.arrays(), cfg.adagrad_initial, cfg.adagrad_eps)
    stopper = EarlyStopping(cfg.min_delta, cfg.patience)
    history = TrainHistory()
    best_loss, best_model = math.inf, model.copy()
    N = len(train)
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        if cfg.shuffle_each_epoch:
            order = np.random.default_rng([cfg.seed, epoch]).permutation(N)
        else:
            order = np.arange(N)
        dropout_rng = np.random.default_rng([cfg.seed, epoch, 1])
        total = 0.0
        for lo in range(0, N, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            loss = batch_step(model, train.active[idx], train.labels[idx], cfg, opt, dropout_rng)
            total += loss * len(idx)
        train_loss = total / N
        val_loss, val_auc = _validation_metrics(model, val)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        record = EpochRecord(epoch, train_loss, val_loss, val_auc, time.perf_counter() - start)
        history.records.append(record)
        log.info("epoch %d train %.6f val_logloss %.6f val_auc %.5f", epoch, train_loss, val_loss, val_auc)
        if on_epoch is not None:
            on_epoch(record)
        if val_loss < best_loss:
            best_loss, best_model = val_loss, model.copy()
            history.best_epoch = epoch
        if stopper.update(val_loss):
            history.stopped_early = True
            break
    return best_model, history
