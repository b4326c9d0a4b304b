"""Experiment configuration files (JSON)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .deep import ABLATION_FLAGS, DEFAULT_DROPOUT, DEFAULT_WIDTHS
from .errors import ConfigError
from .models import ALL_KINDS
from .trainer import TrainConfig

_TOP_KEYS = {"model", "k", "symmetric", "train", "data", "dnn", "ablation", "out"}
_DATA_KEYS = {"train", "val", "test", "vocab"}
_DNN_KEYS = {"widths", "dropout"}


@dataclass
class RunConfig:
    model: str
    k: int
    train: TrainConfig
    data: dict[str, str]
    symmetric: bool = True
    dnn_widths: tuple[int, ...] = DEFAULT_WIDTHS
    dropout: float = DEFAULT_DROPOUT
    ablation: dict[str, bool] = field(default_factory=dict)
    out: str = "out"

    def __post_init__(self):
        if self.model not in ALL_KINDS:
            raise ConfigError(f"model must be one of {ALL_KINDS}, got {self.model!r}")
        if not isinstance(self.k, int) or self.k < 1:
            raise ConfigError("k must be a positive integer")
        missing = {"train", "val", "vocab"} - set(self.data)
        if missing:
            raise ConfigError(f"data section is missing {sorted(missing)}")
        bad = set(self.ablation) - set(ABLATION_FLAGS)
        if bad:
            raise ConfigError(f"unknown ablation flags {sorted(bad)}")
        if self.ablation and self.model != "DeepFEFM":
            raise ConfigError("ablation flags only apply to DeepFEFM")
        if any(int(w) < 1 for w in self.dnn_widths):
            raise ConfigError("DNN widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "k": self.k,
            "symmetric": self.symmetric,
            "train": self.train.to_dict(),
            "data": dict(self.data),
            "dnn": {"widths": list(self.dnn_widths), "dropout": self.dropout},
            "ablation": dict(self.ablation),
            "out": self.out,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def model_kwargs(self) -> dict:
        kwargs = {"symmetric": self.symmetric}
        if self.model == "DeepFEFM":
            kwargs.update(widths=tuple(self.dnn_widths), dropout=self.dropout, **self.ablation)
        return kwargs


def _reject_unknown(doc: dict, allowed: set, where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def parse_run_config(doc: dict, base_dir: Path | None = None) -> RunConfig:
    _reject_unknown(doc, _TOP_KEYS, "config")
    for key in ("model", "k", "data"):
        if key not in doc:
            raise ConfigError(f"config is missing {key!r}")
    data = doc["data"]
    _reject_unknown(data, _DATA_KEYS, "data")
    if base_dir is not None:
        data = {key: str((base_dir / path).resolve()) for key, path in data.items()}
    dnn = doc.get("dnn", {})
    _reject_unknown(dnn, _DNN_KEYS, "dnn")
    train_doc = doc.get("train", {})
    _reject_unknown(train_doc, {f.name for f in fields(TrainConfig)}, "train")
    try:
        train = TrainConfig(**train_doc)
    except TypeError as exc:
        raise ConfigError(f"train section: {exc}") from None
    out = doc.get("out", "out")
    if base_dir is not None:
        out = str((base_dir / out).resolve())
    return RunConfig(
        model=doc["model"],
        k=doc["k"],
        train=train,
        data=data,
        symmetric=bool(doc.get("symmetric", True)),
        dnn_widths=tuple(dnn.get("widths", DEFAULT_WIDTHS)),
        dropout=float(dnn.get("dropout", DEFAULT_DROPOUT)),
        ablation=dict(doc.get("ablation", {})),
        out=out,
    )


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_run_config(doc, path.parent)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply command-line overrides; ``None`` values are ignored."""
    doc = cfg.to_dict()
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("seed", "max_epochs", "eta"):
            doc["train"][key] = value
        else:
            doc[key] = value
    return parse_run_config(doc)

