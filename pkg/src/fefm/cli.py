"""Command line: preprocess, train, evaluate, predict, analyze, sweep, synth.

Exit status: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import rank_field_pairs
from .config import RunConfig, load_run_config, with_overrides
from .data import (
    DEFAULT_MIN_FREQUENCY,
    DEFAULT_RATIOS,
    Vocabulary,
    build_vocabulary,
    encode_rows,
    load_schema,
    read_delimited,
    read_libffm,
    split_indices,
    write_libffm,
)
from .errors import ConfigError, DataError, FefmError
from .metrics import auc_metric, log_loss_metric, sigmoid
from .model_io import load_model, save_model
from .models import count_parameters, init_model, predict_logits
from .synthetic import planted_task
from .trainer import fit

log = logging.getLogger("fefm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SWEEP_COLUMNS = ("k", "val_auc", "val_logloss", "test_auc", "test_logloss", "param_count", "status")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, inputs, outputs, config: dict | None = None) -> None:
    config_blob = json.dumps(config or {}, sort_keys=True).encode()
    manifest = {
        "command": command,
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs if Path(p).exists()],
        "outputs": sorted(str(Path(p).name) for p in outputs),
        "config": config or {},
        "config_sha256": hashlib.sha256(config_blob).hexdigest(),
        "versions": {"fefm": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_ratios(text: str) -> tuple[float, float, float]:
    try:
        ratios = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"bad ratios {text!r}") from None
    if len(ratios) != 3:
        raise ConfigError("ratios must have three comma-separated values")
    return ratios


def _metrics(model, ds) -> dict:
    probs = sigmoid(predict_logits(model, ds.active))
    out = {"logloss": log_loss_metric(probs, ds.labels)}
    try:
        out["auc"] = auc_metric(probs, ds.labels)
    except DataError:
        out["auc"] = math.nan
    return out


def cmd_preprocess(args) -> int:
    schema, label, delimiter = load_schema(args.schema)
    if args.delimiter:
        delimiter = "\t" if args.delimiter == "tab" else args.delimiter
    rows = list(read_delimited(args.input, delimiter))
    if not rows:
        raise DataError(f"{args.input}: no data rows")
    ratios = _parse_ratios(args.ratios)
    parts = split_indices(len(rows), ratios, args.seed)
    train_rows = [rows[i] for i in parts[0]]
    vocab = build_vocabulary(train_rows, schema, args.min_frequency, label)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.json")
    outputs = [out / "vocab.json"]
    sizes = []
    for name, idx in zip(("train", "val", "test"), parts):
        if len(idx) == 0:
            raise DataError(f"{name} split is empty; need more rows")
        ds = encode_rows((rows[i] for i in idx), vocab)
        write_libffm(out / f"{name}.ffm", ds)
        outputs.append(out / f"{name}.ffm")
        sizes.append(len(ds))
    write_manifest(out, "preprocess", [args.input, args.schema], outputs,
                   {"min_frequency": args.min_frequency, "ratios": list(ratios), "seed": args.seed})
    print(f"n={vocab.n} m={vocab.m} train={sizes[0]} val={sizes[1]} test={sizes[2]}")
    return EXIT_OK


def _load_split(path, vocab: Vocabulary):
    try:
        return read_libffm(path, vocab.n, vocab.m, vocab.offsets)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def train_run(cfg: RunConfig):
    """Train one model from a run config.  Returns ``(model, history, metrics)``."""
    try:
        vocab = Vocabulary.load(cfg.data["vocab"])
    except OSError as exc:
        raise DataError(f"cannot read vocabulary {cfg.data['vocab']}: {exc.strerror}") from None
    train = _load_split(cfg.data["train"], vocab)
    val = _load_split(cfg.data["val"], vocab)
    model = init_model(cfg.model, vocab.m, vocab.n, cfg.k, seed=cfg.train.seed, **cfg.model_kwargs())
    best, history = fit(model, train, val, cfg.train)
    metrics = {"best_epoch": history.best_epoch, "epochs": len(history.records)}
    metrics.update({f"val_{key}": value for key, value in _metrics(best, val).items()})
    if cfg.data.get("test"):
        test = _load_split(cfg.data["test"], vocab)
        metrics.update({f"test_{key}": value for key, value in _metrics(best, test).items()})
    metrics["param_count"] = count_parameters(best)
    return best, history, metrics


def cmd_train(args) -> int:
    cfg = with_overrides(load_run_config(args.config), seed=args.seed, out=args.out, k=args.k,
                         max_epochs=args.max_epochs)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    best, history, metrics = train_run(cfg)
    save_model(best, out / "model.bin", {"config": cfg.to_dict(), "metrics": metrics})
    history.to_csv(out / "history.csv")
    inputs = [args.config] + [p for p in cfg.data.values()]
    write_manifest(out, "train", inputs, [out / "model.bin", out / "model.bin.json", out / "history.csv"],
                   cfg.to_dict())
    print(f"best_epoch={metrics['best_epoch']} val_auc={metrics['val_auc']:.6f} "
          f"val_logloss={metrics['val_logloss']:.6f}")
    if "test_auc" in metrics:
        print(f"test_auc={metrics['test_auc']:.6f} test_logloss={metrics['test_logloss']:.6f}")
    return EXIT_OK


def _read_eval_data(model, path, vocab_path=None):
    offsets = Vocabulary.load(vocab_path).offsets if vocab_path else None
    try:
        return read_libffm(path, model.n, model.m, offsets)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def write_predictions(path, probs, labels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["probability", "label"])
        for p, y in zip(probs, labels):
            writer.writerow([repr(float(p)), 1 if y > 0 else 0])


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    ds = _read_eval_data(model, args.data, args.vocab)
    probs = sigmoid(predict_logits(model, ds.active))
    if args.predictions:
        write_predictions(args.predictions, probs, ds.labels)
    print(f"logloss={log_loss_metric(probs, ds.labels):.6f}")
    try:
        print(f"auc={auc_metric(probs, ds.labels):.6f}")
    except DataError:
        print("auc=undefined (only one class present)")
        print("warning: AUC undefined on single-class data", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    ds = _read_eval_data(model, args.data, args.vocab)
    probs = sigmoid(predict_logits(model, ds.active))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, probs, ds.labels)
    print(f"wrote {len(probs)} predictions to {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    model = load_model(args.model)
    names = Vocabulary.load(args.vocab) if args.vocab else None
    report = rank_field_pairs(model, names, args.top)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "pair_strengths.csv")
    (out / "pair_strengths.txt").write_text(report.to_text())
    write_manifest(out, "analyze", [p for p in (args.model, args.vocab) if p],
                   [out / "pair_strengths.csv", out / "pair_strengths.txt"], {"top": args.top})
    print(report.to_text(), end="")
    return EXIT_OK


def _sweep_one(cfg: RunConfig, k: int, keep_going: bool) -> dict:
    cfg_k = with_overrides(cfg, k=k)
    try:
        _, _, metrics = train_run(cfg_k)
    except FefmError as exc:
        if not keep_going:
            raise
        log.warning("k=%d failed: %s", k, exc)
        return {"k": k, "status": f"failed: {exc}"}
    row = {key: metrics.get(key, math.nan) for key in SWEEP_COLUMNS if key not in ("k", "status")}
    return {"k": k, **row, "status": "ok"}


def cmd_sweep(args) -> int:
    cfg = with_overrides(load_run_config(args.config), seed=args.seed, out=args.out, max_epochs=args.max_epochs)
    try:
        ks = [int(x) for x in args.k.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad k list {args.k!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError("k list must be non-empty positive integers")
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, [cfg] * len(ks), ks, [args.continue_on_failure] * len(ks)))
    else:
        rows = [_sweep_one(cfg, k, args.continue_on_failure) for k in ks]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(col, "")) for col in SWEEP_COLUMNS])
    write_manifest(out, "sweep", [args.config], [out / "sweep.csv"], {**cfg.to_dict(), "k_list": ks})
    print((out / "sweep.csv").read_text(), end="")
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_DATA


def _fmt(value):
    return repr(value) if isinstance(value, float) else value


def cmd_synth(args) -> int:
    """Write a planted-interaction CSV and matching schema for demos and tests."""
    task = planted_task(n=args.fields, cardinality=args.cardinality, seed=args.seed)
    rng = np.random.default_rng(args.seed + 1)
    values = rng.integers(0, task.cardinality, size=(args.rows, task.n))
    p = sigmoid(task.true_logits(values))
    labels = (rng.random(args.rows) < p).astype(int)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [f"f{i}" for i in range(task.n)]
    with open(out / "data.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + names)
        for y, row in zip(labels, values):
            writer.writerow([y] + [f"v{x}" for x in row])
    schema = {"label": "label", "delimiter": ",", "fields": [{"name": name} for name in names]}
    (out / "schema.json").write_text(json.dumps(schema, indent=2) + "\n")
    print(f"wrote {args.rows} rows to {out / 'data.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fefm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="build vocabulary and encoded splits from a raw table")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-frequency", type=int, default=DEFAULT_MIN_FREQUENCY)
    p.add_argument("--ratios", default=",".join(str(r) for r in DEFAULT_RATIOS))
    p.add_argument("--delimiter", default=None, help="override the schema delimiter (',' or 'tab')")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--max-epochs", type=int)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("evaluate", cmd_evaluate, "print AUC and log loss of a model on a data file"),
        ("predict", cmd_predict, "write click probabilities for a data file"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--vocab")
        if name == "evaluate":
            p.add_argument("--predictions", help="also write a probability,label CSV")
        else:
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("analyze", help="rank field pairs by interaction strength")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab")
    p.add_argument("--top", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="train one model per embedding dimension")
    p.add_argument("--config", required=True)
    p.add_argument("--k", required=True, help="comma-separated embedding dimensions")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--continue-on-failure", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a planted-interaction demo dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=10000)
    p.add_argument("--fields", type=int, default=8)
    p.add_argument("--cardinality", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FefmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
