"""Raw CTR tables to encoded one-feature-per-field instances.

The pipeline is: read delimited rows, split them, fit a frequency-filtered
vocabulary on the training rows, then encode every row into an ``Instance``
holding exactly one active feature id per field.

Feature ids are laid out field by field.  Inside a field the retained values
come first (sorted) and the field's unknown id is the last id of its block.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

DEFAULT_MIN_FREQUENCY = 20
DEFAULT_RATIOS = (0.64, 0.16, 0.20)
VOCAB_FORMAT = "fefm-vocabulary"
VOCAB_VERSION = 1

CATEGORICAL = "categorical"
NUMERIC = "numeric"


def _hour_of_day(value: str) -> str:
    # YYMMDDHH timestamps (Avazu) keep their trailing hour digits.
    hour = int(float(value)) % 100
    if hour > 23:
        hour %= 24
    return str(hour)


def _mod24(value: str) -> str:
    return str(int(float(value)) % 24)


def _floor_int(value: str) -> str:
    x = float(value)
    if not math.isfinite(x):
        raise ValueError(f"non-finite numeric value {value!r}")
    return str(math.floor(x))


TRANSFORMS: dict[str, Callable[[str], str]] = {
    "hour_of_day": _hour_of_day,
    "mod24": _mod24,
    "floor": _floor_int,
}


@dataclass(frozen=True)
class FieldSchema:
    """One input column.

    ``transform`` names an entry of ``TRANSFORMS``.  Numeric columns without a
    transform are floored to integers.  ``on_unparseable`` controls numeric
    values that do not parse: ``"error"`` raises, ``"unknown"`` maps them to
    the field's unknown id.
    """

    name: str
    kind: str = CATEGORICAL
    transform: str | None = None
    dropped: bool = False
    on_unparseable: str = "error"

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERIC):
            raise ConfigError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if self.transform is not None and self.transform not in TRANSFORMS:
            raise ConfigError(f"field {self.name!r}: unknown transform {self.transform!r}")
        if self.on_unparseable not in ("error", "unknown"):
            raise ConfigError(f"field {self.name!r}: on_unparseable must be 'error' or 'unknown'")

    def canonical(self, raw: str) -> str | None:
        """Apply the declared transform.  ``None`` means "use the unknown id"."""
        raw = raw.strip()
        if self.kind == CATEGORICAL and self.transform is None:
            return raw
        if raw == "":
            # Empty numeric cells are a category of their own.
            return ""
        fn = TRANSFORMS[self.transform or "floor"]
        try:
            return fn(raw)
        except (ValueError, OverflowError):
            if self.on_unparseable == "unknown":
                return None
            raise DataError(f"field {self.name!r}: cannot parse numeric value {raw!r}") from None


def _check_schema(schema: Sequence[FieldSchema], label_column: str) -> None:
    names = [f.name for f in schema]
    dupes = sorted(name for name, c in Counter(names).items() if c > 1)
    if dupes:
        raise ConfigError(f"duplicate field names: {dupes}")
    if label_column in names:
        raise ConfigError(f"label column {label_column!r} is also declared as a field")
    if not any(not f.dropped for f in schema):
        raise ConfigError("schema has no active fields")


def load_schema(path: str | Path) -> tuple[list[FieldSchema], str, str]:
    """Read a JSON schema file.  Returns ``(fields, label_column, delimiter)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or "fields" not in doc:
        raise ConfigError(f"{path}: schema must be an object with a 'fields' list")
    unknown = set(doc) - {"fields", "label", "delimiter"}
    if unknown:
        raise ConfigError(f"{path}: unknown schema keys {sorted(unknown)}")
    fields = []
    for entry in doc["fields"]:
        if isinstance(entry, str):
            entry = {"name": entry}
        try:
            fields.append(FieldSchema(**entry))
        except TypeError as exc:
            raise ConfigError(f"{path}: bad field entry {entry!r} ({exc})") from None
    label = doc.get("label", "label")
    delimiter = doc.get("delimiter", ",")
    if delimiter == "tab":
        delimiter = "\t"
    _check_schema(fields, label)
    return fields, label, delimiter


def read_delimited(path: str | Path, delimiter: str = ",") -> Iterator[dict[str, str]]:
    """Yield rows of a headed delimited file as ``{column: value}`` dicts."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            return
        for lineno, values in enumerate(reader, start=2):
            if not values:
                continue
            if len(values) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(values)}")
            yield dict(zip(header, values))


def parse_label(raw) -> int:
    """Map the 0/1 or -1/+1 label encodings to -1/+1."""
    if raw is None:
        raise DataError("missing label")
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise DataError(f"unparseable label {raw!r}") from None
    if value == 1:
        return 1
    if value in (0, -1):
        return -1
    raise DataError(f"label must be one of 0, 1, -1, got {raw!r}")


@dataclass
class Vocabulary:
    schema: tuple[FieldSchema, ...]
    label_column: str
    # per active field: retained value -> feature id
    values: list[dict[str, int]]
    frequencies: np.ndarray
    offsets: np.ndarray
    min_frequency: int = DEFAULT_MIN_FREQUENCY
    _numeric_index: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.frequencies = np.asarray(self.frequencies, dtype=np.int64)
        self._numeric_index = []
        for f, fs in enumerate(self.fields):
            if fs.kind != NUMERIC:
                self._numeric_index.append(None)
                continue
            pairs = []
            for value, fid in self.values[f].items():
                try:
                    pairs.append((int(value), fid))
                except ValueError:
                    continue
            pairs.sort()
            self._numeric_index.append(([p[0] for p in pairs], [p[1] for p in pairs]))

    @property
    def fields(self) -> tuple[FieldSchema, ...]:
        return tuple(f for f in self.schema if not f.dropped)

    @property
    def n(self) -> int:
        return len(self.fields)

    @property
    def m(self) -> int:
        return int(self.offsets[-1])

    @property
    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    @property
    def feature_index(self) -> dict[tuple[str, str], int]:
        return {
            (fs.name, value): fid
            for fs, mapping in zip(self.fields, self.values)
            for value, fid in mapping.items()
        }

    def unknown_id(self, f: int) -> int:
        return int(self.offsets[f + 1] - 1)

    def field_of(self, feature_id) -> np.ndarray:
        return np.searchsorted(self.offsets, feature_id, side="right") - 1

    def lookup(self, f: int, raw: str) -> int:
        fs = self.fields[f]
        value = fs.canonical(raw)
        if value is None:
            return self.unknown_id(f)
        fid = self.values[f].get(value)
        if fid is not None:
            return fid
        if fs.kind == NUMERIC and value != "":
            return self._nearest_numeric(f, int(value))
        return self.unknown_id(f)

    def _nearest_numeric(self, f: int, x: int) -> int:
        keys, ids = self._numeric_index[f]
        if not keys:
            return self.unknown_id(f)
        pos = bisect.bisect_left(keys, x)
        if pos == 0:
            return ids[0]
        if pos == len(keys):
            return ids[-1]
        lo, hi = keys[pos - 1], keys[pos]
        # ties go to the smaller value
        return ids[pos - 1] if x - lo <= hi - x else ids[pos]

    def to_dict(self) -> dict:
        features = []
        for f, mapping in enumerate(self.values):
            for value, fid in mapping.items():
                features.append([f, value, fid, int(self.frequencies[fid])])
            features.append([f, None, self.unknown_id(f), int(self.frequencies[self.unknown_id(f)])])
        return {
            "format": VOCAB_FORMAT,
            "version": VOCAB_VERSION,
            "n": self.n,
            "m": self.m,
            "label": self.label_column,
            "min_frequency": self.min_frequency,
            "schema": [asdict(s) for s in self.schema],
            "features": features,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid vocabulary file ({exc})") from None
        if doc.get("format") != VOCAB_FORMAT:
            raise DataError(f"{path}: not a vocabulary file")
        if doc.get("version") != VOCAB_VERSION:
            raise DataError(f"{path}: unsupported vocabulary version {doc.get('version')}")
        schema = tuple(FieldSchema(**s) for s in doc["schema"])
        n, m = doc["n"], doc["m"]
        values: list[dict[str, int]] = [{} for _ in range(n)]
        freqs = np.zeros(m, dtype=np.int64)
        counts = np.zeros(n, dtype=np.int64)
        for f, value, fid, freq in doc["features"]:
            freqs[fid] = freq
            counts[f] += 1
            if value is not None:
                values[f][value] = fid
        offsets = np.concatenate([[0], np.cumsum(counts)])
        vocab = cls(schema, doc["label"], values, freqs, offsets, doc.get("min_frequency", 1))
        if vocab.n != n or vocab.m != m:
            raise DataError(f"{path}: header n/m disagree with feature table")
        return vocab


def build_vocabulary(
    raw_rows: Iterable[Mapping[str, str]],
    schema: Sequence[FieldSchema],
    min_frequency: int = DEFAULT_MIN_FREQUENCY,
    label_column: str = "label",
) -> Vocabulary:
    """Count values per active field and keep those seen ``min_frequency`` times.

    Values below the threshold are not assigned ids; at encoding time they
    resolve to the field's unknown id (or the nearest retained integer for
    numeric fields).
    """
    if min_frequency < 1:
        raise ConfigError("min_frequency must be >= 1")
    _check_schema(schema, label_column)
    known = {s.name for s in schema} | {label_column}
    active = [s for s in schema if not s.dropped]
    counters = [Counter() for _ in active]
    rows_seen = 0
    for row in raw_rows:
        rows_seen += 1
        extra = set(row) - known
        if extra:
            raise DataError(f"row {rows_seen}: unknown columns {sorted(extra)}")
        for f, fs in enumerate(active):
            if fs.name not in row:
                raise DataError(f"row {rows_seen}: missing column {fs.name!r}")
            value = fs.canonical(row[fs.name])
            counters[f][value] += 1
    if rows_seen == 0:
        raise DataError("cannot build a vocabulary from an empty row stream")

    values: list[dict[str, int]] = []
    freqs: list[int] = []
    offsets = [0]
    for fs, counter in zip(active, counters):
        kept = [v for v, c in counter.items() if v is not None and c >= min_frequency]
        kept.sort(key=_sort_key if fs.kind == NUMERIC else None)
        base = offsets[-1]
        values.append({v: base + i for i, v in enumerate(kept)})
        freqs.extend(counter[v] for v in kept)
        # unknown id: last in the block, counts the filtered occurrences
        freqs.append(sum(c for v, c in counter.items() if v is None or c < min_frequency))
        offsets.append(base + len(kept) + 1)
    return Vocabulary(tuple(schema), label_column, values, np.array(freqs), np.array(offsets), min_frequency)


def _sort_key(value: str):
    try:
        return (0, int(value), "")
    except ValueError:
        return (1, 0, value)


@dataclass(frozen=True)
class Instance:
    label: int
    active: np.ndarray


@dataclass
class Dataset:
    """Encoded examples stored column-wise.

    ``active[d, f]`` is the feature id of field ``f`` in example ``d``.
    Iterating or indexing yields ``Instance`` objects.
    """

    labels: np.ndarray
    active: np.ndarray
    n: int
    m: int
    offsets: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.active = np.asarray(self.active, dtype=np.int64).reshape(len(self.labels), -1)
        if len(self.labels) == 0:
            raise DataError("dataset is empty")
        if self.active.shape[1] != self.n:
            raise DataError(f"instances have {self.active.shape[1]} fields, expected {self.n}")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise DataError("labels must be -1 or +1")
        if self.active.min() < 0 or self.active.max() >= self.m:
            raise DataError(f"feature ids outside [0, {self.m})")
        if self.offsets is not None:
            self.offsets = np.asarray(self.offsets, dtype=np.int64)
            owner = np.searchsorted(self.offsets, self.active, side="right") - 1
            if not np.array_equal(owner, np.broadcast_to(np.arange(self.n), owner.shape)):
                raise DataError("an active feature does not belong to its field position")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, d: int) -> Instance:
        return Instance(int(self.labels[d]), self.active[d])

    def __iter__(self) -> Iterator[Instance]:
        for d in range(len(self)):
            yield self[d]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.labels[idx], self.active[idx], self.n, self.m, self.offsets)

    @property
    def labels01(self) -> np.ndarray:
        return (self.labels > 0).astype(np.int64)


def encode_instance(raw_row: Mapping[str, str], vocab: Vocabulary) -> Instance:
    label = parse_label(raw_row.get(vocab.label_column))
    active = np.empty(vocab.n, dtype=np.int64)
    for f, fs in enumerate(vocab.fields):
        if fs.name not in raw_row:
            raise DataError(f"row is missing field {fs.name!r}")
        active[f] = vocab.lookup(f, raw_row[fs.name])
    return Instance(label, active)


def encode_rows(rows: Iterable[Mapping[str, str]], vocab: Vocabulary) -> Dataset:
    instances = [encode_instance(r, vocab) for r in rows]
    if not instances:
        raise DataError("no rows to encode")
    return Dataset(
        np.array([i.label for i in instances]),
        np.stack([i.active for i in instances]),
        vocab.n,
        vocab.m,
        vocab.offsets,
    )


def _check_ratios(ratios: Sequence[float]) -> None:
    if len(ratios) != 3:
        raise ConfigError("ratios must be (train, validation, test)")
    if any(r <= 0 for r in ratios):
        raise ConfigError(f"ratios must be positive, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)!r}")


def split_indices(N: int, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0):
    """Shuffle ``range(N)`` and cut it into train/validation/test index arrays.

    Validation and test get ``floor(ratio * N)`` rows; train takes the rest.
    """
    _check_ratios(ratios)
    if N <= 0:
        raise DataError("cannot split an empty dataset")
    perm = np.random.default_rng(seed).permutation(N)
    n_val = math.floor(ratios[1] * N + 1e-9)
    n_test = math.floor(ratios[2] * N + 1e-9)
    n_train = N - n_val - n_test
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split_dataset(ds: Dataset, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0):
    return tuple(ds.subset(idx) for idx in split_indices(len(ds), ratios, seed))


def parse_libffm_line(line: str, n: int) -> tuple[int, list[tuple[int, int]]]:
    """Parse ``label field:feature:1 ...`` into ``(label, [(field, feature), ...])``."""
    tokens = line.split()
    if not tokens:
        raise DataError("empty line")
    label = parse_label(tokens[0])
    pairs = []
    seen = set()
    for tok in tokens[1:]:
        parts = tok.split(":")
        if len(parts) != 3:
            raise DataError(f"malformed token {tok!r}")
        try:
            f, j, value = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise DataError(f"malformed token {tok!r}") from None
        if value != 1:
            raise DataError(f"token {tok!r}: only binary value 1 is supported")
        if not 0 <= f < n:
            raise DataError(f"token {tok!r}: field {f} outside [0, {n})")
        if j < 0:
            raise DataError(f"token {tok!r}: negative feature id")
        if f in seen:
            raise DataError(f"duplicate field {f} in line")
        seen.add(f)
        pairs.append((f, j))
    return label, pairs


def format_libffm_line(inst: Instance) -> str:
    label = "1" if inst.label > 0 else "0"
    return " ".join([label] + [f"{f}:{int(j)}:1" for f, j in enumerate(inst.active)])


def read_libffm(path: str | Path, n: int, m: int, offsets=None) -> Dataset:
    labels, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                label, pairs = parse_libffm_line(line, n)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if len(pairs) != n:
                raise DataError(f"{path}:{lineno}: expected {n} fields, got {len(pairs)}")
            active = [0] * n
            for f, j in pairs:
                active[f] = j
            labels.append(label)
            rows.append(active)
    if not rows:
        raise DataError(f"{path}: no instances")
    return Dataset(np.array(labels), np.array(rows), n, m, offsets)


def write_libffm(path: str | Path, ds: Dataset) -> None:
    with open(path, "w") as fh:
        for inst in ds:
            fh.write(format_libffm_line(inst) + "\n")
