"""Binary model files plus a JSON metadata sidecar.

Layout (little-endian)::

    magic "FEFMMODL" | u32 version | u8 kind | u8 symmetric | u8 ablation bits | u8 pad
    u64 m | u64 n | u64 k
    DeepFEFM only: u32 layer count | f64 dropout | u64 width per layer
    parameter blocks in declaration order as float64
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .deep import ABLATION_FLAGS, DeepFefmParams, DnnParams, dnn_input_width
from .errors import DataError
from .models import Model
from .shallow import ShallowParams

MAGIC = b"FEFMMODL"
FORMAT_VERSION = 1
KIND_CODES = {"LR": 0, "FM": 1, "FFM": 2, "FwFM": 3, "FEFM": 4, "DeepFEFM": 5}
_HEADER = struct.Struct("<8sIBBBBQQQ")
_DEEP = struct.Struct("<Id")


def _flag_bits(model) -> int:
    if not isinstance(model, DeepFefmParams):
        return 0
    return sum(1 << i for i, name in enumerate(ABLATION_FLAGS) if getattr(model, name))


def dumps(model: Model) -> bytes:
    parts = [
        _HEADER.pack(
            MAGIC, FORMAT_VERSION, KIND_CODES[model.kind], int(model.symmetric), _flag_bits(model), 0,
            model.m, model.n, model.k,
        )
    ]
    if isinstance(model, DeepFefmParams):
        widths = model.dnn.widths
        parts.append(_DEEP.pack(len(widths), model.dnn.dropout))
        parts.append(struct.pack(f"<{len(widths)}Q", *widths))
    for arr in model.arrays().values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def _shallow_template(kind: str, m: int, n: int, k: int, symmetric: bool) -> ShallowParams:
    P = n * (n - 1) // 2
    blocks = {"w0": np.zeros(1), "w": np.zeros(m)}
    if kind in ("FM", "FwFM", "FEFM"):
        blocks["v"] = np.zeros((m, k))
    if kind == "FFM":
        blocks["v_ffm"] = np.zeros((m, n - 1, k))
    if kind == "FwFM":
        blocks["r"] = np.zeros(P)
    if kind == "FEFM":
        blocks["u"] = np.zeros((P, k, k))
    return ShallowParams(kind, n, k, symmetric=symmetric, **blocks)


def loads(buf: bytes) -> Model:
    if len(buf) < _HEADER.size:
        raise DataError("model file truncated (header)")
    magic, version, code, symmetric, bits, _, m, n, k = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DataError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version}")
    kinds = {v: key for key, v in KIND_CODES.items()}
    if code not in kinds:
        raise DataError(f"unknown model kind code {code}")
    kind = kinds[code]
    pos = _HEADER.size
    fefm = _shallow_template("FEFM" if kind == "DeepFEFM" else kind, m, n, k, bool(symmetric))
    model: Model = fefm
    if kind == "DeepFEFM":
        n_layers, dropout = _DEEP.unpack_from(buf, pos)
        pos += _DEEP.size
        widths = struct.unpack_from(f"<{n_layers}Q", buf, pos)
        pos += 8 * n_layers
        flags = {name: bool(bits >> i & 1) for i, name in enumerate(ABLATION_FLAGS)}
        width = dnn_input_width(n, k, flags["dnn_input_feature_embeddings"], flags["dnn_input_fefm_embeddings"])
        weights, biases, prev = [], [], width
        for w in widths:
            weights.append(np.zeros((prev, w)))
            biases.append(np.zeros(w))
            prev = w
        model = DeepFefmParams(fefm, DnnParams(weights, biases, np.zeros(prev), dropout), **flags)
    for arr in model.arrays().values():
        size = arr.size * 8
        if pos + size > len(buf):
            raise DataError("model file truncated (parameters)")
        arr[...] = np.frombuffer(buf, dtype="<f8", count=arr.size, offset=pos).reshape(arr.shape)
        pos += size
    if pos != len(buf):
        raise DataError(f"model file has {len(buf) - pos} trailing bytes")
    return model


def save_model(model: Model, path, metadata: dict | None = None) -> None:
    path = Path(path)
    path.write_bytes(dumps(model))
    if metadata is not None:
        sidecar = {"kind": model.kind, "m": model.m, "n": model.n, "k": model.k, **metadata}
        metadata_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_model(path) -> Model:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc.strerror}") from None
    return loads(buf)


def metadata_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")
