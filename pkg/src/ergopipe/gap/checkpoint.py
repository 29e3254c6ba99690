"""Flat binary checkpoints.

Layout (all integers little-endian uint64, all values little-endian float64)::

    b"ERGOCKPT"
    header_len, header (UTF-8 JSON: schema_version, kind, extra fields)
    n_tensors
    repeated n_tensors times:
        ndim, dim_0 .. dim_{ndim-1}, prod(dims) float64 values (C order)
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..core import SCHEMA_VERSION, SchemaVersionMismatch
from .nets import ConvAutoencoder, Model, TaskNet

MAGIC = b"ERGOCKPT"


def save_checkpoint(path, model: Model, kind: str, **meta) -> None:
    header = json.dumps({"schema_version": SCHEMA_VERSION, "kind": kind, **meta}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<Q", len(header)), header, struct.pack("<Q", len(model.params))]
    for p in model.params:
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        parts.append(struct.pack("<Q", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[dict, list[np.ndarray]]:
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise ValueError(f"{path}: not an ergopipe checkpoint")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    header = json.loads(buf[pos:pos + hlen])
    pos += hlen
    major = str(header.get("schema_version", "")).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise SchemaVersionMismatch(f"{path}: schema {header.get('schema_version')} unsupported")
    (n,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    arrays = []
    for _ in range(n):
        (ndim,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arrays.append(np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64))
        pos += 8 * count
    return header, arrays


def load_model(path) -> tuple[Model, dict]:
    header, arrays = read_checkpoint(path)
    kind = header["kind"]
    if kind in ("obfuscator", "deobfuscator"):
        model: Model = ConvAutoencoder()
    elif kind == "task":
        model = TaskNet(int(header["n_keypoints"]), int(header["image_size"]))
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    model.load_state(arrays)
    model.freeze()
    return model, header
