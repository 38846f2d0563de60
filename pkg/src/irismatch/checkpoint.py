"""Binary checkpoint format for models and optimizer state.

Layout (all integers little-endian):

    magic "IMCN" | version u16 | meta_len u32 | meta UTF-8 JSON |
    n_records u32 | records...

Each record: name_len u16, name UTF-8, dtype tag u8 (0 = float64,
1 = float32), rank u8, extents rank x u32, then the IEEE-754 payload in
little-endian row-major order.  Save -> load -> save round-trips to
byte-identical files.

Optimizer state uses the same container with magic "IMOS".
"""

from __future__ import annotations

import json
import struct

import numpy as np

MODEL_MAGIC = b"IMCN"
OPTIM_MAGIC = b"IMOS"
FORMAT_VERSION = 1

_DTYPE_TAGS = {np.dtype("float64"): 0, np.dtype("float32"): 1}
_TAG_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class CheckpointError(ValueError):
    """Raised on malformed or mismatched checkpoint files."""


def write_records(path, magic, meta, records):
    """records: iterable of (name, ndarray)."""
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    records = list(records)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            if arr.dtype not in _DTYPE_TAGS:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for record {name!r}")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", _DTYPE_TAGS[arr.dtype]))
            fh.write(struct.pack("<B", arr.ndim))
            for ext in arr.shape:
                fh.write(struct.pack("<I", ext))
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def read_records(path, magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != magic:
        raise CheckpointError(f"bad magic in {path}: {raw[:4]!r}, expected {magic!r}")
    off = 4
    (version,) = struct.unpack_from("<H", raw, off)
    off += 2
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    meta = json.loads(raw[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (n_records,) = struct.unpack_from("<I", raw, off)
    off += 4
    records = {}
    for _ in range(n_records):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        tag, rank = struct.unpack_from("<BB", raw, off)
        off += 2
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} for record {name!r}")
        extents = struct.unpack_from(f"<{rank}I", raw, off) if rank else ()
        off += 4 * rank
        dtype = _TAG_DTYPES[tag]
        count = int(np.prod(extents)) if extents else 1
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(extents)
        off += count * dtype.itemsize
        records[name] = arr.astype(dtype.newbyteorder("="))
    if off != len(raw):
        raise CheckpointError(f"{len(raw) - off} trailing bytes in {path}")
    return meta, records


def save_model(model, path):
    """Write the model's architecture descriptor and every parameter/buffer."""
    write_records(path, MODEL_MAGIC, model.config.to_dict(), model.state_items())


def load_model(path):
    """Rebuild a model from a checkpoint; outputs match the saved model bitwise."""
    from .matcher import IrisMatchModel, ModelConfig

    meta, records = read_records(path, MODEL_MAGIC)
    model = IrisMatchModel(ModelConfig.from_dict(meta))
    expected = dict(model.state_items())
    if set(expected) != set(records):
        missing = set(expected) - set(records)
        extra = set(records) - set(expected)
        raise CheckpointError(f"record mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, tens in model.named_parameters():
        if records[name].shape != tens.data.shape:
            raise CheckpointError(f"shape mismatch for {name}")
        tens.data = records[name].copy()
    for name, buf in model.named_buffers():
        buf[...] = records[name]
    return model


def save_optimizer(optimizer, path):
    meta = {"type": "adam", "step": optimizer.step_count, "lr": optimizer.lr,
            "beta1": optimizer.beta1, "beta2": optimizer.beta2, "eps": optimizer.eps}
    records = []
    for name in sorted(optimizer.m):
        records.append((f"{name}.m", optimizer.m[name]))
        records.append((f"{name}.v", optimizer.v[name]))
    write_records(path, OPTIM_MAGIC, meta, records)


def load_optimizer_state(path):
    """Returns (meta, moments) where moments maps parameter name -> (m, v)."""
    meta, records = read_records(path, OPTIM_MAGIC)
    moments = {}
    for key, arr in records.items():
        name, kind = key.rsplit(".", 1)
        moments.setdefault(name, [None, None])["mv".index(kind)] = arr
    return meta, {k: tuple(v) for k, v in moments.items()}
