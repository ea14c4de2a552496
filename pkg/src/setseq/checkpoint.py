"""Exact checkpointing of named parameter maps.

A checkpoint is a directory holding ``params.bin`` (the raw little-endian
array bytes, concatenated in manifest order) and ``params.json`` (name,
dtype, shape, byte offset and length per entry, plus free-form metadata).
Round-trips are bit-exact. Writes go through a temp file and an atomic
rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MAGIC = "setseq-checkpoint"
VERSION = 1


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(directory, params: dict, meta: dict | None = None) -> Path:
    """Write ``params`` (name -> Tensor or ndarray) under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
        raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format": MAGIC,
        "version": VERSION,
        "byte_order": "little",
        "entries": entries,
        "meta": meta or {},
    }
    _atomic_write(directory / "params.bin", b"".join(blobs))
    _atomic_write(directory / "params.json",
                  json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8"))
    return directory


def load_checkpoint(directory, requires_grad: bool = False):
    """Read a checkpoint; returns (params dict of Tensors, meta dict)."""
    directory = Path(directory)
    manifest = json.loads((directory / "params.json").read_text("utf-8"))
    if manifest.get("format") != MAGIC:
        raise ValueError(f"not a parameter checkpoint: {directory}")
    raw = (directory / "params.bin").read_bytes()
    params = {}
    for entry in manifest["entries"]:
        dt = np.dtype(entry["dtype"]).newbyteorder("<")
        arr = np.frombuffer(raw, dtype=dt, count=int(np.prod(entry["shape"], dtype=int)) if entry["shape"] else 1,
                            offset=entry["offset"])
        arr = arr.reshape(entry["shape"]).astype(entry["dtype"], copy=True)
        params[entry["name"]] = Tensor(arr, requires_grad=requires_grad)
    return params, manifest.get("meta", {})
