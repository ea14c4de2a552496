"""Run manifests: every CLI output directory records how it was produced.

The manifest carries the command, the full config snapshot, seeds, a
content hash over the inputs, output paths, wall time, and the active
kernel backend. Re-running the same command with the same inputs
reproduces the outputs (single-threaded mode).
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from .backend import ACTIVE_BACKEND
from .dataio import DataError

MANIFEST_NAME = "manifest.json"


def content_hash(config: dict | None = None, input_paths: list | None = None) -> str:
    h = hashlib.sha256()
    if config is not None:
        h.update(json.dumps(config, sort_keys=True).encode("utf-8"))
    for p in sorted(str(p) for p in (input_paths or [])):
        path = Path(p)
        h.update(path.name.encode("utf-8"))
        if path.is_file():
            h.update(path.read_bytes())
        elif path.is_dir():
            for sub in sorted(path.rglob("*")):
                if sub.is_file():
                    h.update(sub.name.encode("utf-8"))
                    h.update(sub.read_bytes())
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, seed,
                   input_paths: list | None = None, outputs: list | None = None,
                   wall_time_s: float | None = None, deterministic: bool = False) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "inputs_hash": content_hash(config, input_paths),
        "outputs": [str(o) for o in (outputs or [])],
        "wall_time_s": wall_time_s,
        "backend": ACTIVE_BACKEND,
        "deterministic": deterministic,
        "created_unix": time.time(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return path


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no {MANIFEST_NAME} in {directory}; refusing unmanifested inputs")
    return json.loads(path.read_text("utf-8"))
