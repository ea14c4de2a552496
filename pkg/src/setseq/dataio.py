"""Dataset persistence: episode JSON-lines, the packed binary layout, CSV.

Two episode formats round-trip losslessly:

* JSON lines - one episode object per line; floats serialize via shortest
  round-trip repr.
* Packed binary - little-endian; file header is the 4-byte magic ``SSQ1``,
  a uint32 version, a uint32 episode count, and a uint32-length-prefixed
  UTF-8 JSON config blob. Each episode block is
  ``uint32 M, uint32 T, uint32 index`` followed by row-major arrays:
  x (uint8, M), states (uint8, M*T), lambda (float64, 2*T),
  frac_default (float64, 2*T), true_probs (float64, M*T*3).

CSV output uses RFC 4180 quoting/line endings via the stdlib csv module.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .sim import Episode, SimConfig

MAGIC = b"SSQ1"
BINARY_VERSION = 1


class DataError(ValueError):
    """Malformed or missing dataset input."""


# -- JSON lines -----------------------------------------------------------------


def episode_to_obj(ep: Episode) -> dict:
    return {
        "index": ep.index,
        "config": asdict(ep.config),
        "x": ep.x.tolist(),
        "states": ep.states.tolist(),
        "lambda": ep.lam.tolist(),
        "frac_default": ep.frac_default.tolist(),
        "true_probs": ep.true_probs.tolist(),
    }


def episode_from_obj(obj: dict) -> Episode:
    try:
        cfg = SimConfig(**obj["config"])
        return Episode(
            x=np.asarray(obj["x"], dtype=np.uint8),
            states=np.asarray(obj["states"], dtype=np.uint8),
            lam=np.asarray(obj["lambda"], dtype=np.float64),
            frac_default=np.asarray(obj["frac_default"], dtype=np.float64),
            true_probs=np.asarray(obj["true_probs"], dtype=np.float64),
            config=cfg,
            index=int(obj["index"]),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed episode record: {exc}") from exc


def write_episodes_jsonl(path, episodes: list[Episode]):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(json.dumps(episode_to_obj(ep)) + "\n")


def read_episodes_jsonl(path) -> list[Episode]:
    path = Path(path)
    episodes = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                episodes.append(episode_from_obj(json.loads(line)))
    return episodes


# -- packed binary ----------------------------------------------------------------


def write_episodes_binary(path, episodes: list[Episode]):
    path = Path(path)
    cfg_blob = json.dumps(asdict(episodes[0].config)).encode("utf-8") if episodes else b"{}"
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", BINARY_VERSION, len(episodes)))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        for ep in episodes:
            m, t_len = ep.states.shape
            fh.write(struct.pack("<III", m, t_len, ep.index))
            fh.write(np.ascontiguousarray(ep.x, dtype="<u1").tobytes())
            fh.write(np.ascontiguousarray(ep.states, dtype="<u1").tobytes())
            fh.write(np.ascontiguousarray(ep.lam, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ep.frac_default, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ep.true_probs, dtype="<f8").tobytes())


def read_episodes_binary(path) -> list[Episode]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path} is not an episode file (bad magic)")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != BINARY_VERSION:
        raise DataError(f"unsupported episode file version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, 12)
    offset = 16
    cfg = SimConfig(**json.loads(raw[offset: offset + cfg_len].decode("utf-8")))
    offset += cfg_len
    episodes = []
    for _ in range(count):
        m, t_len, index = struct.unpack_from("<III", raw, offset)
        offset += 12

        def take(dtype, n):
            nonlocal offset
            arr = np.frombuffer(raw, dtype=dtype, count=n, offset=offset).copy()
            offset += arr.nbytes
            return arr

        x = take("<u1", m)
        states = take("<u1", m * t_len).reshape(m, t_len)
        lam = take("<f8", 2 * t_len).reshape(2, t_len)
        frac = take("<f8", 2 * t_len).reshape(2, t_len)
        tp = take("<f8", m * t_len * 3).reshape(m, t_len, 3)
        episodes.append(Episode(x=x, states=states, lam=lam, frac_default=frac,
                                true_probs=tp, config=cfg, index=index))
    return episodes


def write_episodes(path, episodes: list[Episode]):
    path = Path(path)
    if path.suffix == ".jsonl":
        write_episodes_jsonl(path, episodes)
    else:
        write_episodes_binary(path, episodes)


def read_episodes(path) -> list[Episode]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"episode file not found: {path}")
    if path.suffix == ".jsonl":
        return read_episodes_jsonl(path)
    return read_episodes_binary(path)


# -- market panels ------------------------------------------------------------------


def save_market(directory, market):
    """Named-array checkpoint plus a feature-name manifest."""
    from .checkpoint import save_checkpoint
    from .market import FEATURE_NAMES

    directory = Path(directory)
    save_checkpoint(directory, {
        "features": market.features,
        "returns": market.returns,
        "market_returns": market.market_returns,
        "oracle_weights": market.oracle_weights,
        "signal": market.signal,
    }, meta={
        "kind": "market",
        "feature_names": list(FEATURE_NAMES),
        "config": asdict(market.config),
    })
    return directory


def load_market(directory):
    from .checkpoint import load_checkpoint
    from .market import Market, MarketConfig

    arrays, meta = load_checkpoint(Path(directory))
    if meta.get("kind") != "market":
        raise DataError(f"{directory} is not a saved market")
    return Market(
        features=arrays["features"].data,
        returns=arrays["returns"].data,
        market_returns=arrays["market_returns"].data,
        oracle_weights=arrays["oracle_weights"].data,
        signal=arrays["signal"].data,
        config=MarketConfig(**meta["config"]),
    )


# -- CSV ---------------------------------------------------------------------------


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path):
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise DataError(f"empty csv: {path}")
    return rows[0], rows[1:]
