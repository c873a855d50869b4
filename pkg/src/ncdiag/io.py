"""On-disk formats: chains, data files, estimate caches and JSON helpers.

Every writer goes through :func:`atomic_write_text`, which writes a
temporary file in the target directory and renames it into place, so a
reader never sees a partial file.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .model import data_from_json, data_to_json
from .samplers import SampleChain
from .score_approx import PointEstimates

__all__ = [
    "atomic_write_text",
    "dumps",
    "fmt",
    "write_json",
    "read_json",
    "config_hash",
    "data_hash",
    "write_chain",
    "read_chain",
    "write_data",
    "read_data",
    "EstimateCache",
]


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n"


def fmt(value: float) -> str:
    """Shortest round-tripping text for a float; empty for missing values."""
    if value is None:
        return ""
    v = float(value)
    if np.isnan(v):
        return "nan"
    return repr(v)


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=_default).encode()).hexdigest()[:16]


def data_hash(model_name: str, data) -> str:
    return config_hash(data_to_json(model_name, data))


# ---------------------------------------------------------------------------
# chains


def write_chain(path, chain: SampleChain) -> Path:
    """Write ``iteration, theta_1..theta_p`` rows to CSV and bounds/weights/meta to ``<path>.json``."""
    path = Path(path)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration"] + [f"theta_{j + 1}" for j in range(chain.dim)])
    for i, row in enumerate(chain.points):
        w.writerow([i] + [fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())
    uniform = np.array_equal(chain.weights, np.full(len(chain), 1.0 / len(chain)))
    sidecar = {
        "lower": chain.lower,
        "upper": chain.upper,
        "weights": None if uniform else chain.weights,
        "meta": chain.meta,
    }
    write_json(path.with_suffix(path.suffix + ".json"), sidecar)
    return path


def read_chain(path) -> SampleChain:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path} holds no chain points")
    points = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    side = read_json(path.with_suffix(path.suffix + ".json"))
    lower = np.array([-np.inf if v is None else v for v in side["lower"]], dtype=float)
    upper = np.array([np.inf if v is None else v for v in side["upper"]], dtype=float)
    return SampleChain(points, lower, upper, side.get("weights"), side.get("meta", {}))


# ---------------------------------------------------------------------------
# data


def write_data(path, model_name: str, data, provenance: dict) -> Path:
    return write_json(path, {"data": data_to_json(model_name, data), "provenance": provenance})


def read_data(path):
    """Return ``(model_name, data, provenance)`` from a data file."""
    obj = read_json(path)
    payload = obj["data"] if "data" in obj and isinstance(obj["data"], dict) else obj
    return payload["model"], data_from_json(payload), obj.get("provenance", {})


# ---------------------------------------------------------------------------
# estimate cache


class EstimateCache:
    """Per-configuration JSON store of :class:`PointEstimates` keyed by point.

    One file per ``(model, model config, data, N, seed, burn_in)`` so that
    estimates made under different settings never mix.
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def key(self, model, data, N: int, seed: int, burn_in: int) -> str:
        return config_hash(
            {
                "model": model.name,
                "model_config": model.config(),
                "data": data_hash(model.name, data),
                "N": int(N),
                "seed": int(seed),
                "burn_in": int(burn_in),
            }
        )

    def path(self, key: str) -> Path:
        return self.directory / f"estimates-{key}.json"

    def load(self, key: str) -> dict[str, PointEstimates]:
        p = self.path(key)
        if not p.exists():
            return {}
        return {k: PointEstimates.from_json(v) for k, v in read_json(p)["points"].items()}

    def save(self, key: str, estimates: dict[str, PointEstimates]) -> Path:
        return write_json(self.path(key), {"points": {k: v.to_json() for k, v in estimates.items()}})
