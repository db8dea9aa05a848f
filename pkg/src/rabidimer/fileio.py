"""Plain-text serialization for time series and JSON result payloads."""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from .propagate import TimeSeries


def write_timeseries_csv(path: str, series: Sequence[TimeSeries]):
    """One `# t, <label>...` header line, then %.17g rows (round-trip exact).

    All series must share one time grid; columns appear in input order.
    """
    if not series:
        raise ValueError("need at least one series")
    t = series[0].times
    for s in series[1:]:
        if s.times.shape != t.shape or not np.array_equal(s.times, t):
            raise ValueError("series do not share a time grid")
    labels = [s.label or f"col{i}" for i, s in enumerate(series)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# t, " + ", ".join(labels) + "\n")
        cols = [t] + [s.values for s in series]
        for row in zip(*cols):
            fh.write(", ".join(f"{x:.17g}" for x in row) + "\n")


def read_timeseries_csv(path: str) -> list[TimeSeries]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"missing header line in {path}")
        names = [c.strip() for c in header.lstrip("#").split(",")]
        if not names or names[0] != "t":
            raise ValueError(f"header must start with 't': {path}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(names):
        raise ValueError(f"column count mismatch in {path}: header lists "
                         f"{len(names)}, rows carry {data.shape[1]}")
    return [TimeSeries(times=data[:, 0], values=data[:, 1 + i], label=name)
            for i, name in enumerate(names[1:])]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if np.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: str, payload: dict):
    """JSON dump that tolerates numpy scalars/arrays; NaN becomes null."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, allow_nan=False)
        fh.write("\n")
