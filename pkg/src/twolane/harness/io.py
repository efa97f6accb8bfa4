"""Trace files: one CSV per field plus JSON metrics and the resolved config."""

from __future__ import annotations

import json
import os

import numpy as np

from ..errors import TwoLaneError
from ..model import characteristic_arrays_to_physical

FIELD_NAMES = ("rho_slow", "v_slow", "rho_fast", "v_fast")


class TraceIOError(TwoLaneError):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


def _fmt(v):
    return repr(float(v))


def _write_table(path, header, times, rows):
    # repr() round-trips every float, so identical inputs give identical bytes
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for t, row in zip(times, rows):
            fh.write(_fmt(t) + "," + ",".join(_fmt(v) for v in row) + "\n")


def _json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _claim(directory, digest):
    """Refuse to mix the outputs of two different configurations in one directory."""
    marker = os.path.join(directory, "config.resolved.json")
    if digest is None or not os.path.exists(marker):
        return
    try:
        with open(marker, encoding="utf-8") as fh:
            old = json.load(fh).get("hash")
    except (OSError, ValueError):
        old = None
    if old is not None and old != digest:
        raise TraceIOError(f"{directory} already holds outputs of config {old}; use a distinct --out", path=directory)


def write_trace(trace, metrics, directory, cfg=None, ss=None, lc=None):
    """Write the file set for one run and return the list of paths.

    Field CSVs: header ``time_s, x_1, ..., x_n``; one row per record.
    Commands go to ``commands.csv``; observer estimates, when present and
    ``ss``/``lc`` are given, to ``*_hat.csv`` in physical units.
    """
    digest = cfg.digest() if cfg is not None else None
    try:
        os.makedirs(directory, exist_ok=True)
        _claim(directory, digest)
        paths = []
        header = ["time_s"] + [_fmt(x) for x in trace.x]
        for k, name in enumerate(FIELD_NAMES):
            p = os.path.join(directory, f"{name}.csv")
            _write_table(p, header, trace.times, trace.fields[:, k, :])
            paths.append(p)
        p = os.path.join(directory, "commands.csv")
        _write_table(p, ["time_s", "u_slow_mps", "u_fast_mps"], trace.times, trace.commands)
        paths.append(p)
        if trace.estimates is not None and ss is not None and lc is not None:
            est = np.stack([characteristic_arrays_to_physical(trace.x, e[:2], e[2:], ss, lc) for e in trace.estimates])
            for k, name in enumerate(FIELD_NAMES):
                p = os.path.join(directory, f"{name}_hat.csv")
                _write_table(p, header, trace.times, est[:, k, :])
                paths.append(p)
        series = metrics.series()
        cols = [c for c in series if c != "time_s"]
        p = os.path.join(directory, "norms.csv")
        _write_table(p, ["time_s"] + cols, series["time_s"], np.stack([series[c] for c in cols], axis=1))
        paths.append(p)
        p = os.path.join(directory, "metrics.json")
        _json(p, {"metrics": metrics.summary(), "trace": trace.metadata})
        paths.append(p)
        if cfg is not None:
            p = os.path.join(directory, "config.resolved.json")
            _json(p, {"hash": digest, "config": cfg.resolved()})
            paths.append(p)
    except OSError as exc:
        raise TraceIOError(f"cannot write trace files: {exc.strerror} ({exc.filename})", path=exc.filename) from None
    return paths


def read_field_csv(path):
    """``(times, x, values)`` from a field CSV written by :func:`write_trace`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x = np.array([float(v) for v in header[1:]])
    return data[:, 0], x, data[:, 1:]
