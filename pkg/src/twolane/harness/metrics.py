"""Deviation norms, convergence times and the analytic settling bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..model import TrafficField, physical_to_characteristic

# settling times printed with the original simulations (s); kept as reference only
REPORTED_TIMES = {"t_f": 260.0, "t_o": 310.0, "t_out": 570.0}


def analytic_times(lc):
    """``t_f = L/eps1 + L/mu2 + L/mu1``, ``t_o = L/eps1 + L/eps2 + L/mu2``, ``t_out = t_o + t_f``."""
    t_f, t_o, t_out = lc.finite_times()
    return {"t_f": t_f, "t_o": t_o, "t_out": t_out}


def lane_norms(fields, ss, dx):
    """Relative spatial L2 deviation per lane, shape ``(n_rec, 2)``.

    Densities and speeds are made dimensionless by their steady values so the
    two can be added: ``sqrt(dx * sum((rho/rho* - 1)^2 + (v/v* - 1)^2))``.
    """
    star = np.array([ss.rho_star_slow, ss.v_star_slow, ss.rho_star_fast, ss.v_star_fast])
    rel = fields / star[None, :, None] - 1.0
    sq = dx * np.sum(rel**2, axis=2)  # (n_rec, 4)
    return np.sqrt(np.stack([sq[:, 0] + sq[:, 1], sq[:, 2] + sq[:, 3]], axis=1))


def combined_norm(fields, ss, dx):
    n = lane_norms(fields, ss, dx)
    return np.sqrt(np.sum(n**2, axis=1))


def convergence_time(times, values, threshold):
    """First recorded time after which ``values / values[0]`` stays below ``threshold``.

    ``None`` when the last sample is still above it (or the initial norm is 0).
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0 or values[0] == 0.0:
        return None
    rel = values / values[0]
    above = np.nonzero(rel >= threshold)[0]
    if above.size == 0:
        return float(times[0])
    last = above[-1]
    if last == rel.size - 1:
        return None
    return float(times[last + 1])


def value_at(times, values, t):
    """Linear interpolation of a recorded series at time ``t``."""
    return float(np.interp(t, times, values))


@dataclass
class Metrics:
    times: np.ndarray
    l2_slow: np.ndarray
    l2_fast: np.ndarray
    l2_combined: np.ndarray
    estimation_error_l2: np.ndarray | None
    threshold: float
    convergence_time: float | None
    estimation_convergence_time: float | None
    t_f: float
    t_o: float
    t_out: float
    extra: dict = field(default_factory=dict)

    @property
    def relative(self):
        c0 = self.l2_combined[0]
        return self.l2_combined / c0 if c0 > 0.0 else np.zeros_like(self.l2_combined)

    def summary(self):
        """Scalar fields for ``metrics.json``."""
        rel = self.relative
        out = {
            "threshold": self.threshold,
            "convergence_time_s": self.convergence_time,
            "estimation_convergence_time_s": self.estimation_convergence_time,
            "t_f_s": self.t_f,
            "t_o_s": self.t_o,
            "t_out_s": self.t_out,
            "reported_reference_s": dict(REPORTED_TIMES),
            "initial_l2": float(self.l2_combined[0]),
            "final_l2": float(self.l2_combined[-1]),
            "final_relative": float(rel[-1]),
            "relative_at": {
                f"{k}_x1.05": value_at(self.times, rel, 1.05 * v)
                for k, v in (("t_f", self.t_f), ("t_o", self.t_o), ("t_out", self.t_out))
                if 1.05 * v <= self.times[-1]
            },
        }
        if self.estimation_error_l2 is not None:
            e0 = self.estimation_error_l2[0]
            out["final_estimation_relative"] = float(self.estimation_error_l2[-1] / e0) if e0 > 0 else 0.0
        out.update(self.extra)
        return _clean(out)

    def series(self):
        cols = {
            "time_s": self.times,
            "l2_slow": self.l2_slow,
            "l2_fast": self.l2_fast,
            "l2_combined": self.l2_combined,
            "relative": self.relative,
        }
        if self.estimation_error_l2 is not None:
            cols["estimation_error_l2"] = self.estimation_error_l2
        return cols


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def estimation_error(trace, plant, lc):
    """Characteristic-space L2 norm of ``state - estimate`` per record (m/s * sqrt(m))."""
    if trace.estimates is None:
        return None
    if trace.char is not None:
        truth = trace.char
    else:
        truth = np.stack(
            [physical_to_characteristic(TrafficField.from_stack(trace.x, f), plant.ss, lc).stack() for f in trace.fields]
        )
    dx = plant.grid.dx
    return np.sqrt(dx * np.sum((truth - trace.estimates) ** 2, axis=(1, 2)))


def compute_metrics(trace, plant, ss, lc, threshold):
    dx = plant.grid.dx
    lanes = lane_norms(trace.fields, ss, dx)
    comb = np.sqrt(np.sum(lanes**2, axis=1))
    est = estimation_error(trace, plant, lc)
    times = analytic_times(lc)
    return Metrics(
        times=trace.times.copy(),
        l2_slow=lanes[:, 0],
        l2_fast=lanes[:, 1],
        l2_combined=comb,
        estimation_error_l2=est,
        threshold=threshold,
        convergence_time=convergence_time(trace.times, comb, threshold),
        estimation_convergence_time=None if est is None else convergence_time(trace.times, est, threshold),
        **times,
    )
