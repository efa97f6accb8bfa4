"""Time-domain solvers and the closed-loop runner.

Two plants share one runner:

* ``LinearPlant`` advances the scaled characteristic state
  ``(w_s, w_f, vbar_s, vbar_f)`` with first-order upwinding and explicit
  source coupling.
* ``NonlinearPlant`` advances the two-lane ARZ system in the conservative
  variables ``(rho, rho (v + p))`` with a local Lax-Friedrichs flux.

A controller (see :class:`Policy`) is queried once per step; the command it
returns is held over the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _sim_kernels as _k
from .errors import BlowUpError, DomainError
from .model import CharField, TrafficField, characteristic_arrays_to_physical

SCHEMES = ("upwind", "lax_friedrichs")


@dataclass(frozen=True)
class Grid:
    n_cells: int
    seg_length: float

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 8:
            raise DomainError(f"Grid needs an integer n_cells >= 8, got {self.n_cells!r}")
        if not self.seg_length > 0.0:
            raise DomainError("Grid length must be > 0")

    @property
    def dx(self):
        return self.seg_length / self.n_cells

    @property
    def x(self):
        return (np.arange(self.n_cells) + 0.5) * self.dx


@dataclass(frozen=True)
class SimConfig:
    grid: Grid
    cfl: float = 0.8
    t_end: float = 600.0
    record_every: int = 1
    scheme: str = "upwind"

    def __post_init__(self):
        if not (0.0 < self.cfl <= 1.0):
            raise DomainError(f"cfl must lie in (0, 1], got {self.cfl!r}")
        if not (self.t_end > 0.0 and math.isfinite(self.t_end)):
            raise DomainError(f"t_end must be finite and > 0, got {self.t_end!r}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise DomainError("record_every must be a positive integer")
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")


@dataclass(frozen=True)
class BoundaryInput:
    """Outlet speed-limit deviations ``U_s``, ``U_f`` (m/s)."""

    u_slow: float = 0.0
    u_fast: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.u_slow) and math.isfinite(self.u_fast)):
            raise DomainError("BoundaryInput values must be finite")

    def as_array(self):
        return np.array([self.u_slow, self.u_fast], dtype=float)


ZERO_INPUT = BoundaryInput()


def cfl_dt(grid, lc, cfl):
    """Linear-plant step ``cfl dx / max(eps_2, mu_1)``."""
    if not (0.0 < cfl <= 1.0):
        raise DomainError(f"cfl must lie in (0, 1], got {cfl!r}")
    speed = lc.max_speed() if hasattr(lc, "max_speed") else float(lc)
    if not speed > 0.0:
        raise DomainError("characteristic speeds are all zero")
    return cfl * grid.dx / speed


def source_matrices(lc, x):
    """Per-cell 4x4 source matrices of the scaled linear system, shape (4, 4, n)."""
    x = np.asarray(x, dtype=float)
    coef = np.empty((4, 4, x.size))
    coef[:2, :2] = lc.abar_ww(x)
    coef[:2, 2:] = lc.abar_wv(x)
    coef[2:, :2] = lc.abar_vw(x)
    coef[2:, 2:] = lc.abar_vv(x)
    return coef


class LinearPlant:
    """Scaled linearised plant on a uniform cell grid."""

    kind = "linearized"

    def __init__(self, lc, grid, ss=None, coef=None):
        self.lc = lc
        self.grid = grid
        self.ss = ss
        self.x = grid.x
        self.coef = source_matrices(lc, self.x) if coef is None else np.ascontiguousarray(coef)
        self._eps = np.ascontiguousarray(lc.eps, dtype=float)
        self._mu = np.ascontiguousarray(lc.mu, dtype=float)
        self._k = np.ascontiguousarray(lc.k, dtype=float)
        self._l = np.ascontiguousarray(lc.l, dtype=float)

    def max_dt(self, state, cfl):
        return cfl_dt(self.grid, self.lc, cfl)

    def step(self, state, u, dt, t=0.0, out=None):
        if out is None:
            out = np.empty_like(state)
        _k.linear_step(state, self.coef, self._eps, self._mu, self._k, self._l * u, dt, self.grid.dx, out)
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(out))[0]
            raise BlowUpError(
                f"linear state became non-finite at t={t + dt:.6g} s, cell {bad[1]}",
                time=t + dt,
                cell=int(bad[1]),
                lane=int(bad[0] % 2),
            )
        return out

    def to_char(self, state):
        return CharField.from_stack(self.x, state)

    def from_char(self, c):
        return np.ascontiguousarray(c.stack(), dtype=float)

    def to_physical_array(self, state):
        if self.ss is None:
            raise DomainError("LinearPlant needs a SteadyState to report physical fields")
        return characteristic_arrays_to_physical(self.x, state[:2], state[2:], self.ss, self.lc)

    def boundary_flux(self, state, u):
        return None

    def outlet_deviation(self, state, u):
        """Density deviation at the outlet face under the held input ``u``.

        The face carries the upwind ``w`` of the last cell and the imposed
        speed deviation ``u``.
        """
        return (state[:2, -1] - np.asarray(u, dtype=float)) / self.lc.riemann_gain


def _pack_phys(params, ss):
    return np.array(
        [
            params.gamma,
            params.v_max,
            params.rho_max_equiv,
            ss.pressure_scale_slow,
            ss.pressure_scale_fast,
            params.t_pref_slow,
            params.t_pref_fast,
            params.t_relax_slow,
            params.t_relax_fast,
            ss.q_star_slow,
            ss.q_star_fast,
            ss.v_star_slow,
            ss.v_star_fast,
        ]
    )


class NonlinearPlant:
    """Two-lane ARZ plant; state array shape (2, 2, n) = lane, (rho, y), cell."""

    kind = "nonlinear"

    def __init__(self, params, ss, grid):
        self.params = params
        self.ss = ss
        self.grid = grid
        self.x = grid.x
        self.phys = _pack_phys(params, ss)
        self.last_flux = np.zeros((2, 2))
        self._scale = np.array(ss.pressure_scale)[:, None]
        self._rho_hi = 2.0 * np.array(ss.rho_max)
        self._v_hi = 2.0 * params.v_max

    def pressure(self, rho):
        return self.params.v_max * (rho / self._scale) ** self.params.gamma

    def from_physical(self, f):
        rho = np.stack([f.rho_slow, f.rho_fast])
        v = np.stack([f.v_slow, f.v_fast])
        self._check(rho, v, 0.0)
        y = rho * (v + self.pressure(rho))
        return np.ascontiguousarray(np.stack([rho, y], axis=1))

    def primitive(self, state):
        rho = state[:, 0]
        v = state[:, 1] / rho - self.pressure(rho)
        return rho, v

    def to_physical_array(self, state):
        rho, v = self.primitive(state)
        return np.stack([rho[0], v[0], rho[1], v[1]])

    def to_physical(self, state):
        return TrafficField.from_stack(self.x, self.to_physical_array(state))

    def outlet_deviation(self, state, u):
        # the outlet ghost copies the last density, so the face density is that cell's
        return state[:, 0, -1] - np.array(self.ss.rho_star)

    def max_dt(self, state, cfl):
        a = _k.max_wave_speed(state, self.params.gamma, self.params.v_max, *self.ss.pressure_scale)
        if not a > 0.0:
            raise DomainError("all local wave speeds vanish")
        return cfl * self.grid.dx / a

    def _check(self, rho, v, t):
        lo = 1e-6
        bad_r = ~((rho > lo) & (rho < self._rho_hi[:, None]))
        bad_v = ~((v > lo) & (v < self._v_hi))
        bad = bad_r | bad_v
        if np.any(bad):
            lane, cell = np.argwhere(bad)[0]
            raise BlowUpError(
                f"nonlinear state left physical bounds at t={t:.6g} s, cell {cell}, "
                f"lane {lane}: rho={rho[lane, cell]:.6g} veh/m, v={v[lane, cell]:.6g} m/s",
                time=float(t),
                cell=int(cell),
                lane=int(lane),
            )

    def step(self, state, u, dt, t=0.0, out=None):
        if out is None:
            out = np.empty_like(state)
        _k.llf_step(state, self.phys, np.asarray(u, dtype=float), dt, self.grid.dx, out, self.last_flux)
        rho, v = self.primitive(out)
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(v))):
            rho = np.where(np.isfinite(rho), rho, -1.0)
            v = np.where(np.isfinite(v), v, -1.0)
        self._check(rho, v, t + dt)
        return out


def step_linear(c, bi, lc, dt):
    """Advance a :class:`CharField` one upwind step under outlet input ``bi``."""
    n = np.size(c.x)
    dx = lc.seg_length / n
    if not np.allclose(c.x, (np.arange(n) + 0.5) * dx, rtol=0, atol=1e-9 * lc.seg_length):
        raise DomainError("step_linear expects uniform cell centres on [0, L]")
    plant = LinearPlant(lc, Grid(n, lc.seg_length))
    out = plant.step(plant.from_char(c), bi.as_array(), dt)
    return plant.to_char(out)


def step_nonlinear(f, bi, params, ss, dt):
    """Advance a :class:`TrafficField` one LLF step under outlet input ``bi``."""
    n = np.size(f.x)
    plant = NonlinearPlant(params, ss, Grid(n, params.seg_length))
    out = plant.step(plant.from_physical(f), bi.as_array(), dt)
    return plant.to_physical(out)


class Policy:
    """Controller interface for :func:`run_closed_loop`.

    ``needs`` is ``"full"`` (``command`` receives the plant state array) or
    ``"output"`` (``command`` receives only the outlet measurement, built by
    ``measure``).  ``advance`` is called after every plant step with the
    quantities the policy observed before the step and the held command, so
    observers can integrate over the same interval as the plant.
    """

    needs = "full"
    name = "policy"

    def reset(self, plant, state):
        pass

    def command(self, t, view):
        return ZERO_INPUT.as_array()

    def advance(self, t, dt, view, u):
        pass

    def estimate(self):
        return None


class ZeroPolicy(Policy):
    name = "open_loop"


@dataclass(eq=False)
class Trace:
    """Decimated time history of a closed-loop run.

    ``fields`` has shape ``(n_rec, 4, n)`` ordered ``(rho_s, v_s, rho_f, v_f)``;
    ``char`` holds the scaled characteristic state when the plant is linear;
    ``estimates`` holds observer states when a policy provides them;
    ``commands`` are the held inputs over the step *starting* at each time.
    """

    times: np.ndarray
    x: np.ndarray
    fields: np.ndarray
    commands: np.ndarray
    char: np.ndarray | None = None
    estimates: np.ndarray | None = None
    boundary_mass: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0.0):
            raise DomainError("Trace times must be strictly increasing")
        if self.fields.shape[0] != self.times.size:
            raise DomainError("Trace snapshot count does not match times")

    @property
    def n_records(self):
        return self.times.size


def run_closed_loop(init, policy, cfg, plant, record_char=None):
    """Run ``plant`` from ``init`` under ``policy`` until ``cfg.t_end``.

    ``init`` is a state array in the plant's own layout.  The linear plant
    uses a fixed step ``cfl_dt`` shortened uniformly so that ``t_end`` is hit
    exactly; the nonlinear plant recomputes its step from local wave speeds
    and clips the last step.
    """
    if plant.grid != cfg.grid:
        raise DomainError("plant grid and SimConfig grid differ")
    if plant.kind == "linearized" and cfg.scheme != "upwind":
        raise DomainError("the linearised plant only supports scheme='upwind'")
    if plant.kind == "nonlinear" and cfg.scheme != "lax_friedrichs":
        raise DomainError("the nonlinear plant only supports scheme='lax_friedrichs'")
    if record_char is None:
        record_char = plant.kind == "linearized"
    state = np.array(init, dtype=float, copy=True)
    buf = np.empty_like(state)
    policy.reset(plant, state)

    fixed = plant.kind == "linearized"
    if fixed:
        dt0 = plant.max_dt(state, cfg.cfl)
        n_steps = max(1, math.ceil(cfg.t_end / dt0 - 1e-9))
        dt_fixed = cfg.t_end / n_steps

    times, fields, chars, ests, cmds, masses = [], [], [], [], [], []
    mass_in = np.zeros(2)
    mass_out = np.zeros(2)

    def view_of(s, u_prev):
        if policy.needs == "output":
            return policy.measure(plant, s, u_prev)
        return s

    def record(t, s, u):
        times.append(t)
        fields.append(plant.to_physical_array(s))
        if record_char:
            chars.append(s.copy())
        est = policy.estimate()
        if est is not None:
            ests.append(np.array(est, copy=True))
        cmds.append(np.array(u, dtype=float, copy=True))
        masses.append(np.concatenate([mass_in, mass_out]))

    t = 0.0
    step = 0
    u_prev = np.zeros(2)
    while True:
        view = view_of(state, u_prev)
        u = np.asarray(policy.command(t, view), dtype=float)
        done = step >= n_steps if fixed else t >= cfg.t_end * (1.0 - 1e-12)
        if done or step % cfg.record_every == 0:
            record(t, state, u)
        if done:
            break
        if fixed:
            dt = dt_fixed
        else:
            dt = min(plant.max_dt(state, cfg.cfl), cfg.t_end - t)
        plant.step(state, u, dt, t=t, out=buf)
        if plant.kind == "nonlinear":
            mass_in += dt * plant.last_flux[:, 0]
            mass_out += dt * plant.last_flux[:, 1]
        policy.advance(t, dt, view, u)
        state, buf = buf, state
        t = (step + 1) * dt_fixed if fixed else t + dt
        step += 1
        u_prev = u
    n_sat = int(getattr(policy, "saturated_steps", 0))
    return Trace(
        times=np.array(times),
        x=plant.x.copy(),
        fields=np.array(fields),
        commands=np.array(cmds),
        char=np.array(chars) if record_char else None,
        estimates=np.array(ests) if ests else None,
        boundary_mass=np.array(masses) if plant.kind == "nonlinear" else None,
        metadata={
            "plant": plant.kind,
            "policy": policy.name,
            "scheme": cfg.scheme,
            "n_cells": cfg.grid.n_cells,
            "cfl": cfg.cfl,
            "t_end": cfg.t_end,
            "steps": step,
            "saturated_steps": n_sat,
            "input_timing": "one-step hold: command computed at t_n is applied over [t_n, t_n+1]",
            "backend": _k.HAVE_NUMBA and "numba" or "numpy",
        },
    )
