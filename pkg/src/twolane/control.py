"""Outlet speed-limit feedback, the collocated observer and their composition.

All laws act on the scaled characteristic state ``(w_s, w_f, vbar_s, vbar_f)``
of the linearised model; physical fields are converted on the way in.  The
full-state law is

    l_i U_i = int_0^L K_i.(L, xi) w(xi) + L_i.(L, xi) vbar(xi) dxi

and the output-feedback law is the same functional applied to the observer
state.  The observer is a copy of the scaled plant driven by the same outlet
input and corrected with ``P(x)``, ``Q(x)`` times the outlet innovation
``Y - w_hat(L)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import (
    CharField,
    TrafficField,
    characteristic_arrays_to_physical,
    physical_to_characteristic,
)
from .pde_sim import Grid, LinearPlant, Policy

# rows of the characteristic state and the kernel that multiplies each row
_ROW_KERNEL = (("K", 1), ("K", 2), ("L", 1), ("L", 2))


@dataclass(frozen=True)
class VslCommand:
    """Outlet speed deviations ``U_s, U_f`` (m/s); the posted limits are ``v* + U``."""

    u_slow: float
    u_fast: float
    saturated: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.u_slow) and np.isfinite(self.u_fast)):
            raise DomainError("VslCommand entries must be finite")

    def as_array(self):
        return np.array([self.u_slow, self.u_fast], dtype=float)

    def speed_limits(self, ss):
        return self.u_slow + ss.v_star_slow, self.u_fast + ss.v_star_fast


@dataclass(frozen=True)
class Measurement:
    """Outlet density deviations ``y`` (veh/m) and Riemann measurements ``Y`` (m/s)."""

    y_slow: float
    y_fast: float
    yy_slow: float
    yy_fast: float

    @property
    def y(self):
        return np.array([self.y_slow, self.y_fast])

    @property
    def Y(self):
        return np.array([self.yy_slow, self.yy_fast])


def make_measurement(y, u, lc):
    """Build a :class:`Measurement` from density deviations and the held input."""
    y = np.asarray(y, dtype=float)
    Y = lc.riemann_gain * y + np.asarray(u, dtype=float)
    return Measurement(float(y[0]), float(y[1]), float(Y[0]), float(Y[1]))


def measure_outlet(f, ss, cmd, lc):
    """Measurement from the outlet sample (last cell) of a physical field.

    ``lc`` supplies the Riemann gains ``gamma p_i* / rho_i*``.
    """
    y = np.array([f.rho_slow[-1] - ss.rho_star_slow, f.rho_fast[-1] - ss.rho_star_fast])
    u = cmd.as_array() if isinstance(cmd, VslCommand) else np.asarray(cmd, dtype=float)
    return make_measurement(y, u, lc)


@dataclass(eq=False)
class ObserverState:
    """Observer estimates of ``(w_s, w_f, vbar_s, vbar_f)`` on the plant cells."""

    x: np.ndarray
    w_slow: np.ndarray
    w_fast: np.ndarray
    u_slow: np.ndarray
    u_fast: np.ndarray

    def __post_init__(self):
        n = np.shape(self.x)
        for name in ("w_slow", "w_fast", "u_slow", "u_fast"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != n:
                raise DomainError(f"ObserverState.{name} shape {arr.shape} != grid shape {n}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"ObserverState.{name} has non-finite entries")
            setattr(self, name, arr)

    def stack(self):
        return np.stack([self.w_slow, self.w_fast, self.u_slow, self.u_fast])

    @classmethod
    def from_stack(cls, x, arr):
        arr = np.asarray(arr, dtype=float)
        return cls(np.asarray(x, dtype=float), arr[0].copy(), arr[1].copy(), arr[2].copy(), arr[3].copy())

    @classmethod
    def zeros(cls, x):
        return cls.from_stack(x, np.zeros((4, np.size(x))))

    @classmethod
    def from_char(cls, c):
        return cls.from_stack(c.x, c.stack())


def estimates_to_physical(est, ss, lc):
    """Physical estimates ``(rho_hat, v_hat)`` from observer states."""
    arr = characteristic_arrays_to_physical(est.x, est.stack()[:2], est.stack()[2:], ss, lc)
    return TrafficField.from_stack(est.x, arr)


class ControlLaw:
    """The outlet feedback functional, discretised on a cell grid.

    Each cell weight is the cell integral of the kernel edge value
    ``K_ij(L, xi)`` or ``L_ij(L, xi)``, divided by ``l_i``; the cell integral
    uses ``sub`` midpoint samples so a kernel jump inside a cell is resolved
    to ``dx / sub``.  ``kernels`` is anything with ``edge(name, xi)``.
    """

    def __init__(self, kernels, lc, grid, sub=8):
        if abs(grid.seg_length - lc.seg_length) > 1e-9 * lc.seg_length:
            raise DomainError("simulation grid and kernel segment lengths differ")
        mesh = getattr(kernels, "mesh", None)
        if mesh is not None and abs(mesh.seg_length - grid.seg_length) > 1e-9 * grid.seg_length:
            raise DomainError("kernel mesh and simulation grid lengths differ")
        n = grid.n_cells
        dx = grid.dx
        off = (np.arange(sub) + 0.5) / sub
        xi = ((np.arange(n)[:, None] + off[None, :]) * dx).ravel()
        w = np.empty((2, 4, n))
        for i in (0, 1):
            for r, (kind, j) in enumerate(_ROW_KERNEL):
                vals = np.asarray(kernels.edge(f"{kind}{i + 1}{j}", xi), dtype=float)
                w[i, r] = vals.reshape(n, sub).mean(axis=1) * dx / lc.l[i]
        self.weights = w
        self.grid = grid

    def __call__(self, state):
        """Commands ``(U_s, U_f)`` for a ``(4, n)`` characteristic state."""
        return np.einsum("irn,rn->i", self.weights, state)


def _char_array(f, ss, lc):
    if isinstance(f, TrafficField):
        return physical_to_characteristic(f, ss, lc).stack()
    if isinstance(f, CharField):
        return f.stack()
    if isinstance(f, ObserverState):
        return f.stack()
    return np.asarray(f, dtype=float)


def _law_for(x, lc, ks, law):
    if law is not None:
        return law
    n = np.size(x)
    return ControlLaw(ks, lc, Grid(n, lc.seg_length))


def full_state_vsl(f, ss, lc, ks, law=None):
    """Full-state command from a physical field (or a characteristic state)."""
    law = _law_for(f.x, lc, ks, law)
    u = law(_char_array(f, ss, lc))
    return VslCommand(float(u[0]), float(u[1]))


def output_feedback_vsl(est, ss, lc, ks, law=None):
    """Same functional as :func:`full_state_vsl`, evaluated on the estimates."""
    law = _law_for(est.x, lc, ks, law)
    u = law(est.stack())
    return VslCommand(float(u[0]), float(u[1]))


class Observer:
    """Collocated boundary observer on the plant grid."""

    def __init__(self, lc, oks, grid):
        self.lc = lc
        self.grid = grid
        self.copy = LinearPlant(lc, grid)
        self.P, self.Q = oks.gains_at(grid.x)
        self.state = np.zeros((4, grid.n_cells))
        self._buf = np.empty_like(self.state)
        self._dt_max = self.copy.max_dt(self.state, 1.0)

    def reset(self, state=None):
        self.state = np.zeros((4, self.grid.n_cells)) if state is None else np.array(state, dtype=float)

    def innovation(self, Y):
        return np.asarray(Y, dtype=float) - self.state[:2, -1]

    def step(self, Y, u, dt, t=0.0):
        """Advance by ``dt``, splitting into CFL-safe substeps when needed."""
        m = max(1, int(np.ceil(dt / self._dt_max - 1e-12)))
        h = dt / m
        for _ in range(m):
            e = self.innovation(Y)
            self.copy.step(self.state, u, h, t=t, out=self._buf)
            self._buf[:2] += h * np.einsum("ijn,j->in", self.P, e)
            self._buf[2:] += h * np.einsum("ijn,j->in", self.Q, e)
            self.state, self._buf = self._buf, self.state
            t += h
        return self.state


def observer_step(est, meas, cmd, lc, oks, dt):
    """One explicit observer step; returns a new :class:`ObserverState`."""
    n = np.size(est.x)
    obs = Observer(lc, oks, Grid(n, lc.seg_length))
    obs.reset(est.stack())
    u = cmd.as_array() if isinstance(cmd, VslCommand) else np.asarray(cmd, dtype=float)
    if dt > obs._dt_max * (1.0 + 1e-12):
        raise DomainError(f"dt={dt:g} s violates the observer CFL limit {obs._dt_max:g} s")
    obs.step(meas.Y, u, dt)
    return ObserverState.from_stack(est.x, obs.state)


# --------------------------------------------------------------------------
# policies for pde_sim.run_closed_loop


def _plant_char(plant, state, lc):
    if plant.kind == "linearized":
        return state
    f = plant.to_physical(state)
    return physical_to_characteristic(f, plant.ss, lc).stack()


class _Saturating(Policy):
    def __init__(self, bound=None):
        if bound is not None and not bound > 0.0:
            raise DomainError("saturation bound must be > 0")
        self.bound = bound
        self.saturated_steps = 0

    def _clip(self, u):
        if self.bound is None:
            return u
        c = np.clip(u, -self.bound, self.bound)
        if np.any(c != u):
            self.saturated_steps += 1
        return c


class FullStatePolicy(_Saturating):
    name = "full_state"
    needs = "full"

    def __init__(self, law, lc, bound=None):
        super().__init__(bound)
        self.law = law
        self.lc = lc
        self._plant = None

    def reset(self, plant, state):
        self._plant = plant
        self.saturated_steps = 0

    def command(self, t, view):
        return self._clip(self.law(_plant_char(self._plant, view, self.lc)))


class FluxOpenLoopPolicy(Policy):
    """Outlet speed that keeps the outflow at its steady value.

    Nonlinear plant: ``U = q* / rho(L) - v*``; linearised plant: the
    linearisation of the same rule, ``U = w(L) / k``.
    """

    name = "open_loop"
    needs = "full"

    def __init__(self, lc):
        self.lc = lc
        self._plant = None

    def reset(self, plant, state):
        self._plant = plant

    def command(self, t, view):
        p = self._plant
        if p.kind == "linearized":
            return view[:2, -1] / self.lc.k
        rho = view[:, 0, -1]
        return np.array(p.ss.q_star) / rho - np.array(p.ss.v_star)


@dataclass(frozen=True)
class _View:
    meas: Measurement
    state: np.ndarray


class ObserverPolicy(_Saturating):
    """Runs the observer next to the plant.

    With ``law`` the command is the output feedback computed from the
    estimates; with ``open_loop`` the inner policy drives the plant and the
    observer only watches (the estimation-error experiment).
    """

    needs = "output"

    def __init__(self, observer, law=None, open_loop=None, init="steady", bound=None, noise=0.0, seed=None):
        super().__init__(bound)
        if (law is None) == (open_loop is None):
            raise DomainError("give exactly one of law= or open_loop=")
        if isinstance(init, str):
            if init not in ("steady", "truth"):
                raise DomainError("init must be 'steady', 'truth' or a (4, n) array")
        elif np.shape(init) != observer.state.shape:
            raise DomainError("init must be 'steady', 'truth' or a (4, n) array")
        if noise < 0.0:
            raise DomainError("noise amplitude must be >= 0")
        self.observer = observer
        self.law = law
        self.open_loop = open_loop
        self.init = init
        self.noise = float(noise)
        self.seed = seed
        self.name = "output_feedback" if law is not None else "observer_open_loop"
        self._plant = None
        self._rng = None

    def reset(self, plant, state):
        if plant.grid != self.observer.grid:
            raise DomainError("observer grid must equal the plant grid")
        self._plant = plant
        self.saturated_steps = 0
        self._rng = np.random.default_rng(self.seed)
        if isinstance(self.init, str) and self.init == "truth":
            self.observer.reset(_plant_char(plant, state, self.observer.lc))
        elif isinstance(self.init, str):
            self.observer.reset()
        else:
            self.observer.reset(self.init)
        if self.open_loop is not None:
            self.open_loop.reset(plant, state)

    def measure(self, plant, state, u_prev):
        y = plant.outlet_deviation(state, u_prev)
        if self.noise > 0.0:
            y = y + self._rng.uniform(-self.noise, self.noise, size=2)
        meas = make_measurement(y, u_prev, self.observer.lc)
        return _View(meas, state if self.open_loop is not None else None)

    def command(self, t, view):
        if self.law is not None:
            return self._clip(self.law(self.observer.state))
        return self._clip(np.asarray(self.open_loop.command(t, view.state), dtype=float))

    def advance(self, t, dt, view, u):
        self.observer.step(view.meas.Y, u, dt, t=t)

    def estimate(self):
        return self.observer.state
