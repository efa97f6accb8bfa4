"""Two-lane Aw-Rascle-Zhang physics.

Pressure and equilibrium laws, lane-specific uniform steady states, the
linearisation around them and the changes of variables between physical
states ``(rho_i, v_i)``, Riemann states ``w_i`` and the exponentially scaled
velocity deviations ``vbar_i``.

Everything here is SI (m, s, veh/m) and every object is immutable.
Lane index 0 is the slow lane, index 1 the fast lane.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CongestionError, DomainError, InfeasibleEquilibriumError

SLOW, FAST = 0, 1
LANES = ("slow", "fast")

KMH = 1.0 / 3.6
VEH_PER_KM = 1.0e-3


class CongestionWarning(UserWarning):
    """Steady state outside the congested regime."""


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the two-lane model (SI units)."""

    gamma: float
    v_max: float
    rho_max_equiv: float
    seg_length: float
    t_pref_slow: float
    t_pref_fast: float
    t_relax_slow: float
    t_relax_fast: float

    def __post_init__(self):
        for name in (
            "gamma",
            "v_max",
            "rho_max_equiv",
            "seg_length",
            "t_pref_slow",
            "t_pref_fast",
            "t_relax_slow",
            "t_relax_fast",
        ):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise DomainError(f"ModelParams.{name} must be finite and > 0, got {value!r}")

    @classmethod
    def defaults(cls, **overrides):
        """Reference defaults: gamma 0.8, v_m 144 km/h, L 1 km, T = 50/25 s, T^e = 200/100 s.

        The equivalent single-lane maximum is not tabulated; 190 veh/km makes
        the consistent slow-lane speed come out at the tabulated 32 km/h.
        """
        base = dict(
            gamma=0.8,
            v_max=144.0 * KMH,
            rho_max_equiv=190.0 * VEH_PER_KM,
            seg_length=1000.0,
            t_pref_slow=50.0,
            t_pref_fast=25.0,
            t_relax_slow=200.0,
            t_relax_fast=100.0,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def t_pref(self):
        return (self.t_pref_slow, self.t_pref_fast)

    @property
    def t_relax(self):
        return (self.t_relax_slow, self.t_relax_fast)


def pressure(rho, lane_max, params):
    """Traffic pressure ``v_m (rho / lane_max)**gamma``."""
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr < 0.0) or not np.all(np.isfinite(rho_arr)):
        raise DomainError("pressure: density must be finite and >= 0")
    if not lane_max > 0.0:
        raise DomainError("pressure: lane maximum must be > 0")
    out = params.v_max * (rho_arr / lane_max) ** params.gamma
    return float(out) if np.ndim(out) == 0 else out


def equilibrium_speed(rho, params):
    """Single-lane Greenshield speed ``v_m (1 - (rho / rho_m)**gamma)``."""
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr < 0.0) or np.any(rho_arr > params.rho_max_equiv) or not np.all(np.isfinite(rho_arr)):
        raise DomainError("equilibrium_speed: density must lie in [0, rho_max_equiv]")
    out = params.v_max * (1.0 - (rho_arr / params.rho_max_equiv) ** params.gamma)
    return float(out) if np.ndim(out) == 0 else out


def _greenshield(rho, params):
    # unchecked variant used inside the solver, where densities may briefly exceed rho_m
    return params.v_max * (1.0 - (rho / params.rho_max_equiv) ** params.gamma)


def ratio_coefficients(params):
    """Return ``(sigma, r_slow, r_fast)`` from the lane-preference and relaxation times."""
    g = params.gamma
    sigma = params.t_pref_fast / params.t_pref_slow
    a = params.t_relax_fast / params.t_pref_fast
    b = params.t_relax_slow / params.t_pref_slow
    denom = 1.0 + a + b
    r_fast = (1.0 + sigma ** (-g) * a + b) / denom
    r_slow = (1.0 + a + b * sigma**g) / denom
    return sigma, r_slow, r_fast


@dataclass(frozen=True)
class SteadyState:
    """Lane-specific uniform equilibrium and the derived per-lane constants.

    ``pressure_scale_*`` is the density that normalises each lane's pressure
    and ``relax_factor_*`` is ``-V'(rho*) rho* / (gamma p*)``, the factor that
    multiplies ``1/T^e`` in the exact linearisation (1 for the printed one).
    """

    sigma: float
    r_slow: float
    r_fast: float
    rho_star_slow: float
    rho_star_fast: float
    v_star_slow: float
    v_star_fast: float
    p_star_slow: float
    p_star_fast: float
    q_star_slow: float
    q_star_fast: float
    rho_max_slow: float
    rho_max_fast: float
    pressure_scale_slow: float
    pressure_scale_fast: float
    relax_factor_slow: float = 1.0
    relax_factor_fast: float = 1.0
    mode: str = "consistent"
    pressure_norm: str = "lane"
    lane_max_rule: str = "zero"
    congested_slow: bool = True
    congested_fast: bool = True
    status: str = "ok"

    @property
    def rho_star(self):
        return (self.rho_star_slow, self.rho_star_fast)

    @property
    def v_star(self):
        return (self.v_star_slow, self.v_star_fast)

    @property
    def p_star(self):
        return (self.p_star_slow, self.p_star_fast)

    @property
    def q_star(self):
        return (self.q_star_slow, self.q_star_fast)

    @property
    def rho_max(self):
        return (self.rho_max_slow, self.rho_max_fast)

    @property
    def pressure_scale(self):
        return (self.pressure_scale_slow, self.pressure_scale_fast)

    @property
    def relax_factor(self):
        return (self.relax_factor_slow, self.relax_factor_fast)

    @property
    def congested(self):
        return self.congested_slow and self.congested_fast

    def riemann_gain(self, params):
        """``gamma p_i* / rho_i*`` per lane (m^2/s/veh)."""
        return tuple(params.gamma * p / r for p, r in zip(self.p_star, self.rho_star))

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def compute_steady_state(
    params,
    rho_star_slow,
    mode="consistent",
    pressure_norm="lane",
    lane_max_rule="zero",
    given=None,
):
    """Build the lane-specific steady state from the slow-lane density.

    ``mode="consistent"`` derives ``rho_f* = sigma rho_s*`` and both speeds
    from the lane-specific Greenshield curves.  ``mode="as_given"`` takes
    ``rho_star_fast``, ``v_star_slow`` and ``v_star_fast`` (and optionally
    ``rho_max_slow``/``rho_max_fast``) from ``given`` verbatim and pairs them
    with the printed linear coefficients (``relax_factor = 1``).

    ``pressure_norm`` picks the density normalising each lane's pressure:
    the lane maximum (``"lane"``) or the shared ``rho_m`` (``"shared"``).
    ``lane_max_rule="zero"`` puts the lane maximum at the zero of the lane's
    equilibrium curve, ``rho_m r_i**(-1/gamma)``; ``"printed"`` uses
    ``rho_m r_i**(1/gamma)``.
    """
    if mode not in ("consistent", "as_given"):
        raise DomainError(f"unknown steady-state mode {mode!r}")
    if pressure_norm not in ("lane", "shared"):
        raise DomainError(f"unknown pressure normalisation {pressure_norm!r}")
    if lane_max_rule not in ("zero", "printed"):
        raise DomainError(f"unknown lane-maximum rule {lane_max_rule!r}")
    if not (rho_star_slow > 0.0 and math.isfinite(rho_star_slow)):
        raise DomainError("rho_star_slow must be finite and > 0")

    g, vm, rm = params.gamma, params.v_max, params.rho_max_equiv
    sigma, r_s, r_f = ratio_coefficients(params)
    expo = -1.0 / g if lane_max_rule == "zero" else 1.0 / g
    rho_max_s = rm * r_s**expo
    rho_max_f = rm * r_f**expo
    given = dict(given or {})

    if mode == "consistent":
        if given:
            raise DomainError("'given' values are only accepted in as_given mode")
        rho_s = float(rho_star_slow)
        rho_f = sigma * rho_s
        v_s = vm * (1.0 - r_s * (rho_s / rm) ** g)
        v_f = vm * (1.0 - r_f * (rho_f / rm) ** g)
    else:
        unknown = set(given) - {"rho_star_fast", "v_star_slow", "v_star_fast", "rho_max_slow", "rho_max_fast"}
        if unknown:
            raise DomainError(f"unknown as_given keys: {sorted(unknown)}")
        missing = {"rho_star_fast", "v_star_slow", "v_star_fast"} - set(given)
        if missing:
            raise DomainError(f"as_given mode needs {sorted(missing)}")
        rho_s = float(rho_star_slow)
        rho_f = float(given["rho_star_fast"])
        v_s = float(given["v_star_slow"])
        v_f = float(given["v_star_fast"])
        rho_max_s = float(given.get("rho_max_slow", rho_max_s))
        rho_max_f = float(given.get("rho_max_fast", rho_max_f))

    if v_s <= 0.0 or v_f <= 0.0:
        raise InfeasibleEquilibriumError(
            f"steady speeds must be positive, got v_s*={v_s:.6g}, v_f*={v_f:.6g} m/s"
        )
    if not (0.0 < rho_s < rho_max_s and 0.0 < rho_f < rho_max_f):
        raise DomainError(
            f"steady densities ({rho_s:.6g}, {rho_f:.6g}) veh/m outside lane maxima "
            f"({rho_max_s:.6g}, {rho_max_f:.6g})"
        )

    scale_s, scale_f = (rho_max_s, rho_max_f) if pressure_norm == "lane" else (rm, rm)
    p_s = pressure(rho_s, scale_s, params)
    p_f = pressure(rho_f, scale_f, params)
    if mode == "consistent":
        kappa_s = vm * (rho_s / rm) ** g / p_s
        kappa_f = vm * (rho_f / rm) ** g / p_f
    else:
        kappa_s = kappa_f = 1.0

    cong_s = v_s - g * p_s < 0.0
    cong_f = v_f - g * p_f < 0.0
    status = "ok"
    if not (cong_s and cong_f):
        lanes = [name for name, ok in zip(LANES, (cong_s, cong_f)) if not ok]
        status = "warning: not congested in " + ", ".join(lanes) + " lane"
        warnings.warn(status, CongestionWarning, stacklevel=2)

    return SteadyState(
        sigma=sigma,
        r_slow=r_s,
        r_fast=r_f,
        rho_star_slow=rho_s,
        rho_star_fast=rho_f,
        v_star_slow=v_s,
        v_star_fast=v_f,
        p_star_slow=p_s,
        p_star_fast=p_f,
        q_star_slow=rho_s * v_s,
        q_star_fast=rho_f * v_f,
        rho_max_slow=rho_max_s,
        rho_max_fast=rho_max_f,
        pressure_scale_slow=scale_s,
        pressure_scale_fast=scale_f,
        relax_factor_slow=kappa_s,
        relax_factor_fast=kappa_f,
        mode=mode,
        pressure_norm=pressure_norm,
        lane_max_rule=lane_max_rule,
        congested_slow=cong_s,
        congested_fast=cong_f,
        status=status,
    )


def equilibrium_residuals(params, ss):
    """Relative residuals of the three lane-balance equations at ``ss``.

    Each residual is the absolute sum divided by the largest term magnitude.
    """
    rs, rf = ss.rho_star
    vs, vf = ss.v_star
    Ts, Tf = params.t_pref
    Tes, Tef = params.t_relax
    Vs = _greenshield(rs, params)
    Vf = _greenshield(rf, params)
    eqs = (
        (rs / Ts, -rf / Tf),
        (rs * vs / Ts, -rf * vf / Tf, rf * (Vf - vf) / Tef),
        (rf * vf / Tf, -rs * vs / Ts, rs * (Vs - vs) / Tes),
    )
    out = []
    for terms in eqs:
        scale = max(abs(t) for t in terms)
        out.append(abs(math.fsum(terms)) / scale if scale > 0 else 0.0)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class LinearCoeffs:
    """Linearised 4x4 system in Riemann coordinates ``(w_s, w_f, v_s, v_f)``.

    ``A`` is the full 4x4 coefficient matrix; the 2x2 blocks are exposed as
    ``ww``, ``wv``, ``vw`` and ``vv``.  ``scale[i] = a^vv_ii / mu_i`` is the
    exponent rate of the velocity scaling ``vbar_i = exp(scale_i x) v_i``.
    """

    A: np.ndarray
    eps: np.ndarray
    mu: np.ndarray
    k: np.ndarray
    l: np.ndarray
    scale: np.ndarray
    seg_length: float
    riemann_gain: np.ndarray = field(repr=False)

    @property
    def ww(self):
        return self.A[:2, :2]

    @property
    def wv(self):
        return self.A[:2, 2:]

    @property
    def vw(self):
        return self.A[2:, :2]

    @property
    def vv(self):
        return self.A[2:, 2:]

    @property
    def eps1(self):
        return float(self.eps[0])

    @property
    def eps2(self):
        return float(self.eps[1])

    @property
    def mu1(self):
        return float(self.mu[0])

    @property
    def mu2(self):
        return float(self.mu[1])

    @property
    def speeds(self):
        """``(eps1, eps2, -mu2, -mu1)``."""
        return (self.eps1, self.eps2, -self.mu2, -self.mu1)

    @property
    def ordering_ok(self):
        return -self.mu1 < -self.mu2 < 0.0 < self.eps1 < self.eps2

    def max_speed(self):
        return float(max(np.max(np.abs(self.eps)), np.max(np.abs(self.mu))))

    # Scaled, space-dependent blocks.  Row i of the v-equations is multiplied
    # by exp(scale_i x) and v_j is replaced by exp(-scale_j x) vbar_j.
    def abar_ww(self, x=0.0):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.ww[(...,) + (None,) * x.ndim], (2, 2) + x.shape).copy()

    def abar_wv(self, x):
        x = np.asarray(x, dtype=float)
        e = np.exp(-np.multiply.outer(self.scale, x))
        return self.wv[(...,) + (None,) * x.ndim] * e[None, ...]

    def abar_vw(self, x):
        x = np.asarray(x, dtype=float)
        e = np.exp(np.multiply.outer(self.scale, x))
        return self.vw[(...,) + (None,) * x.ndim] * e[:, None, ...]

    def abar_vv(self, x):
        x = np.asarray(x, dtype=float)
        s = self.scale
        d = np.subtract.outer(s, s)
        e = np.exp(np.multiply.outer(d, x))
        out = self.vv[(...,) + (None,) * x.ndim] * e
        out[0, 0] = 0.0
        out[1, 1] = 0.0
        return out

    def exp_scale(self, x):
        """``exp(scale_i x)`` with shape ``(2,) + x.shape``."""
        return np.exp(np.multiply.outer(self.scale, np.asarray(x, dtype=float)))

    def finite_times(self):
        """Analytic settling times ``(t_f, t_o, t_out)``."""
        L = self.seg_length
        t_f = L / self.eps1 + L / self.mu2 + L / self.mu1
        t_o = L / self.eps1 + L / self.eps2 + L / self.mu2
        return t_f, t_o, t_o + t_f

    def as_dict(self):
        names = ("ww", "wv", "vw", "vv")
        d = {}
        for name in names:
            blk = getattr(self, name)
            for i in range(2):
                for j in range(2):
                    d[f"a_{name}_{i + 1}{j + 1}"] = float(blk[i, j])
        d.update(
            eps1=self.eps1,
            eps2=self.eps2,
            mu1=self.mu1,
            mu2=self.mu2,
            k_slow=float(self.k[0]),
            k_fast=float(self.k[1]),
            l_slow=float(self.l[0]),
            l_fast=float(self.l[1]),
            seg_length=self.seg_length,
        )
        return d


def linear_matrix(params, ss):
    """The 4x4 Riemann-coordinate coefficient matrix at ``ss``."""
    g = params.gamma
    Ts, Tf = params.t_pref
    Tes, Tef = params.t_relax
    ks, kf = ss.relax_factor
    vs, vf = ss.v_star
    Ps = g * ss.p_star_slow
    Pf = g * ss.p_star_fast
    D = vf - vs
    A = np.empty((4, 4))
    # w-rows
    A[0, 0] = -ks / Tes - (D + Ps) / (Ts * Ps)
    A[0, 1] = (D + Ps) / (Ts * Pf)
    A[1, 0] = (Pf - D) / (Tf * Ps)
    A[1, 1] = -kf / Tef - (Pf - D) / (Tf * Pf)
    A[0, 2] = D / (Ts * Ps) + (ks - 1.0) / Tes
    A[0, 3] = -((Ps - vs) - (Pf - vf)) / (Ts * Pf)
    A[1, 2] = -((Pf - vf) - (Ps - vs)) / (Tf * Ps)
    A[1, 3] = -D / (Tf * Pf) + (kf - 1.0) / Tef
    # v-rows
    A[2, 0] = -ks / Tes - D / (Ts * Ps)
    A[2, 1] = D / (Ts * Pf)
    A[3, 0] = -D / (Tf * Ps)
    A[3, 1] = -kf / Tef + D / (Tf * Pf)
    A[2, 2] = (D - Ps) / (Ts * Ps) + (ks - 1.0) / Tes
    A[2, 3] = -(D - Pf) / (Ts * Pf)
    A[3, 2] = (D + Ps) / (Tf * Ps)
    A[3, 3] = (-D - Pf) / (Tf * Pf) + (kf - 1.0) / Tef
    return A


def linearize(params, ss):
    """Linear coefficients, transport speeds and boundary constants at ``ss``."""
    if not ss.congested:
        raise CongestionError(
            "linearize requires v_i* - gamma p_i* < 0 in both lanes "
            f"(slow: {ss.congested_slow}, fast: {ss.congested_fast})"
        )
    g = params.gamma
    A = linear_matrix(params, ss)
    eps = np.array(ss.v_star, dtype=float)
    mu = np.array([g * p - v for p, v in zip(ss.p_star, ss.v_star)])
    k = -mu / eps
    scale = np.array([A[2, 2] / mu[0], A[3, 3] / mu[1]])
    L = params.seg_length
    l = np.exp(scale * L)
    return LinearCoeffs(
        A=A,
        eps=eps,
        mu=mu,
        k=k,
        l=l,
        scale=scale,
        seg_length=L,
        riemann_gain=np.array(ss.riemann_gain(params)),
    )


@dataclass(frozen=True, eq=False)
class TrafficField:
    """Per-cell densities (veh/m) and speeds (m/s) on a grid ``x`` (m)."""

    x: np.ndarray
    rho_slow: np.ndarray
    v_slow: np.ndarray
    rho_fast: np.ndarray
    v_fast: np.ndarray

    def __post_init__(self):
        n = np.shape(self.x)
        for name in ("rho_slow", "v_slow", "rho_fast", "v_fast"):
            arr = getattr(self, name)
            if np.shape(arr) != n:
                raise DomainError(f"TrafficField.{name} shape {np.shape(arr)} != grid shape {n}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"TrafficField.{name} has non-finite entries")

    @classmethod
    def steady(cls, x, ss):
        x = np.asarray(x, dtype=float)
        one = np.ones_like(x)
        return cls(x, ss.rho_star_slow * one, ss.v_star_slow * one, ss.rho_star_fast * one, ss.v_star_fast * one)

    def stack(self):
        """Array of shape ``(4, n)`` ordered ``(rho_s, v_s, rho_f, v_f)``."""
        return np.stack([self.rho_slow, self.v_slow, self.rho_fast, self.v_fast])

    @classmethod
    def from_stack(cls, x, arr):
        return cls(x, arr[0].copy(), arr[1].copy(), arr[2].copy(), arr[3].copy())

    def deviation(self, ss):
        """``(rho~_s, v~_s, rho~_f, v~_f)`` stacked."""
        star = np.array([ss.rho_star_slow, ss.v_star_slow, ss.rho_star_fast, ss.v_star_fast])
        return self.stack() - star[:, None]


@dataclass(frozen=True, eq=False)
class CharField:
    """Riemann states ``w_i`` and scaled velocity deviations ``vbar_i`` (m/s)."""

    x: np.ndarray
    w_slow: np.ndarray
    w_fast: np.ndarray
    vbar_slow: np.ndarray
    vbar_fast: np.ndarray

    def __post_init__(self):
        n = np.shape(self.x)
        for name in ("w_slow", "w_fast", "vbar_slow", "vbar_fast"):
            arr = getattr(self, name)
            if np.shape(arr) != n:
                raise DomainError(f"CharField.{name} shape {np.shape(arr)} != grid shape {n}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"CharField.{name} has non-finite entries")

    @classmethod
    def zeros(cls, x):
        x = np.asarray(x, dtype=float)
        z = np.zeros_like(x)
        return cls(x, z, z.copy(), z.copy(), z.copy())

    def stack(self):
        """Array of shape ``(4, n)`` ordered ``(w_s, w_f, vbar_s, vbar_f)``."""
        return np.stack([self.w_slow, self.w_fast, self.vbar_slow, self.vbar_fast])

    @classmethod
    def from_stack(cls, x, arr):
        return cls(x, arr[0].copy(), arr[1].copy(), arr[2].copy(), arr[3].copy())


def physical_to_characteristic(f, ss, lc):
    dev = f.deviation(ss)
    gs, gf = lc.riemann_gain
    e = lc.exp_scale(f.x)
    return CharField(
        f.x,
        gs * dev[0] + dev[1],
        gf * dev[2] + dev[3],
        e[0] * dev[1],
        e[1] * dev[3],
    )


def characteristic_arrays_to_physical(x, w, vbar, ss, lc):
    """Array form of :func:`characteristic_to_physical`; ``w``, ``vbar`` are ``(2, n)``."""
    e = lc.exp_scale(x)
    vt = vbar / e
    rho = (w - vt) / lc.riemann_gain[:, None]
    return np.stack(
        [
            ss.rho_star_slow + rho[0],
            ss.v_star_slow + vt[0],
            ss.rho_star_fast + rho[1],
            ss.v_star_fast + vt[1],
        ]
    )


def characteristic_to_physical(c, ss, lc):
    arr = characteristic_arrays_to_physical(
        c.x, np.stack([c.w_slow, c.w_fast]), np.stack([c.vbar_slow, c.vbar_fast]), ss, lc
    )
    return TrafficField.from_stack(c.x, arr)


def fundamental_diagram_samples(params, ss, n):
    """Equilibrium speed and flux curves for the single lane and each lane.

    Returns a mapping ``{"single"|"slow"|"fast": {"rho", "v", "q"}}``; lane
    ``i`` is sampled on ``[0, rho_i^m]`` with ``V_i = v_m (1 - r_i (rho/rho_m)**gamma)``.
    """
    if n < 2:
        raise DomainError("fundamental_diagram_samples needs n >= 2")
    g, vm, rm = params.gamma, params.v_max, params.rho_max_equiv
    out = {}
    for name, r, top in (
        ("single", 1.0, rm),
        ("slow", ss.r_slow, ss.rho_max_slow),
        ("fast", ss.r_fast, ss.rho_max_fast),
    ):
        rho = np.linspace(0.0, top, n)
        v = vm * (1.0 - r * (rho / rm) ** g)
        if name != "single" and ss.lane_max_rule == "zero":
            v[-1] = 0.0  # exact zero at the lane maximum
        v = np.maximum(v, 0.0)
        out[name] = {"rho": rho, "v": v, "q": rho * v}
    return out


def with_params(params, **changes):
    return replace(params, **changes)
