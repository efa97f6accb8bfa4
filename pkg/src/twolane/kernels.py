"""Controller and observer kernels of the backstepping transformations.

Controller kernels ``K_ij, L_ij`` live on ``0 <= xi <= x <= L``; observer
kernels ``M_ij, N_ij`` on ``0 <= x <= xi <= L``.  Both are first-order
Goursat systems solved by :mod:`twolane.goursat`.  The observer system is
mapped onto the lower triangle either by reflection
``(x, xi) -> (L - x, L - xi)`` (the default) or by swapping the two
arguments, which gives an independent discretisation of the same problem.

Index convention: 1 = slow lane, 2 = fast lane.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import goursat as gs
from .errors import CongestionError, DomainError, KernelConfigurationError
from .goursat import DIAG, XI0, XL, Component, ExpAffine, GoursatProblem, GoursatSolver, Link

PAIRS = ((1, 1), (1, 2), (2, 1), (2, 2))
CONTROL_NAMES = tuple(f"K{i}{j}" for i, j in PAIRS) + tuple(f"L{i}{j}" for i, j in PAIRS)
OBSERVER_NAMES = tuple(f"M{i}{j}" for i, j in PAIRS) + tuple(f"N{i}{j}" for i, j in PAIRS)

# edges of the upper triangle before it is mapped
U_DIAG, U_X0, U_XIL = "diag", "x0", "xiL"


@dataclass(frozen=True)
class TriMesh:
    n: int
    seg_length: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 16:
            raise DomainError(f"TriMesh needs an integer n >= 16, got {self.n!r}")
        if not self.seg_length > 0.0:
            raise DomainError("TriMesh length must be > 0")

    @property
    def h(self):
        return self.seg_length / (self.n - 1)

    @property
    def nodes(self):
        return np.linspace(0.0, self.seg_length, self.n)


def _check(lc):
    if not lc.ordering_ok:
        raise CongestionError("kernel equations need -mu1 < -mu2 < 0 < eps1 < eps2")
    if lc.mu1 == lc.mu2 or lc.eps1 == lc.eps2:
        raise KernelConfigurationError("equal transport speeds make the diagonal data singular")


def control_problem(lc):
    """Goursat system for ``K`` and ``L`` on the lower triangle."""
    _check(lc)
    eps, mu, kb, c = lc.eps, lc.mu, lc.k, lc.scale
    ww, wv, vw, vv = lc.ww, lc.wv, lc.vw, lc.vv
    comps = []
    for i in (0, 1):
        for j in (0, 1):
            terms = []
            for k in (0, 1):
                terms.append((f"K{i + 1}{k + 1}", ExpAffine(ww[k, j])))
                terms.append((f"L{i + 1}{k + 1}", ExpAffine(vw[k, j], 0.0, c[k])))
            edges = {DIAG: ExpAffine(-vw[i, j] / (mu[i] + eps[j]), c[i], 0.0)}
            comps.append(Component(f"K{i + 1}{j + 1}", (mu[i], -eps[j]), terms, edges))
    for i in (0, 1):
        for j in (0, 1):
            terms = []
            for k in (0, 1):
                terms.append((f"K{i + 1}{k + 1}", ExpAffine(wv[k, j], 0.0, -c[j])))
                if k != j:
                    terms.append((f"L{i + 1}{k + 1}", ExpAffine(vv[k, j], 0.0, c[k] - c[j])))
            edges, jump = {}, None
            name = f"L{i + 1}{j + 1}"
            if i == j:
                edges[XI0] = Link(f"K{i + 1}{j + 1}", eps[j] * kb[j] / mu[j])
            elif (i, j) == (0, 1):
                edges[DIAG] = ExpAffine(-vv[0, 1] / (mu[0] - mu[1]), c[0] - c[1], 0.0)
                edges[XI0] = Link("K12", eps[1] * kb[1] / mu[1])
                jump = (DIAG, XI0)
            else:
                edges[DIAG] = ExpAffine(-vv[1, 0] / (mu[1] - mu[0]), c[1] - c[0], 0.0)
                edges[XL] = ExpAffine(0.0)
                jump = (DIAG, XL)
            comps.append(Component(name, (mu[i], mu[j]), terms, edges, jump))
    return GoursatProblem(comps, lc.seg_length)


def observer_system(lc):
    """Observer kernel system in its own coordinates (upper triangle).

    Returns a list of ``(name, direction, terms, edges, jump)`` with edges
    keyed by ``"diag"``, ``"x0"`` (``x = 0``) and ``"xiL"`` (``xi = L``).
    """
    _check(lc)
    eps, mu, kb, c = lc.eps, lc.mu, lc.k, lc.scale
    ww, wv, vw, vv = lc.ww, lc.wv, lc.vw, lc.vv
    out = []
    for i in (0, 1):
        for j in (0, 1):
            terms = []
            for k in (0, 1):
                terms.append((f"M{k + 1}{j + 1}", ExpAffine(ww[i, k])))
                terms.append((f"N{k + 1}{j + 1}", ExpAffine(wv[i, k], -c[k], 0.0)))
            terms.append((f"M{i + 1}{j + 1}", ExpAffine(-ww[j, j])))
            edges, jump = {}, None
            if i == 0:
                edges[U_X0] = Link(f"N1{j + 1}", kb[0])
            elif j == 1:
                edges[U_X0] = Link("N22", kb[1])
            if (i, j) == (0, 1):
                edges[U_DIAG] = ExpAffine(ww[0, 1] / (eps[1] - eps[0]))
                jump = (U_DIAG, U_X0)
            elif (i, j) == (1, 0):
                edges[U_DIAG] = ExpAffine(-ww[1, 0] / (eps[1] - eps[0]))
                edges[U_XIL] = ExpAffine(0.0)
                jump = (U_DIAG, U_XIL)
            out.append((f"M{i + 1}{j + 1}", (eps[i], eps[j]), terms, edges, jump))
    for i in (0, 1):
        for j in (0, 1):
            terms = [(f"N{i + 1}{j + 1}", ExpAffine(ww[j, j]))]
            for k in (0, 1):
                terms.append((f"M{k + 1}{j + 1}", ExpAffine(-vw[i, k], c[i], 0.0)))
                if k != i:
                    terms.append((f"N{k + 1}{j + 1}", ExpAffine(-vv[i, k], c[i] - c[k], 0.0)))
            edges = {U_DIAG: ExpAffine(vw[i, j] / (eps[j] + mu[i]), c[i], 0.0)}
            out.append((f"N{i + 1}{j + 1}", (mu[i], -eps[j]), terms, edges, None))
    return out


ROUTES = ("reflect", "transpose")


def _map_coef(coef, route, L):
    if route == "reflect":
        return ExpAffine(coef.c * np.exp((coef.kx + coef.kxi) * L), -coef.kx, -coef.kxi)
    return ExpAffine(coef.c, coef.kxi, coef.kx)


def observer_problem(lc, route="reflect"):
    """Observer system mapped onto the lower triangle."""
    if route not in ROUTES:
        raise DomainError(f"route must be one of {ROUTES}")
    L = lc.seg_length
    if route == "reflect":
        emap = {U_DIAG: DIAG, U_X0: XL, U_XIL: XI0}
    else:
        emap = {U_DIAG: DIAG, U_X0: XI0, U_XIL: XL}
    comps = []
    for name, (a, b), terms, edges, jump in observer_system(lc):
        d = (-a, -b) if route == "reflect" else (b, a)
        t2 = [(src, _map_coef(cf, route, L)) for src, cf in terms]
        e2 = {}
        for e, data in edges.items():
            e2[emap[e]] = data if isinstance(data, Link) else _map_coef(data, route, L)
        j2 = None if jump is None else (emap[jump[0]], emap[jump[1]])
        comps.append(Component(name, d, t2, e2, j2))
    return GoursatProblem(comps, L)


def coefficient_hash(lc, mesh, tol, extra=""):
    h = hashlib.sha256()
    for arr in (lc.A, lc.eps, lc.mu, lc.k, lc.l, lc.scale):
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    h.update(repr((float(lc.seg_length), int(mesh.n), float(mesh.seg_length), float(tol), extra)).encode())
    return h.hexdigest()[:32]


@dataclass(eq=False)
class KernelSet:
    """Controller kernels on the lower-triangle mesh.

    ``values[name]`` is an ``(n, n)`` array indexed ``[ix, ixi]`` with zeros
    above the diagonal.  ``theta`` is the target-system coefficient
    ``mu1 L21(x, 0) - eps1 k_s K21(x, 0)`` at the mesh nodes.
    """

    mesh: TriMesh
    solution: object
    theta: np.ndarray
    sweeps: int
    history: list
    coef_hash: str
    residual: dict = field(default_factory=dict)

    def __getattr__(self, name):
        if name in CONTROL_NAMES or name.upper() in CONTROL_NAMES:
            return self.solution[name.upper()]
        raise AttributeError(name)

    def edge(self, name, xi):
        """``name(L, xi)`` at arbitrary ``xi``, jump-aware."""
        xi = np.asarray(xi, dtype=float)
        x = np.full_like(xi, self.mesh.seg_length)
        return self.solution.evaluate(name, x, xi)

    def evaluate(self, name, x, xi):
        return self.solution.evaluate(name, x, xi)


@dataclass(eq=False)
class ObserverKernelSet:
    """Observer kernels, reported in the original ``x <= xi`` coordinates.

    ``values(name)`` returns an ``(n, n)`` array indexed ``[ix, ixi]`` with
    zeros below the diagonal.  ``lam`` is ``M21(0, xi) - k_f N21(0, xi)`` at
    the mesh nodes; ``p_gain``/``q_gain`` are ``(2, 2, n)`` nodal gains
    ``M(x, L) diag(eps)`` and ``N(x, L) diag(eps)``.
    """

    mesh: TriMesh
    solution: object
    route: str
    lam: np.ndarray
    p_gain: np.ndarray
    q_gain: np.ndarray
    sweeps: int
    history: list
    coef_hash: str
    eps: np.ndarray = None
    residual: dict = field(default_factory=dict)

    def _to_lower(self, x, xi):
        L = self.mesh.seg_length
        if self.route == "reflect":
            return L - np.asarray(x, dtype=float), L - np.asarray(xi, dtype=float)
        return np.asarray(xi, dtype=float), np.asarray(x, dtype=float)

    def evaluate(self, name, x, xi):
        a, b = self._to_lower(x, xi)
        return self.solution.evaluate(name, a, b)

    def values(self, name):
        arr = self.solution[name]
        if self.route == "reflect":
            return arr[::-1, ::-1].copy()
        return arr.T.copy()

    def gains_at(self, x):
        """``P(x)``, ``Q(x)`` at arbitrary points, shapes ``(2, 2, len(x))``."""
        x = np.asarray(x, dtype=float)
        xi = np.full_like(x, self.mesh.seg_length)
        P = np.empty((2, 2, x.size))
        Q = np.empty((2, 2, x.size))
        for i in (0, 1):
            for j in (0, 1):
                P[i, j] = self.evaluate(f"M{i + 1}{j + 1}", x, xi) * self.eps[j]
                Q[i, j] = self.evaluate(f"N{i + 1}{j + 1}", x, xi) * self.eps[j]
        return P, Q


def _residual_report(solver, sol):
    res = solver.residual(sol)
    bnd = solver.boundary_violation(sol)
    scale = float(np.max(np.abs(sol.values))) or 1.0
    return {
        "pde": res,
        "boundary": bnd,
        "boundary_max": max(bnd.values()) if bnd else 0.0,
        "kernel_scale": scale,
        "l1_total": float(sum(r["l1"] for r in res.values())),
        "l2_total": float(np.sqrt(sum(r["l2"] ** 2 for r in res.values()))),
        "max_total": float(max(r["max"] for r in res.values())),
    }


def kernel_residual(ks, lc, mesh=None):
    """Residual report for a solved :class:`KernelSet` or :class:`ObserverKernelSet`."""
    mesh = ks.mesh if mesh is None else mesh
    if isinstance(ks, KernelSet):
        problem = control_problem(lc)
    else:
        problem = observer_problem(lc, ks.route)
    solver = GoursatSolver(problem, mesh.n)
    return _residual_report(solver, ks.solution)


def _cache_path(cache_dir, kind, key):
    return os.path.join(cache_dir, f"{kind}-{key}.npz")


def _save(path, sol, meta):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp.npz"
    tri = np.tril_indices(sol.n)
    np.savez(
        tmp,
        names=np.array(sol.names),
        values=sol.values[:, tri[0], tri[1]],
        smooth=sol.smooth[:, tri[0], tri[1]],
        jump_amp=sol.jump_amp,
        meta=np.array(json.dumps(meta, sort_keys=True)),
    )
    os.replace(tmp, path)


def _load(path, solver):
    with np.load(path, allow_pickle=False) as z:
        names = tuple(str(s) for s in z["names"])
        if names != solver.names:
            return None
        n = solver.n
        tri = np.tril_indices(n)
        values = np.zeros((len(names), n, n))
        smooth = np.zeros_like(values)
        values[:, tri[0], tri[1]] = z["values"]
        smooth[:, tri[0], tri[1]] = z["smooth"]
        meta = json.loads(str(z["meta"]))
        jump_amp = z["jump_amp"].copy()
    sol = gs.GoursatSolution(
        problem=solver.problem,
        n=n,
        h=solver.h,
        names=names,
        values=values,
        smooth=smooth,
        jump_amp=jump_amp,
        jump_self=solver.self_coef.copy(),
        jump_corner=solver.jcorner.copy(),
        jump_dir=solver.jdir.copy(),
        jump_side=solver.jside.copy(),
        sweeps=int(meta["sweeps"]),
        history=list(meta["history"]),
        backend=str(meta.get("backend", "cache")),
    )
    return sol, meta


def _solve_cached(problem, mesh, tol, max_iter, kind, key, cache_dir, with_residual, rhs=None):
    solver = GoursatSolver(problem, mesh.n)
    path = _cache_path(cache_dir, kind, key) if cache_dir else None
    if path and os.path.exists(path):
        loaded = _load(path, solver)
        if loaded is not None:
            sol, meta = loaded
            report = meta.get("residual") or (_residual_report(solver, sol) if with_residual else {})
            return solver, sol, report
    sol = solver.solve(tol=tol, max_iter=max_iter, rhs=rhs)
    report = _residual_report(solver, sol) if with_residual else {}
    if path:
        meta = {
            "kind": kind,
            "coef_hash": key,
            "n": mesh.n,
            "seg_length": mesh.seg_length,
            "tol": tol,
            "sweeps": sol.sweeps,
            "history": sol.history,
            "backend": sol.backend,
            "node_order": "row-major lower triangle (ix, ixi) with ixi <= ix",
            "residual": report,
        }
        _save(path, sol, meta)
    return solver, sol, report


def solve_control_kernels(lc, mesh, tol=1e-9, max_iter=200, cache_dir=None, with_residual=False, rhs=None):
    """Solve for ``K`` and ``L``; ``theta`` is evaluated on the ``xi = 0`` edge."""
    if mesh.seg_length != lc.seg_length:
        raise DomainError("mesh length differs from the coefficient segment length")
    key = coefficient_hash(lc, mesh, tol, "control")
    problem = control_problem(lc)
    solver, sol, report = _solve_cached(problem, mesh, tol, max_iter, "control", key, cache_dir, with_residual, rhs)
    theta = lc.mu1 * sol["L21"][:, 0] - lc.eps1 * lc.k[0] * sol["K21"][:, 0]
    return KernelSet(mesh, sol, theta, sol.sweeps, sol.history, key, report)


def solve_observer_kernels(
    lc, mesh, tol=1e-9, max_iter=200, route="reflect", cache_dir=None, with_residual=False, rhs=None
):
    """Solve for ``M`` and ``N``; gains and ``lambda`` are read off the mapped solution."""
    if mesh.seg_length != lc.seg_length:
        raise DomainError("mesh length differs from the coefficient segment length")
    key = coefficient_hash(lc, mesh, tol, "observer-" + route)
    problem = observer_problem(lc, route)
    solver, sol, report = _solve_cached(
        problem, mesh, tol, max_iter, "observer-" + route, key, cache_dir, with_residual, rhs
    )
    oks = ObserverKernelSet(
        mesh=mesh,
        solution=sol,
        route=route,
        lam=np.zeros(mesh.n),
        p_gain=np.zeros((2, 2, mesh.n)),
        q_gain=np.zeros((2, 2, mesh.n)),
        sweeps=sol.sweeps,
        history=sol.history,
        coef_hash=key,
        eps=np.array(lc.eps, dtype=float),
        residual=report,
    )
    m21 = oks.values("M21")
    n21 = oks.values("N21")
    oks.lam = m21[0, :] - lc.k[1] * n21[0, :]
    P = np.empty((2, 2, mesh.n))
    Q = np.empty((2, 2, mesh.n))
    for i in (0, 1):
        for j in (0, 1):
            P[i, j] = oks.values(f"M{i + 1}{j + 1}")[:, -1] * lc.eps[j]
            Q[i, j] = oks.values(f"N{i + 1}{j + 1}")[:, -1] * lc.eps[j]
    oks.p_gain = P
    oks.q_gain = Q
    return oks
