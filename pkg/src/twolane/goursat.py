"""Successive-approximation solver for coupled first-order Goursat systems.

The unknowns ``u_c(x, xi)`` live on the lower triangle ``0 <= xi <= x <= L``
and satisfy

    a_c du_c/dx + b_c du_c/dxi = s_c u_c + sum_t coef_t(x, xi) u_src(t)(x, xi)

with every coefficient of the form ``c exp(kx x + kxi xi)``.  Each component
carries data on some of the three edges (the diagonal ``xi = x``, the bottom
``xi = 0`` and the right side ``x = L``); data is either an exponential of
the same form or a multiple of another component's value on that edge.

A sweep recomputes every node by integrating along the node's own
characteristic from the point where it meets a data edge, with the self
term handled by an integrating factor and the coupling terms read from the
previous sweep.  Linked edge data reads the current sweep, so components
are processed in dependency order.

When two data edges of one component meet at a corner the solution jumps
across the characteristic through that corner.  The jump is carried
analytically: nodes store a continuous part and the known jump amplitude is
added back on the appropriate side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import HAVE_NUMBA, njit
from .errors import DomainError, KernelConfigurationError, KernelConvergenceError

DIAG, XI0, XL = 0, 1, 2
EDGE_NAMES = ("diag", "xi0", "xL")
_EDGE_N = np.array([[-1.0, 1.0], [0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class ExpAffine:
    """``c * exp(kx * x + kxi * xi)``."""

    c: float
    kx: float = 0.0
    kxi: float = 0.0

    def __call__(self, x, xi):
        return self.c * np.exp(self.kx * np.asarray(x) + self.kxi * np.asarray(xi))


@dataclass(frozen=True)
class Link:
    """Edge data equal to ``factor`` times component ``src`` on the same edge."""

    src: str
    factor: float


@dataclass
class Component:
    name: str
    direction: tuple
    terms: list = field(default_factory=list)  # (src name, ExpAffine)
    edges: dict = field(default_factory=dict)  # edge id -> ExpAffine | Link
    jump: tuple | None = None  # (edge whose side gets H = 1, other edge)


@dataclass
class GoursatProblem:
    components: list
    seg_length: float

    def index(self, name):
        for k, comp in enumerate(self.components):
            if comp.name == name:
                return k
        raise KeyError(name)


def _vertex(ea, eb, L):
    pair = {ea, eb}
    if pair == {DIAG, XI0}:
        return (0.0, 0.0)
    if pair == {DIAG, XL}:
        return (L, L)
    if pair == {XI0, XL}:
        return (L, 0.0)
    raise KernelConfigurationError(f"edges {ea} and {eb} do not meet")


# --------------------------------------------------------------------------
# interpolation on the lower triangle, split parallel to the diagonal


def _interp_scalar(U, x, xi, h, n):
    fx = x / h
    fxi = xi / h
    i = int(math.floor(fx))
    if i > n - 2:
        i = n - 2
    if i < 0:
        i = 0
    j = int(math.floor(fxi))
    if j < 0:
        j = 0
    if j > i:
        j = i
    ax = fx - i
    axi = fxi - j
    if ax < 0.0:
        ax = 0.0
    if ax > 1.0:
        ax = 1.0
    if axi < 0.0:
        axi = 0.0
    if axi > 1.0:
        axi = 1.0
    if j == i and axi > ax:
        axi = ax
    if axi <= ax:
        return U[i, j] * (1.0 - ax) + U[i + 1, j] * (ax - axi) + U[i + 1, j + 1] * axi
    return U[i, j] * (1.0 - axi) + U[i, j + 1] * (axi - ax) + U[i + 1, j + 1] * ax


_interp_nb = njit(cache=True)(_interp_scalar) if HAVE_NUMBA else _interp_scalar


def interp_tri(U, x, xi, h):
    """Vectorised piecewise-linear interpolation of nodal array ``U``."""
    n = U.shape[0]
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    fx = x / h
    fxi = xi / h
    i = np.clip(np.floor(fx).astype(np.int64), 0, n - 2)
    j = np.clip(np.floor(fxi).astype(np.int64), 0, None)
    j = np.minimum(j, i)
    ax = np.clip(fx - i, 0.0, 1.0)
    axi = np.clip(fxi - j, 0.0, 1.0)
    axi = np.where((j == i) & (axi > ax), ax, axi)
    lower = axi <= ax
    u00 = U[i, j]
    u11 = U[i + 1, j + 1]
    lo = u00 * (1.0 - ax) + U[i + 1, j] * (ax - axi) + u11 * axi
    jj = np.minimum(j + 1, n - 1)
    up = u00 * (1.0 - axi) + U[i, jj] * (axi - ax) + u11 * ax
    return np.where(lower, lo, up)


# --------------------------------------------------------------------------
# sweep kernels


def _rhs_sweep_loop(qoff, qx, qxi, qw, F, h, out):
    # path integral of the interpolated right side F for every node
    n = F.shape[0]
    nn = qoff.shape[0] - 1
    for p in range(nn):
        acc = 0.0
        for q in range(qoff[p], qoff[p + 1]):
            acc += qw[q] * _interp_nb(F, qx[q], qxi[q], h, n)
        out[p] = acc
    return out


def _rhs_sweep_numpy(qoff, qx, qxi, qw, F, h, out):
    f = interp_tri(F, qx, qxi, h)
    node = np.repeat(np.arange(qoff.size - 1), np.diff(qoff))
    out[:] = np.bincount(node, weights=qw * f, minlength=qoff.size - 1)
    return out


if HAVE_NUMBA:
    rhs_sweep_loop = njit(cache=True)(_rhs_sweep_loop)
    rhs_sweep = rhs_sweep_loop
else:
    rhs_sweep_loop = _rhs_sweep_loop
    rhs_sweep = _rhs_sweep_numpy
rhs_sweep_numpy = _rhs_sweep_numpy


# --------------------------------------------------------------------------


@dataclass
class _CompGeom:
    sign: np.ndarray  # trace sign per node
    tau: np.ndarray  # parameter distance to the data edge
    edge: np.ndarray  # data edge hit
    bx: np.ndarray
    bxi: np.ndarray
    bside: np.ndarray  # jump-side bits at the boundary point
    efac: np.ndarray  # integrating factor applied to the boundary value
    h_own: np.ndarray  # own jump indicator per node (0/1)
    qoff: np.ndarray
    qx: np.ndarray
    qxi: np.ndarray
    qw: np.ndarray
    jw: np.ndarray  # (nodes, ncomp) path weights of the jump parts of coupled components


def _line_side(cx, cxi, dx, dxi, x, xi, L):
    """Side of the line through ``(cx, cxi)`` along ``(dx, dxi)``; 0 on the line.

    Points within round-off of the line count as on it, which matters when
    the characteristic slope is rational and lattice nodes fall on it.
    """
    s = dx * (np.asarray(xi) - cxi) - dxi * (np.asarray(x) - cx)
    tol = 1e-11 * L * math.hypot(dx, dxi)
    return np.where(np.abs(s) <= tol, 0.0, np.sign(s))


@dataclass
class GoursatSolution:
    """Converged nodal values plus everything needed to evaluate off-node."""

    problem: GoursatProblem
    n: int
    h: float
    names: tuple
    values: np.ndarray  # (ncomp, n, n) full nodal values, zero above the diagonal
    smooth: np.ndarray  # continuous parts
    jump_amp: np.ndarray  # J0 per component (0 without a jump)
    jump_self: np.ndarray
    jump_corner: np.ndarray  # (ncomp, 2)
    jump_dir: np.ndarray  # (ncomp, 2)
    jump_side: np.ndarray  # side sign that carries the jump, 0 if none
    sweeps: int
    history: list
    backend: str

    def __getitem__(self, name):
        return self.values[self.names.index(name)]

    def jump_indicator(self, k, x, xi):
        s = self.jump_side[k]
        if s == 0:
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(xi)).shape)
        cx, cxi = self.jump_corner[k]
        dx, dxi = self.jump_dir[k]
        side = _line_side(cx, cxi, dx, dxi, x, xi, (self.n - 1) * self.h)
        # points on the line belong to the side that carries the jump
        return ((side == s) | (side == 0.0)).astype(float)

    def jump_value(self, k, x, xi):
        cx, cxi = self.jump_corner[k]
        dx, dxi = self.jump_dir[k]
        tau = ((np.asarray(x) - cx) * dx + (np.asarray(xi) - cxi) * dxi) / (dx * dx + dxi * dxi)
        return self.jump_amp[k] * np.exp(self.jump_self[k] * tau)

    def evaluate(self, name, x, xi, side_ref=None):
        """Values of ``name`` at arbitrary points of the triangle.

        Points exactly on a jump line take the side of ``side_ref`` (an
        ``(x, xi)`` pair of arrays) when given, else the side they fall on.
        """
        k = self.names.index(name)
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        out = interp_tri(self.smooth[k], x, xi, self.h)
        if self.jump_side[k] != 0:
            rx, rxi = (x, xi) if side_ref is None else side_ref
            out = out + self.jump_indicator(k, rx, rxi) * self.jump_value(k, x, xi)
        return out


class GoursatSolver:
    """Precomputes characteristic geometry for a problem on an ``n``-node mesh."""

    def __init__(self, problem, n):
        if n < 3:
            raise DomainError("mesh needs at least 3 nodes per edge")
        self.problem = problem
        self.n = int(n)
        self.L = float(problem.seg_length)
        self.h = self.L / (self.n - 1)
        comps = problem.components
        self.names = tuple(c.name for c in comps)
        if len(set(self.names)) != len(self.names):
            raise KernelConfigurationError("component names must be unique")
        self.nc = len(comps)
        ii, jj = np.tril_indices(self.n)
        self.node_i = ii
        self.node_j = jj
        self.X = ii * self.h
        self.XI = jj * self.h
        self._setup_terms()
        self._setup_jumps()
        self.order = self._link_order()
        traces = [self._trace(k) for k in range(self.nc)]
        self.geom = [self._geometry(k, *traces[k]) for k in range(self.nc)]

    # -- setup ---------------------------------------------------------------

    def _setup_terms(self):
        self.self_coef = np.zeros(self.nc)
        self.terms = []
        for k, comp in enumerate(self.problem.components):
            src, c, kx, kxi = [], [], [], []
            for name, coef in comp.terms:
                s = self.names.index(name)
                if s == k and coef.kx == 0.0 and coef.kxi == 0.0:
                    self.self_coef[k] += coef.c
                    continue
                if coef.c == 0.0:
                    continue
                src.append(s)
                c.append(coef.c)
                kx.append(coef.kx)
                kxi.append(coef.kxi)
            self.terms.append(
                (
                    np.array(src, dtype=np.int64),
                    np.array(c, dtype=float),
                    np.array(kx, dtype=float),
                    np.array(kxi, dtype=float),
                )
            )
        xg = np.arange(self.n) * self.h
        XG, XIG = np.meshgrid(xg, xg, indexing="ij")
        self.cgrid = [[ci * np.exp(a * XG + b * XIG) for ci, a, b in zip(*t[1:])] for t in self.terms]

    def _setup_jumps(self):
        self.jbit = -np.ones(self.nc, dtype=np.int64)
        self.jcorner = np.zeros((self.nc, 2))
        self.jdir = np.zeros((self.nc, 2))
        self.jside = np.zeros(self.nc, dtype=np.int64)
        bit = 0
        for k, comp in enumerate(self.problem.components):
            if comp.jump is None:
                continue
            ea, eb = comp.jump
            for e in (ea, eb):
                if e not in comp.edges:
                    raise KernelConfigurationError(f"{comp.name}: jump edge {EDGE_NAMES[e]} carries no data")
            self.jbit[k] = bit
            bit += 1
            self.jcorner[k] = _vertex(ea, eb, self.L)
            self.jdir[k] = comp.direction
        if bit > 7:
            raise KernelConfigurationError("at most 8 jump components are supported")

    def _link_order(self):
        deps = {}
        for k, comp in enumerate(self.problem.components):
            deps[k] = {self.names.index(d.src) for d in comp.edges.values() if isinstance(d, Link)}
        order, done = [], set()
        while len(order) < self.nc:
            ready = [k for k in range(self.nc) if k not in done and deps[k] <= done]
            if not ready:
                raise KernelConfigurationError("cyclic edge-data links")
            for k in ready:
                order.append(k)
                done.add(k)
        return order

    def _side_bits(self, x, xi):
        bits = np.zeros(np.shape(x), dtype=np.int64)
        for s in range(self.nc):
            b = self.jbit[s]
            if b < 0:
                continue
            cx, cxi = self.jcorner[s]
            dx, dxi = self.jdir[s]
            side = _line_side(cx, cxi, dx, dxi, x, xi, self.L)
            bits |= (((side == self.jside[s]) | (side == 0.0)).astype(np.int64)) << b
        return bits

    def _exit(self, P, d, s):
        """Exit parameter and edge of the ray ``P + s t d`` for every node."""
        L = self.L
        cvec = np.array([0.0, 0.0, L])
        taus = np.full((P.shape[0], 3), np.inf)
        for e in range(3):
            nd = s * (_EDGE_N[e] @ d)
            if nd > 1e-300:
                slack = cvec[e] - P @ _EDGE_N[e]
                taus[:, e] = np.maximum(slack, 0.0) / nd
        tmin = taus.min(axis=1)
        tol = 1e-12 * (L / max(np.hypot(*d), 1e-300))
        edge = np.argmax(taus <= tmin[:, None] + tol, axis=1)  # ties go to the lowest edge id
        return tmin, edge

    def _trace(self, k):
        comp = self.problem.components[k]
        d = np.asarray(comp.direction, dtype=float)
        if not np.all(np.isfinite(d)) or np.hypot(*d) == 0.0:
            raise KernelConfigurationError(f"{comp.name}: invalid characteristic direction {comp.direction}")
        P = np.stack([self.X, self.XI], axis=1)
        N = P.shape[0]
        has = np.array([e in comp.edges for e in range(3)])
        t_back, e_back = self._exit(P, d, -1.0)
        t_fwd, e_fwd = self._exit(P, d, 1.0)
        ok_back = has[e_back] & np.isfinite(t_back)
        ok_fwd = has[e_fwd] & np.isfinite(t_fwd)
        if not np.all(ok_back | ok_fwd):
            bad = np.argmin(ok_back | ok_fwd)
            raise KernelConfigurationError(
                f"{comp.name}: characteristic through ({P[bad, 0]:.6g}, {P[bad, 1]:.6g}) "
                "meets no data edge in either direction"
            )
        sign = np.where(ok_back, -1.0, 1.0)
        tau = np.where(ok_back, t_back, t_fwd)
        edge = np.where(ok_back, e_back, e_fwd)
        B = P + (sign * tau)[:, None] * d[None, :]
        # snap onto the edge
        bx, bxi = B[:, 0].copy(), B[:, 1].copy()
        on = edge == XI0
        bxi[on] = 0.0
        on = edge == XL
        bx[on] = self.L
        on = edge == DIAG
        m = 0.5 * (bx[on] + bxi[on])
        bx[on] = m
        bxi[on] = m
        bx = np.clip(bx, 0.0, self.L)
        bxi = np.clip(bxi, 0.0, bx)

        h_own = np.zeros(N)
        if comp.jump is not None:
            ea, eb = comp.jump
            cx, cxi = self.jcorner[k]
            side = _line_side(cx, cxi, d[0], d[1], self.X, self.XI, self.L)
            sa = np.unique(side[(edge == ea) & (side != 0)])
            sb = np.unique(side[(edge == eb) & (side != 0)])
            if sa.size != 1 or (sb.size and sb[0] == sa[0]):
                raise KernelConfigurationError(f"{comp.name}: jump edges are not separated by one characteristic")
            self.jside[k] = int(sa[0])
            # nodes on the jump line trace into the corner; take edge_a's value there
            edge = np.where((side == 0) & (edge == eb), ea, edge)
            h_own = (edge == ea).astype(float)
        return sign, tau, edge, bx, bxi, h_own

    def _geometry(self, k, sign, tau, edge, bx, bxi, h_own):
        comp = self.problem.components[k]
        d = np.asarray(comp.direction, dtype=float)
        P = np.stack([self.X, self.XI], axis=1)
        N = P.shape[0]
        cs = self.self_coef[k]
        efac = np.exp(-sign * cs * tau)

        # breakpoints where the path crosses jump lines of coupled components
        src = self.terms[k][0]
        jump_srcs = sorted({int(s) for s in src if self.jbit[s] >= 0 and s != k})
        bps = [np.zeros(N), tau.copy()]
        for s in jump_srcs:
            C = self.jcorner[s]
            dj = self.jdir[s]
            # P + sign*sig*d = C + t*dj
            det = (sign * d[0]) * (-dj[1]) - (sign * d[1]) * (-dj[0])
            with np.errstate(divide="ignore", invalid="ignore"):
                rx = C[0] - P[:, 0]
                ry = C[1] - P[:, 1]
                sig = (rx * (-dj[1]) - ry * (-dj[0])) / det
            sig = np.where(np.isfinite(sig) & (sig > 0.0) & (sig < tau), sig, np.nan)
            bps.append(sig)
        bp = np.sort(np.stack(bps, axis=1), axis=1)  # nan sorts last
        seg_lo = bp[:, :-1]
        seg_hi = bp[:, 1:]
        valid = np.isfinite(seg_lo) & np.isfinite(seg_hi) & (seg_hi > seg_lo)
        speed = np.hypot(*d)
        length = np.where(valid, (seg_hi - seg_lo) * speed, 0.0)
        m = np.where(valid, np.maximum(1, np.ceil(length / self.h - 1e-9)).astype(np.int64), 0)
        npts = np.where(valid, m + 1, 0)
        per_node = npts.sum(axis=1)
        qoff = np.zeros(N + 1, dtype=np.int64)
        np.cumsum(per_node, out=qoff[1:])
        total = int(qoff[-1])
        flat_valid = valid.ravel()
        seg_node = np.repeat(np.arange(N), valid.shape[1])[flat_valid]
        seg_lo_f = seg_lo.ravel()[flat_valid]
        seg_hi_f = seg_hi.ravel()[flat_valid]
        m_f = m.ravel()[flat_valid]
        np_f = m_f + 1
        rep = np.repeat(np.arange(seg_node.size), np_f)
        starts = np.zeros(seg_node.size, dtype=np.int64)
        np.cumsum(np_f[:-1], out=starts[1:])
        local = np.arange(total) - starts[rep]
        dsig = (seg_hi_f - seg_lo_f) / m_f
        sig = seg_lo_f[rep] + dsig[rep] * local
        w = dsig[rep] * np.where((local == 0) | (local == m_f[rep]), 0.5, 1.0)
        nodeq = seg_node[rep]
        sgn = sign[nodeq]
        qx = P[nodeq, 0] + sgn * sig * d[0]
        qxi = P[nodeq, 1] + sgn * sig * d[1]
        qx = np.clip(qx, 0.0, self.L)
        qxi = np.clip(qxi, 0.0, qx)
        qw = -sgn * np.exp(-sgn * cs * sig) * w
        midsig = 0.5 * (seg_lo_f + seg_hi_f)
        mx = P[seg_node, 0] + sign[seg_node] * midsig * d[0]
        mxi = P[seg_node, 1] + sign[seg_node] * midsig * d[1]
        qside = self._side_bits(mx, mxi)[rep].astype(np.int64)
        # jump parts of the sources are known up to their amplitude, so their
        # path integrals reduce to fixed weights
        jw = np.zeros((N, self.nc))
        src, c, kx, kxi = self.terms[k]
        for t in range(src.size):
            s = int(src[t])
            b = self.jbit[s]
            if b < 0:
                continue
            on = ((qside >> b) & 1).astype(bool)
            if not np.any(on):
                continue
            xo, xio = qx[on], qxi[on]
            val = qw[on] * c[t] * np.exp(kx[t] * xo + kxi[t] * xio + self.self_coef[s] * self._jump_tau(s, xo, xio))
            jw[:, s] += np.bincount(nodeq[on], weights=val, minlength=N)

        # side of the boundary point: taken just inside the domain along the path
        eps_sig = np.maximum(tau - 1e-6 * self.h / speed, 0.5 * tau)
        ix = P[:, 0] + sign * eps_sig * d[0]
        ixi = P[:, 1] + sign * eps_sig * d[1]
        bside = self._side_bits(ix, ixi)
        return _CompGeom(sign, tau, edge, bx, bxi, bside, efac, h_own, qoff, qx, qxi, qw, jw)

    # -- sweeps --------------------------------------------------------------

    def _edge_value(self, k, e, x, xi, Ut, J0, side_bits):
        data = self.problem.components[k].edges[e]
        if isinstance(data, ExpAffine):
            return data(x, xi)
        s = self.names.index(data.src)
        val = interp_tri(Ut[s], x, xi, self.h)
        b = self.jbit[s]
        if b >= 0:
            on = ((np.asarray(side_bits) >> b) & 1).astype(bool)
            cx, cxi = self.jcorner[s]
            dx, dxi = self.jdir[s]
            tau = ((x - cx) * dx + (xi - cxi) * dxi) / (dx * dx + dxi * dxi)
            val = val + np.where(on, J0[s] * np.exp(self.self_coef[s] * tau), 0.0)
        return data.factor * val

    def _jump_tau(self, k, x, xi):
        cx, cxi = self.jcorner[k]
        dx, dxi = self.jdir[k]
        return ((x - cx) * dx + (xi - cxi) * dxi) / (dx * dx + dxi * dxi)

    def _full(self, Ut, J0):
        U = Ut.copy()
        for k in range(self.nc):
            if self.jbit[k] >= 0:
                g = self.geom[k]
                jv = J0[k] * np.exp(self.self_coef[k] * self._jump_tau(k, self.X, self.XI))
                U[k, self.node_i, self.node_j] += g.h_own * jv
        return U

    def sweep(self, Ut, J0, rhs=None):
        """One successive-approximation sweep; returns new (smooth parts, jump amplitudes)."""
        rhs = rhs_sweep if rhs is None else rhs
        new = np.zeros_like(Ut)
        J0_new = J0.copy()
        nn = self.X.size
        buf = np.empty(nn)
        for k in self.order:
            g = self.geom[k]
            src = self.terms[k][0]
            if src.size:
                F = np.zeros((self.n, self.n))
                for t in range(src.size):
                    F += self.cgrid[k][t] * Ut[src[t]]
                rhs(g.qoff, g.qx, g.qxi, g.qw, F, self.h, buf)
                integral = buf + g.jw @ J0
            else:
                integral = np.zeros(nn)
            bval = np.zeros(nn)
            for e in range(3):
                on = g.edge == e
                if np.any(on):
                    bval[on] = self._edge_value(k, e, g.bx[on], g.bxi[on], new, J0_new, g.bside[on])
            u = g.efac * bval + integral
            comp = self.problem.components[k]
            if comp.jump is not None:
                ea, eb = comp.jump
                cx, cxi = self.jcorner[k]
                cx_a = np.array([cx])
                cxi_a = np.array([cxi])
                va = self._edge_value(k, ea, cx_a, cxi_a, new, J0_new, np.zeros(1, dtype=np.int64))[0]
                vb = self._edge_value(k, eb, cx_a, cxi_a, new, J0_new, np.zeros(1, dtype=np.int64))[0]
                J0_new[k] = va - vb
                jv = J0_new[k] * np.exp(self.self_coef[k] * self._jump_tau(k, self.X, self.XI))
                u = u - g.h_own * jv
            new[k, self.node_i, self.node_j] = u
        return new, J0_new

    def solve(self, tol=1e-9, max_iter=200, rhs=None):
        if not tol > 0.0:
            raise DomainError("tol must be > 0")
        Ut = np.zeros((self.nc, self.n, self.n))
        J0 = np.zeros(self.nc)
        U_old = self._full(Ut, J0)
        history = []
        for it in range(1, max_iter + 1):
            Ut, J0 = self.sweep(Ut, J0, rhs=rhs)
            U = self._full(Ut, J0)
            scale = float(np.max(np.abs(U)))
            diff = float(np.max(np.abs(U - U_old)))
            rel = diff / scale if scale > 0.0 else diff
            history.append(rel)
            U_old = U
            if rel < tol:
                break
        else:
            raise KernelConvergenceError(
                f"successive approximations did not reach tol={tol:g} in {max_iter} sweeps "
                f"(last relative change {history[-1]:.3e})",
                residual=history[-1],
                sweeps=max_iter,
            )
        return GoursatSolution(
            problem=self.problem,
            n=self.n,
            h=self.h,
            names=self.names,
            values=U,
            smooth=Ut,
            jump_amp=J0,
            jump_self=self.self_coef.copy(),
            jump_corner=self.jcorner.copy(),
            jump_dir=self.jdir.copy(),
            jump_side=self.jside.copy(),
            sweeps=it,
            history=history,
            backend="numba" if HAVE_NUMBA and (rhs is None or rhs is rhs_sweep_loop) else "numpy",
        )

    # -- verification --------------------------------------------------------

    def rhs_at(self, sol, k, x, xi, side_ref=None):
        """Full right side (self term included) of component ``k`` at points."""
        comp = self.problem.components[k]
        out = np.zeros(np.shape(x))
        for name, coef in comp.terms:
            out = out + coef(x, xi) * sol.evaluate(name, x, xi, side_ref=side_ref)
        return out

    def jump_distance(self, x, xi):
        """Distance from each point to the nearest jump line (inf without jumps)."""
        dist = np.full(np.shape(x), np.inf)
        for k in range(self.nc):
            if self.jbit[k] < 0:
                continue
            cx, cxi = self.jcorner[k]
            dx, dxi = self.jdir[k]
            dist = np.minimum(dist, np.abs(dx * (xi - cxi) - dxi * (x - cx)) / math.hypot(dx, dxi))
        return dist

    def residual(self, sol, mask=None):
        """Directional finite-difference residual of every PDE at mesh nodes.

        At each node P the one-sided difference of the solution along the
        component's own characteristic (one mesh step towards the data edge,
        or away from it where that step would leave the triangle) is compared
        with the right side at P.  This is a first-order consistent check, so
        on a converged solution it shrinks like O(h).

        Nodes within ``mask`` metres of a jump line are skipped; the band is
        fixed in physical units (default 4% of the segment) so that the same
        region is measured at every resolution.  Norms are area weighted.
        """
        h = self.h
        if mask is None:
            mask = 0.04 * self.L
        out = {}
        far = self.jump_distance(self.X, self.XI) > mask
        tol = 1e-12 * self.L
        for k, comp in enumerate(self.problem.components):
            d = np.asarray(comp.direction, dtype=float)
            dt = h / np.hypot(*d)
            Px, Pxi = self.X, self.XI
            bx, bxi = Px - dt * d[0], Pxi - dt * d[1]
            ok_b = (bxi >= -tol) & (bxi <= bx + tol) & (bx <= self.L + tol)
            sgn = np.where(ok_b, -1.0, 1.0)
            Fx = np.clip(Px + sgn * dt * d[0], 0.0, self.L)
            Fxi = np.minimum(np.clip(Pxi + sgn * dt * d[1], 0.0, None), Fx)
            uP = sol.values[k, self.node_i, self.node_j]
            uF = sol.evaluate(comp.name, Fx, Fxi, side_ref=(Px, Pxi))
            deriv = (uF - uP) / (sgn * dt)
            r = np.abs(deriv - self.rhs_at(sol, k, Px, Pxi))[far]
            out[comp.name] = {
                "max": float(r.max()) if r.size else 0.0,
                "l2": float(math.sqrt(np.sum(r**2) * h * h)),
                "l1": float(np.sum(r) * h * h),
                "nodes": int(r.size),
            }
        return out

    def boundary_violation(self, sol):
        """Max absolute mismatch between nodal values and imposed edge data."""
        out = {}
        L = self.L
        for k, comp in enumerate(self.problem.components):
            worst = 0.0
            for e, data in comp.edges.items():
                if e == DIAG:
                    on = self.node_i == self.node_j
                elif e == XI0:
                    on = self.node_j == 0
                else:
                    on = self.node_i == self.n - 1
                if comp.jump is not None and e == comp.jump[1]:
                    cx, cxi = self.jcorner[k]
                    on = on & ~((np.abs(self.X - cx) < 1e-12 * L) & (np.abs(self.XI - cxi) < 1e-12 * L))
                if not np.any(on):
                    continue
                x, xi = self.X[on], self.XI[on]
                u = sol.values[k, self.node_i[on], self.node_j[on]]
                if isinstance(data, ExpAffine):
                    target = data(x, xi)
                else:
                    s = self.names.index(data.src)
                    target = data.factor * sol.values[s, self.node_i[on], self.node_j[on]]
                worst = max(worst, float(np.max(np.abs(u - target))))
            out[comp.name] = worst
        return out
