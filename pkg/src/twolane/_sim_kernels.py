"""Inner loops of the two time steppers.

Each stepper exists twice: an explicit loop compiled by numba (``*_loop``)
and a vectorised numpy version (``*_numpy``).  Both are always importable so
the benchmark can time them side by side; ``linear_step`` and ``llf_step``
point at whichever one the active backend prefers.
"""

import numpy as np

from ._accel import HAVE_NUMBA, njit


def _linear_step_loop(state, coef, eps, mu, k, lu, dt, dx, out):
    # state rows: w_s, w_f, vbar_s, vbar_f; coef[:, :, j] is the source matrix at cell j
    n = state.shape[1]
    for j in range(n):
        for r in range(4):
            acc = 0.0
            for c in range(4):
                acc += coef[r, c, j] * state[c, j]
            out[r, j] = state[r, j] + dt * acc
    for i in range(2):
        ci = dt * eps[i] / dx
        left = k[i] * state[2 + i, 0]
        for j in range(n):
            up = left if j == 0 else state[i, j - 1]
            out[i, j] -= ci * (state[i, j] - up)
        cv = dt * mu[i] / dx
        right = lu[i]
        for j in range(n):
            down = right if j == n - 1 else state[2 + i, j + 1]
            out[2 + i, j] -= cv * (state[2 + i, j] - down)
    return out


def _linear_step_numpy(state, coef, eps, mu, k, lu, dt, dx, out):
    src = np.einsum("rcj,cj->rj", coef, state)
    w = state[:2]
    vb = state[2:]
    w_up = np.empty_like(w)
    w_up[:, 1:] = w[:, :-1]
    w_up[:, 0] = k * vb[:, 0]
    vb_down = np.empty_like(vb)
    vb_down[:, :-1] = vb[:, 1:]
    vb_down[:, -1] = lu
    out[:2] = w - (dt / dx) * eps[:, None] * (w - w_up) + dt * src[:2]
    out[2:] = vb - (dt / dx) * mu[:, None] * (vb - vb_down) + dt * src[2:]
    return out


def _llf_flux_loop(rl, yl, pl, rr, yr, pr, gamma):
    vl = yl / rl - pl
    vr = yr / rr - pr
    al = max(abs(vl), abs(vl - gamma * pl))
    ar = max(abs(vr), abs(vr - gamma * pr))
    a = max(al, ar)
    f0 = 0.5 * (rl * vl + rr * vr) - 0.5 * a * (rr - rl)
    f1 = 0.5 * (yl * vl + yr * vr) - 0.5 * a * (yr - yl)
    return f0, f1


_llf_flux = njit(cache=True)(_llf_flux_loop) if HAVE_NUMBA else _llf_flux_loop


def _llf_step_loop(q, phys, u_out, dt, dx, out, bflux):
    """One LLF step for both lanes.

    ``q`` has shape (2, 2, n): lane, (rho, y), cell.  ``phys`` packs
    ``gamma, v_max, rho_m, scale_s, scale_f, T_s, T_f, Te_s, Te_f,
    qstar_s, qstar_f, vstar_s, vstar_f``.  ``bflux`` receives the inlet and
    outlet mass fluxes, shape (2, 2).
    """
    g = phys[0]
    vm = phys[1]
    rm = phys[2]
    n = q.shape[2]
    for i in range(2):
        scale = phys[3 + i]
        qstar = phys[9 + i]
        vstar = phys[11 + i]
        # inlet ghost: copy speed, impose the flux
        r0 = q[i, 0, 0]
        p0 = vm * (r0 / scale) ** g
        v0 = q[i, 1, 0] / r0 - p0
        rg = qstar / v0
        pg = vm * (rg / scale) ** g
        yg = rg * (v0 + pg)
        f0, f1 = _llf_flux(rg, yg, pg, r0, q[i, 1, 0], p0, g)
        bflux[i, 0] = f0
        prev0 = f0
        prev1 = f1
        for j in range(n):
            rl = q[i, 0, j]
            pl = vm * (rl / scale) ** g
            yl = q[i, 1, j]
            if j < n - 1:
                rr = q[i, 0, j + 1]
                pr = vm * (rr / scale) ** g
                yr = q[i, 1, j + 1]
            else:
                # outlet ghost: actuated speed, copied density
                rr = rl
                pr = pl
                yr = rr * (vstar + u_out[i] + pr)
            f0, f1 = _llf_flux(rl, yl, pl, rr, yr, pr, g)
            out[i, 0, j] = rl - dt / dx * (f0 - prev0)
            out[i, 1, j] = yl - dt / dx * (f1 - prev1)
            prev0 = f0
            prev1 = f1
        bflux[i, 1] = prev0
    ts = phys[5]
    tf = phys[6]
    tes = phys[7]
    tef = phys[8]
    for j in range(n):
        rs = q[0, 0, j]
        rf = q[1, 0, j]
        ps = vm * (rs / phys[3]) ** g
        pf = vm * (rf / phys[4]) ** g
        vs = q[0, 1, j] / rs - ps
        vf = q[1, 1, j] / rf - pf
        sr = rf / tf - rs / ts
        ms = rf * vf / tf - rs * vs / ts + rs * (vm * (1.0 - (rs / rm) ** g) - vs) / tes
        mf = rs * vs / ts - rf * vf / tf + rf * (vm * (1.0 - (rf / rm) ** g) - vf) / tef
        out[0, 0, j] += dt * sr
        out[1, 0, j] -= dt * sr
        out[0, 1, j] += dt * (ms + (1.0 + g) * ps * sr)
        out[1, 1, j] += dt * (mf - (1.0 + g) * pf * sr)
    return out


def _llf_step_numpy(q, phys, u_out, dt, dx, out, bflux):
    g, vm, rm = phys[0], phys[1], phys[2]
    scale = phys[3:5][:, None]
    qstar = phys[9:11]
    vstar = phys[11:13]
    rho = q[:, 0]
    y = q[:, 1]
    p = vm * (rho / scale) ** g
    v = y / rho - p
    # extended arrays with one ghost cell on each side
    v_in = v[:, 0]
    rg_in = qstar / v_in
    pg_in = vm * (rg_in / scale[:, 0]) ** g
    rg_out = rho[:, -1]
    pg_out = p[:, -1]
    vg_out = vstar + u_out
    rx = np.concatenate([rg_in[:, None], rho, rg_out[:, None]], axis=1)
    px = np.concatenate([pg_in[:, None], p, pg_out[:, None]], axis=1)
    vx = np.concatenate([v_in[:, None], v, vg_out[:, None]], axis=1)
    yx = rx * (vx + px)
    yx[:, 1:-1] = y
    a_cell = np.maximum(np.abs(vx), np.abs(vx - g * px))
    a = np.maximum(a_cell[:, :-1], a_cell[:, 1:])
    fr = rx * vx
    fy = yx * vx
    f0 = 0.5 * (fr[:, :-1] + fr[:, 1:]) - 0.5 * a * (rx[:, 1:] - rx[:, :-1])
    f1 = 0.5 * (fy[:, :-1] + fy[:, 1:]) - 0.5 * a * (yx[:, 1:] - yx[:, :-1])
    bflux[:, 0] = f0[:, 0]
    bflux[:, 1] = f0[:, -1]
    rs, rf = rho[0], rho[1]
    ps, pf = p[0], p[1]
    vs, vf = v[0], v[1]
    ts, tf, tes, tef = phys[5], phys[6], phys[7], phys[8]
    sr = rf / tf - rs / ts
    ms = rf * vf / tf - rs * vs / ts + rs * (vm * (1.0 - (rs / rm) ** g) - vs) / tes
    mf = rs * vs / ts - rf * vf / tf + rf * (vm * (1.0 - (rf / rm) ** g) - vf) / tef
    out[:, 0] = rho - dt / dx * (f0[:, 1:] - f0[:, :-1])
    out[:, 1] = y - dt / dx * (f1[:, 1:] - f1[:, :-1])
    out[0, 0] += dt * sr
    out[1, 0] -= dt * sr
    out[0, 1] += dt * (ms + (1.0 + g) * ps * sr)
    out[1, 1] += dt * (mf - (1.0 + g) * pf * sr)
    return out


def _max_wave_speed_loop(q, gamma, vm, scale_s, scale_f):
    n = q.shape[2]
    a = 0.0
    for i in range(2):
        scale = scale_s if i == 0 else scale_f
        for j in range(n):
            r = q[i, 0, j]
            p = vm * (r / scale) ** gamma
            v = q[i, 1, j] / r - p
            a = max(a, abs(v), abs(v - gamma * p))
    return a


def _max_wave_speed_numpy(q, gamma, vm, scale_s, scale_f):
    scale = np.array([scale_s, scale_f])[:, None]
    p = vm * (q[:, 0] / scale) ** gamma
    v = q[:, 1] / q[:, 0] - p
    return float(max(np.max(np.abs(v)), np.max(np.abs(v - gamma * p))))


if HAVE_NUMBA:
    linear_step_loop = njit(cache=True)(_linear_step_loop)
    llf_step_loop = njit(cache=True)(_llf_step_loop)
    max_wave_speed_loop = njit(cache=True)(_max_wave_speed_loop)
    linear_step = linear_step_loop
    llf_step = llf_step_loop
    max_wave_speed = max_wave_speed_loop
else:
    linear_step_loop = _linear_step_loop
    llf_step_loop = _llf_step_loop
    max_wave_speed_loop = _max_wave_speed_loop
    linear_step = _linear_step_numpy
    llf_step = _llf_step_numpy
    max_wave_speed = _max_wave_speed_numpy

linear_step_numpy = _linear_step_numpy
llf_step_numpy = _llf_step_numpy
max_wave_speed_numpy = _max_wave_speed_numpy
