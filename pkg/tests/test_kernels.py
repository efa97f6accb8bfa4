import dataclasses

import mpmath as mp
import numpy as np
import pytest

from twolane.errors import CongestionError, KernelConvergenceError
from twolane.goursat import rhs_sweep_numpy
from twolane.kernels import (
    OBSERVER_NAMES,
    TriMesh,
    kernel_residual,
    solve_control_kernels,
    solve_observer_kernels,
)


def _zero_coupling(lc):
    A = lc.A.copy()
    A[2:, :2] = 0.0  # vw
    A[2, 3] = A[3, 2] = 0.0  # vv off-diagonal
    A[0, 1] = A[1, 0] = 0.0  # ww off-diagonal
    return dataclasses.replace(lc, A=A)


def test_trimesh_validation():
    with pytest.raises(ValueError):
        TriMesh(8, 1000.0)
    m = TriMesh(33, 1000.0)
    assert m.h == 1000.0 / 32 and m.nodes[-1] == 1000.0


def test_zero_coupling_gives_zero_kernels(lc):
    z = _zero_coupling(lc)
    mesh = TriMesh(33, lc.seg_length)
    ks = solve_control_kernels(z, mesh)
    for name in ("K11", "K12", "K21", "K22", "L11", "L12", "L21", "L22"):
        assert np.all(getattr(ks, name) == 0.0), name
    assert np.all(ks.theta == 0.0)
    oks = solve_observer_kernels(z, mesh)
    for name in OBSERVER_NAMES:
        assert np.all(oks.values(name) == 0.0), name
    assert np.all(oks.lam == 0.0) and np.all(oks.p_gain == 0.0) and np.all(oks.q_gain == 0.0)
    rep = kernel_residual(ks, z)
    assert rep["l1_total"] == 0.0 and rep["boundary_max"] == 0.0


def test_k11_corner_tabulated_values(lc_tab):
    # high-precision oracle: a^vw_11 = -1/T_s^e - (1/T_s)(v_f* - v_s*)/(gamma p_s*)
    mp.mp.dps = 40
    g = mp.mpf("0.8")
    vs, vf = mp.mpf(32) / mp.mpf("3.6"), mp.mpf(40) / mp.mpf("3.6")
    ps = 40 * (mp.mpf("0.18") / mp.mpf("0.24")) ** g
    a = -1 / mp.mpf(200) - (vf - vs) / (50 * g * ps)
    k11 = -a / (vs + (g * ps - vs))
    ks = solve_control_kernels(lc_tab, TriMesh(33, 1000.0))
    assert ks.K11[0, 0] == pytest.approx(float(k11), rel=1e-12)
    assert float(k11) == pytest.approx(2.66e-4, rel=5e-3)


def test_k11_corner_default_state(lc, ctrl65):
    assert ctrl65.K11[0, 0] == pytest.approx(-lc.vw[0, 0] / (lc.eps1 + lc.mu1), rel=1e-13)


def test_control_diagonal_and_edge_data(lc, ctrl65):
    x = ctrl65.mesh.nodes
    vw = lc.abar_vw(x)
    for i in range(2):
        for j in range(2):
            K = getattr(ctrl65, f"K{i + 1}{j + 1}")
            assert np.max(np.abs(np.diag(K) + vw[i, j] / (lc.mu[i] + lc.eps[j]))) < 1e-15
    eps, mu, k = lc.eps, lc.mu, lc.k
    assert np.allclose(ctrl65.L11[:, 0], eps[0] * k[0] / mu[0] * ctrl65.K11[:, 0], rtol=0, atol=1e-18)
    assert np.allclose(ctrl65.L22[:, 0], eps[1] * k[1] / mu[1] * ctrl65.K22[:, 0], rtol=0, atol=1e-18)
    assert np.all(ctrl65.L21[-1, :-1] == 0.0)  # artificial condition on x = L (corner excluded)
    rep = kernel_residual(ctrl65, lc)
    assert rep["boundary_max"] < 1e-12


def test_observer_diagonal_data(lc, obs65):
    x = obs65.mesh.nodes
    vw = lc.abar_vw(x)
    N11 = obs65.values("N11")
    # opposite sign to the controller diagonal
    assert np.max(np.abs(np.diag(N11) - vw[0, 0] / (lc.eps1 + lc.mu1))) < 1e-15
    M11, N = obs65.values("M11"), obs65.values("N11")
    assert np.allclose(M11[0, :], lc.k[0] * N[0, :], rtol=0, atol=1e-18)
    assert np.all(obs65.values("M21")[:-1, -1] == 0.0)
    assert kernel_residual(obs65, lc)["boundary_max"] < 1e-12


def test_gains_are_images_of_edge_values(lc, ctrl65, obs65):
    rng = np.random.default_rng(7)
    n = ctrl65.mesh.n
    nodes = ctrl65.mesh.nodes
    for i in rng.integers(0, n, size=3):
        theta = lc.mu1 * ctrl65.L21[i, 0] - lc.eps1 * lc.k[0] * ctrl65.K21[i, 0]
        assert ctrl65.theta[i] == pytest.approx(theta, rel=1e-14, abs=1e-30)
        lam = obs65.values("M21")[0, i] - lc.k[1] * obs65.values("N21")[0, i]
        assert obs65.lam[i] == pytest.approx(lam, rel=1e-14, abs=1e-30)
        P, Q = obs65.gains_at(nodes[[i]])
        for a in range(2):
            for b in range(2):
                m = obs65.values(f"M{a + 1}{b + 1}")[i, -1] * lc.eps[b]
                q = obs65.values(f"N{a + 1}{b + 1}")[i, -1] * lc.eps[b]
                assert P[a, b, 0] == pytest.approx(m, rel=1e-12, abs=1e-30)
                assert Q[a, b, 0] == pytest.approx(q, rel=1e-12, abs=1e-30)
                assert obs65.p_gain[a, b, i] == pytest.approx(m, rel=1e-12, abs=1e-30)


def test_residual_grows_with_injected_error(lc, ctrl65):
    base = kernel_residual(ctrl65, lc)["l1_total"]
    k = ctrl65.solution.names.index("K11")
    last = base
    # small changes can partly cancel the O(h) discretisation error, so start at 10%
    for s in (0.10, 0.25, 0.50):
        values = ctrl65.solution.values.copy()
        smooth = ctrl65.solution.smooth.copy()
        values[k] *= 1.0 + s
        smooth[k] *= 1.0 + s
        bad = dataclasses.replace(ctrl65, solution=dataclasses.replace(ctrl65.solution, values=values, smooth=smooth))
        r = kernel_residual(bad, lc)["l1_total"]
        assert r > last
        last = r


def test_sweeps_contract_geometrically(ctrl65, obs65):
    # not monotone sweep by sweep; the observer change even grows while information
    # crosses the domain, then every block of four sweeps shrinks it
    for h in (ctrl65.history, obs65.history):
        h = np.array(h)
        assert h[-1] < 1e-9
        h = h[int(np.argmax(h)) :]
        blocks = [h[i : i + 4].max() for i in range(0, len(h) - 4, 4)]
        assert all(b2 < b1 for b1, b2 in zip(blocks, blocks[1:]))


def test_reflection_and_transpose_routes_agree(lc):
    mesh = TriMesh(33, lc.seg_length)
    a = solve_observer_kernels(lc, mesh, route="reflect", with_residual=True)
    b = solve_observer_kernels(lc, mesh, route="transpose", with_residual=True)
    gap = max(np.max(np.abs(a.values(nm) - b.values(nm))) for nm in OBSERVER_NAMES)
    assert gap <= 2.0 * a.residual["max_total"]
    assert np.allclose(a.p_gain, b.p_gain, rtol=0, atol=2.0 * a.residual["max_total"])


def test_numpy_and_compiled_sweeps_agree(lc):
    mesh = TriMesh(33, lc.seg_length)
    a = solve_control_kernels(lc, mesh)
    b = solve_control_kernels(lc, mesh, rhs=rhs_sweep_numpy)
    assert b.solution.backend == "numpy"
    assert np.max(np.abs(a.solution.values - b.solution.values)) <= 1e-14 * np.max(np.abs(a.solution.values))


def test_cache_round_trip(lc, tmp_path):
    mesh = TriMesh(33, lc.seg_length)
    a = solve_observer_kernels(lc, mesh, cache_dir=str(tmp_path), with_residual=True)
    files = list(tmp_path.glob("observer-reflect-*.npz"))
    assert len(files) == 1
    b = solve_observer_kernels(lc, mesh, cache_dir=str(tmp_path))
    assert b.solution.backend == a.solution.backend and b.sweeps == a.sweeps
    for nm in OBSERVER_NAMES:
        assert np.array_equal(a.values(nm), b.values(nm))
    assert np.array_equal(a.p_gain, b.p_gain)
    assert b.residual["l1_total"] == a.residual["l1_total"]


def test_nonconvergence_reports_sweeps(lc):
    with pytest.raises(KernelConvergenceError) as info:
        solve_control_kernels(lc, TriMesh(33, lc.seg_length), max_iter=3)
    assert info.value.sweeps == 3 and info.value.residual > 0


def test_uncongested_coefficients_rejected(lc):
    bad = dataclasses.replace(lc, mu=-lc.mu)
    with pytest.raises(CongestionError):
        solve_control_kernels(bad, TriMesh(33, lc.seg_length))


def test_rational_speed_ratio_puts_nodes_on_jump_lines(lc_tab):
    # eps2/eps1 = 5/4 exactly: lattice nodes fall on the observer jump lines
    rep = solve_observer_kernels(lc_tab, TriMesh(65, 1000.0), with_residual=True).residual
    assert rep["boundary_max"] < 1e-12
    coarse = solve_observer_kernels(lc_tab, TriMesh(33, 1000.0), with_residual=True).residual
    assert 1.6 <= coarse["l1_total"] / rep["l1_total"] <= 2.4
