import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twolane.control import (
    ControlLaw,
    FullStatePolicy,
    Observer,
    ObserverPolicy,
    ObserverState,
    VslCommand,
    estimates_to_physical,
    full_state_vsl,
    make_measurement,
    measure_outlet,
    observer_step,
    output_feedback_vsl,
)
from twolane.errors import DomainError
from twolane.model import CharField, TrafficField
from twolane.pde_sim import Grid, LinearPlant, ZeroPolicy

N = 100


@pytest.fixture(scope="module")
def grid(lc):
    return Grid(N, lc.seg_length)


@pytest.fixture(scope="module")
def law(ctrl65, lc, grid):
    return ControlLaw(ctrl65, lc, grid)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_control_law_is_linear(law, seed, a, b):
    rng = np.random.default_rng(seed)
    s1, s2 = rng.normal(size=(2, 4, N))
    lhs = law(a * s1 + b * s2)
    rhs = a * law(s1) + b * law(s2)
    scale = np.abs(law(np.abs(s1))).max() * (abs(a) + abs(b) + 1.0)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * scale)


def test_zero_state_gives_zero_command(law, lc, ss, ctrl65, grid):
    assert np.all(law(np.zeros((4, N))) == 0.0)
    cmd = full_state_vsl(TrafficField.steady(grid.x, ss), ss, lc, ctrl65, law=law)
    assert cmd.as_array() == pytest.approx([0.0, 0.0], abs=1e-18)


def test_weights_match_fine_quadrature(law, lc, ctrl65):
    # a constant unit state picks out the integral of each kernel edge; the edge
    # jump inside one cell limits agreement to about dx / (8 L)
    m = 200_000
    xi = (np.arange(m) + 0.5) * lc.seg_length / m
    for i in range(2):
        for r, name in enumerate(("K{}1", "K{}2", "L{}1", "L{}2")):
            fine = np.sum(ctrl65.edge(name.format(i + 1), xi)) * lc.seg_length / m / lc.l[i]
            assert law.weights[i, r].sum() == pytest.approx(fine, rel=1e-4, abs=1e-14)


def test_law_rejects_mismatched_grid(ctrl65, lc):
    with pytest.raises(DomainError):
        ControlLaw(ctrl65, lc, Grid(N, 2.0 * lc.seg_length))


def test_full_state_and_output_feedback_share_the_functional(law, lc, ss, ctrl65, grid):
    rng = np.random.default_rng(11)
    s = rng.normal(scale=0.1, size=(4, N))
    a = full_state_vsl(CharField.from_stack(grid.x, s), ss, lc, ctrl65, law=law)
    b = output_feedback_vsl(ObserverState.from_stack(grid.x, s), ss, lc, ctrl65, law=law)
    assert np.array_equal(a.as_array(), b.as_array())
    # default law construction gives the same command
    c = full_state_vsl(CharField.from_stack(grid.x, s), ss, lc, ctrl65)
    assert np.allclose(c.as_array(), a.as_array(), rtol=1e-13)


def test_vsl_command_limits(ss):
    cmd = VslCommand(1.0, -2.0)
    assert cmd.speed_limits(ss) == (ss.v_star_slow + 1.0, ss.v_star_fast - 2.0)
    with pytest.raises(DomainError):
        VslCommand(float("inf"), 0.0)


def test_measurement_adds_held_input(lc, ss, grid):
    m = make_measurement([0.01, -0.02], [0.5, 0.25], lc)
    assert m.Y == pytest.approx(lc.riemann_gain * np.array([0.01, -0.02]) + [0.5, 0.25], rel=1e-15)
    f = TrafficField.steady(grid.x, ss)
    f.rho_fast[-1] += 0.003
    m = measure_outlet(f, ss, VslCommand(0.0, 1.0), lc)
    assert m.y == pytest.approx([0.0, 0.003], abs=1e-15)
    assert m.yy_fast == pytest.approx(lc.riemann_gain[1] * 0.003 + 1.0, rel=1e-14)


def test_observer_step_rejects_large_dt(lc, obs65, grid):
    est = ObserverState.zeros(grid.x)
    meas = make_measurement([0.0, 0.0], [0.0, 0.0], lc)
    dt_max = grid.dx / lc.max_speed()
    out = observer_step(est, meas, VslCommand(0.0, 0.0), lc, obs65, 0.9 * dt_max)
    assert np.all(out.stack() == 0.0)
    with pytest.raises(DomainError):
        observer_step(est, meas, VslCommand(0.0, 0.0), lc, obs65, 1.1 * dt_max)


def test_observer_without_innovation_copies_the_plant(lc, obs65, grid):
    rng = np.random.default_rng(5)
    s = rng.normal(scale=0.1, size=(4, N))
    obs = Observer(lc, obs65, grid)
    obs.reset(s)
    u = np.array([0.2, -0.1])
    dt = 0.5 * grid.dx / lc.max_speed()
    want = LinearPlant(lc, grid).step(s, u, dt)
    got = obs.step(s[:2, -1], u, dt)
    assert np.array_equal(got, want)


def test_estimation_error_does_not_depend_on_the_state(lc, obs65, grid):
    rng = np.random.default_rng(9)
    plant = LinearPlant(lc, grid)
    e0 = rng.normal(scale=0.05, size=(4, N))
    s = rng.normal(scale=0.2, size=(4, N))
    z = np.zeros((4, N))
    oa, ob = Observer(lc, obs65, grid), Observer(lc, obs65, grid)
    oa.reset(s + e0)
    ob.reset(e0)
    dt = 0.9 * grid.dx / lc.max_speed()
    for n in range(200):
        u = np.array([np.sin(0.01 * n), 0.5])
        oa.step(s[:2, -1], u, dt)
        ob.step(z[:2, -1], u, dt)
        s = plant.step(s, u, dt)
        z = plant.step(z, u, dt)
    assert np.allclose(oa.state - s, ob.state - z, rtol=0, atol=1e-12)


def test_estimates_map_back_to_physical(lc, ss, grid):
    f = estimates_to_physical(ObserverState.zeros(grid.x), ss, lc)
    assert np.allclose(f.rho_slow, ss.rho_star_slow) and np.allclose(f.v_fast, ss.v_star_fast)


def test_saturation_clips_and_counts(law, lc, grid):
    plant = LinearPlant(lc, grid)
    pol = FullStatePolicy(law, lc, bound=1e-3)
    s = np.full((4, N), 1.0)
    pol.reset(plant, s)
    u = pol.command(0.0, s)
    assert np.all(np.abs(u) <= 1e-3) and pol.saturated_steps == 1
    pol.command(0.0, np.zeros((4, N)))
    assert pol.saturated_steps == 1
    with pytest.raises(DomainError):
        FullStatePolicy(law, lc, bound=0.0)


def test_observer_policy_arguments(law, lc, obs65, grid):
    obs = Observer(lc, obs65, grid)
    with pytest.raises(DomainError):
        ObserverPolicy(obs)
    with pytest.raises(DomainError):
        ObserverPolicy(obs, law=law, open_loop=ZeroPolicy())
    with pytest.raises(DomainError):
        ObserverPolicy(obs, law=law, init="random")
    with pytest.raises(DomainError):
        ObserverPolicy(obs, law=law, noise=-1.0)
    pol = ObserverPolicy(obs, law=law)
    with pytest.raises(DomainError):
        pol.reset(LinearPlant(lc, Grid(N + 1, lc.seg_length)), np.zeros((4, N + 1)))
