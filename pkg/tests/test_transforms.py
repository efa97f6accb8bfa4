import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from twolane.control import ObserverState, estimates_to_physical
from twolane.model import (
    TrafficField,
    characteristic_to_physical,
    physical_to_characteristic,
)

N = 24
rel = st.floats(-0.4, 0.4, allow_nan=False)


def _field(ss, dev):
    x = np.linspace(0.0, 1000.0, N)
    star = np.array([ss.rho_star_slow, ss.v_star_slow, ss.rho_star_fast, ss.v_star_fast])
    return TrafficField.from_stack(x, star[:, None] * (1.0 + dev))


@settings(max_examples=80, deadline=None)
@given(dev=arrays(np.float64, (4, N), elements=rel))
def test_physical_characteristic_round_trip(ss, lc, dev):
    f = _field(ss, dev)
    back = characteristic_to_physical(physical_to_characteristic(f, ss, lc), ss, lc)
    assert np.allclose(back.stack(), f.stack(), rtol=1e-12, atol=0.0)


@settings(max_examples=80, deadline=None)
@given(dev=arrays(np.float64, (4, N), elements=rel))
def test_estimate_transform_round_trip(ss, lc, dev):
    f = _field(ss, dev)
    est = ObserverState.from_char(physical_to_characteristic(f, ss, lc))
    assert np.allclose(estimates_to_physical(est, ss, lc).stack(), f.stack(), rtol=1e-12, atol=0.0)


def test_steady_field_maps_to_zero(ss, lc):
    x = np.linspace(0.0, 1000.0, 11)
    c = physical_to_characteristic(TrafficField.steady(x, ss), ss, lc)
    assert np.all(c.stack() == 0.0)


def test_riemann_variable_definition(ss, lc):
    x = np.array([0.0, 500.0, 1000.0])
    f = TrafficField(x, ss.rho_star_slow + np.array([1e-3, 0, 0]), ss.v_star_slow + np.array([0, 0.5, 0]),
                     ss.rho_star_fast + np.zeros(3), ss.v_star_fast + np.array([0, 0, -0.25]))
    c = physical_to_characteristic(f, ss, lc)
    assert c.w_slow[0] == pytest.approx(lc.riemann_gain[0] * 1e-3, rel=1e-12)
    assert c.w_slow[1] == pytest.approx(0.5, rel=1e-12)
    assert c.vbar_slow[1] == pytest.approx(0.5 * np.exp(lc.scale[0] * 500.0), rel=1e-15)
    assert c.vbar_fast[2] == pytest.approx(-0.25 * lc.l[1], rel=1e-15)
