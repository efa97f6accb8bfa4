"""Initial conditions for the two test scenarios.

Both perturb the steady state by a relative profile ``delta(x)`` per lane,
``rho = rho* (1 + delta)`` and ``v = v* (1 - delta)``, so denser traffic is
also slower.
"""

import numpy as np

from ..errors import ConfigError
from ..model import TrafficField


def _front(x, center, width):
    # 0 upstream, 1 downstream; about `width` between the 10% and 90% levels
    return 0.5 * (1.0 + np.tanh((x - center) / (0.5 * width)))


def relative_profiles(cfg, x):
    """``(delta_slow, delta_fast)`` for the configured scenario on cells ``x``."""
    sc = cfg.scenario
    L = cfg.model.seg_length
    x = np.asarray(x, dtype=float)
    if sc.name == "stop_and_go":
        s = sc.amplitude * np.sin(2.0 * np.pi * sc.wavenumber * x / L)
        return s, s.copy()
    # bottleneck: slow-lane front, fast-lane inlet pulse
    w = sc.shock_width * L
    h = _front(x, sc.shock_position * L, w)
    ds = -sc.upstream_drop + (sc.upstream_drop + sc.downstream_rise) * h
    df = sc.inlet_pulse * (1.0 - _front(x, w, w))
    return ds, df


def make_initial_condition(cfg, ss, x):
    """Physical initial field on cell centres ``x``; rejects unphysical states."""
    ds, df = relative_profiles(cfg, x)
    rho_s = ss.rho_star_slow * (1.0 + ds)
    rho_f = ss.rho_star_fast * (1.0 + df)
    v_s = ss.v_star_slow * (1.0 - ds)
    v_f = ss.v_star_fast * (1.0 - df)
    for name, rho, top in (("slow", rho_s, ss.rho_max_slow), ("fast", rho_f, ss.rho_max_fast)):
        if np.any(rho <= 0.0) or np.any(rho >= top):
            raise ConfigError(
                f"initial {name}-lane density leaves (0, {top:.6g}) veh/m; reduce the scenario amplitudes",
                field="scenario",
            )
    if np.any(v_s <= 0.0) or np.any(v_f <= 0.0):
        raise ConfigError("initial speeds must stay positive; reduce the scenario amplitudes", field="scenario")
    return TrafficField(np.asarray(x, dtype=float), rho_s, v_s, rho_f, v_f)
