"""Build every component a configuration asks for and run it."""

from __future__ import annotations

import contextlib
import warnings

import numpy as np

from .. import __version__
from ..control import ControlLaw, FluxOpenLoopPolicy, FullStatePolicy, Observer, ObserverPolicy
from ..errors import TwoLaneError
from ..kernels import TriMesh, solve_control_kernels, solve_observer_kernels
from ..model import CongestionWarning, compute_steady_state, linearize, physical_to_characteristic
from ..pde_sim import Grid, LinearPlant, NonlinearPlant, SimConfig, run_closed_loop
from .metrics import compute_metrics
from .scenarios import make_initial_condition


@contextlib.contextmanager
def stage(name):
    """Tag package errors raised inside the block with the pipeline stage."""
    try:
        yield
    except TwoLaneError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        raise


def steady_and_linear(cfg):
    with stage("steady_state"), warnings.catch_warnings():
        warnings.simplefilter("ignore", CongestionWarning)
        ss = compute_steady_state(
            cfg.model,
            cfg.rho_star_slow,
            mode=cfg.steady_mode,
            pressure_norm=cfg.pressure_norm,
            lane_max_rule=cfg.lane_max_rule,
            given=cfg.given,
        )
    with stage("linearize"):
        lc = linearize(cfg.model, ss)
    return ss, lc


def build_kernels(cfg, lc, which=("control", "observer")):
    mesh = TriMesh(cfg.kernel_n, cfg.model.seg_length)
    out = {}
    with stage("kernels"):
        if "control" in which:
            out["control"] = solve_control_kernels(
                lc, mesh, tol=cfg.kernel_tol, max_iter=cfg.kernel_max_iter, cache_dir=cfg.kernel_cache
            )
        if "observer" in which:
            out["observer"] = solve_observer_kernels(
                lc, mesh, tol=cfg.kernel_tol, max_iter=cfg.kernel_max_iter, cache_dir=cfg.kernel_cache
            )
    return out


_NEEDS = {
    "open_loop": (),
    "full_state": ("control",),
    "observer": ("observer",),
    "output_feedback": ("control", "observer"),
}


def run_scenario(cfg, kernels=None):
    """Run one configuration; returns ``(Trace, Metrics)``.

    ``kernels`` may hold pre-solved ``{"control": KernelSet, "observer":
    ObserverKernelSet}`` for the same coefficients; missing ones are solved.
    """
    ss, lc = steady_and_linear(cfg)
    grid = Grid(cfg.n_cells, cfg.model.seg_length)
    with stage("initial_condition"):
        f0 = make_initial_condition(cfg, ss, grid.x)
    if cfg.plant == "linearized":
        plant = LinearPlant(lc, grid, ss)
        init = physical_to_characteristic(f0, ss, lc).stack()
        scheme = "upwind"
    else:
        plant = NonlinearPlant(cfg.model, ss, grid)
        init = plant.from_physical(f0)
        scheme = "lax_friedrichs"

    kernels = dict(kernels or {})
    missing = tuple(k for k in _NEEDS[cfg.mode] if k not in kernels)
    if missing:
        kernels.update(build_kernels(cfg, lc, missing))

    with stage("policy"):
        if cfg.mode == "open_loop":
            policy = FluxOpenLoopPolicy(lc)
        elif cfg.mode == "full_state":
            policy = FullStatePolicy(ControlLaw(kernels["control"], lc, grid), lc, bound=cfg.saturation)
        else:
            obs = Observer(lc, kernels["observer"], grid)
            opts = dict(init=cfg.observer_init, bound=cfg.saturation, noise=cfg.noise, seed=cfg.seed)
            if cfg.mode == "observer":
                policy = ObserverPolicy(obs, open_loop=FluxOpenLoopPolicy(lc), **opts)
            else:
                policy = ObserverPolicy(obs, law=ControlLaw(kernels["control"], lc, grid), **opts)

    sim = SimConfig(grid=grid, cfl=cfg.cfl, t_end=cfg.t_end, record_every=cfg.record_every, scheme=scheme)
    with stage("simulate"):
        trace = run_closed_loop(init, policy, sim, plant)
    trace.metadata.update(
        config_hash=cfg.digest(),
        scenario=cfg.scenario.name,
        mode=cfg.mode,
        version=__version__,
        numpy=np.__version__,
        kernel_hashes={k: v.coef_hash for k, v in kernels.items()},
    )
    with stage("metrics"):
        metrics = compute_metrics(trace, plant, ss, lc, cfg.convergence_threshold)
    metrics.extra["steady_state"] = {
        "rho_star_slow": ss.rho_star_slow,
        "rho_star_fast": ss.rho_star_fast,
        "v_star_slow": ss.v_star_slow,
        "v_star_fast": ss.v_star_fast,
        "status": ss.status,
    }
    return trace, metrics
