"""Command line interface: ``python -m twolane <command> ...``.

Every command prints JSON on stdout.  Failures print a JSON object with
``error``, ``type`` and, where known, ``stage``/``field``/``line`` on stderr
and exit with a nonzero status (2 for configuration problems, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..errors import ConfigError, TwoLaneError
from ..kernels import TriMesh, kernel_residual, solve_control_kernels, solve_observer_kernels
from ..model import fundamental_diagram_samples
from .config import MODES, PLANTS, SCENARIOS, ScenarioConfig, ScenarioSpec, load_config
from .io import write_trace
from .run import stage, steady_and_linear


def _base_config(args):
    return load_config(args.config) if getattr(args, "config", None) else ScenarioConfig()


def _apply_overrides(cfg, args):
    changes = {}
    if getattr(args, "scenario", None):
        changes["scenario"] = ScenarioSpec(**{**cfg.scenario.__dict__, "name": args.scenario})
    for opt, key in (("mode", "mode"), ("plant", "plant"), ("nx", "n_cells"), ("cfl", "cfl"), ("t_end", "t_end")):
        v = getattr(args, opt, None)
        if v is not None:
            changes[key] = v
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    if getattr(args, "cache_dir", None):
        changes["kernel_cache"] = args.cache_dir
    if not changes:
        return cfg
    try:
        return cfg.replace(**changes)
    except ConfigError as exc:
        raise ConfigError(f"command-line override: {exc.field}: {exc}", field=exc.field) from None


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=_jsonable)
    sys.stdout.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def cmd_steady(args):
    from ..model import equilibrium_residuals

    cfg = _base_config(args)
    ss, lc = steady_and_linear(cfg)
    _emit({"steady_state": ss.as_dict(), "residuals": list(equilibrium_residuals(cfg.model, ss))})


def cmd_linearize(args):
    cfg = _base_config(args)
    ss, lc = steady_and_linear(cfg)
    t_f, t_o, t_out = lc.finite_times()
    _emit(
        {
            "coefficients": lc.as_dict(),
            "speed_ordering": "-mu1 < -mu2 < 0 < eps1 < eps2",
            "ordering_ok": bool(lc.ordering_ok),
            "t_f_s": t_f,
            "t_o_s": t_o,
            "t_out_s": t_out,
        }
    )


def cmd_kernels(args):
    cfg = _apply_overrides(_base_config(args), args)
    ss, lc = steady_and_linear(cfg)
    n = args.n or cfg.kernel_n
    mesh = TriMesh(n, cfg.model.seg_length)
    out = {}
    with stage("kernels"):
        t0 = time.perf_counter()
        ks = solve_control_kernels(lc, mesh, tol=cfg.kernel_tol, max_iter=cfg.kernel_max_iter, cache_dir=cfg.kernel_cache)
        t1 = time.perf_counter()
        oks = solve_observer_kernels(lc, mesh, tol=cfg.kernel_tol, max_iter=cfg.kernel_max_iter, cache_dir=cfg.kernel_cache)
        t2 = time.perf_counter()
    for label, k, secs in (("control", ks, t1 - t0), ("observer", oks, t2 - t1)):
        rep = k.residual or kernel_residual(k, lc)
        out[label] = {
            "n": n,
            "sweeps": k.sweeps,
            "seconds": secs,
            "coef_hash": k.coef_hash,
            "boundary_violation_max": rep["boundary_max"],
            "interior_residual_l1": rep["l1_total"],
            "interior_residual_l2": rep["l2_total"],
            "interior_residual_max": rep["max_total"],
            "per_component": rep["pde"],
        }
    out["cache_dir"] = cfg.kernel_cache
    _emit(out)


def _run_one(cfg):
    from .run import run_scenario

    trace, metrics = run_scenario(cfg)
    paths = []
    if cfg.out_dir:
        ss, lc = steady_and_linear(cfg)
        with stage("write"):
            paths = write_trace(trace, metrics, cfg.out_dir, cfg=cfg, ss=ss, lc=lc)
    return {"metrics": metrics.summary(), "files": paths, "config_hash": cfg.digest()}


def cmd_simulate(args):
    cfg = _apply_overrides(_base_config(args), args)
    _emit(_run_one(cfg))


def cmd_batch(args):
    cfgs = [load_config(p) for p in args.configs]
    outs = [c.out_dir for c in cfgs]
    if any(o is None for o in outs):
        raise ConfigError("every batch config needs [output] dir", field="output.dir")
    real = [os.path.realpath(o) for o in outs]
    if len(set(real)) != len(real):
        raise ConfigError("batch output directories must be distinct", field="output.dir")
    if args.jobs <= 1:
        results = [_run_one(c) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, cfgs))
    _emit({"runs": dict(zip(args.configs, results))})


def cmd_fundamental_diagram(args):
    cfg = _base_config(args)
    ss, lc = steady_and_linear(cfg)
    curves = fundamental_diagram_samples(cfg.model, ss, args.points)
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for name, c in curves.items():
        p = os.path.join(args.out, f"fd_{name}.csv")
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("rho_veh_per_m,v_mps,q_veh_per_s\n")
            for r, v, q in zip(c["rho"], c["v"], c["q"]):
                fh.write(f"{float(r)!r},{float(v)!r},{float(q)!r}\n")
        paths.append(p)
    _emit({"files": paths, "rho_max": {"slow": ss.rho_max_slow, "fast": ss.rho_max_fast}})


def build_parser():
    p = argparse.ArgumentParser(prog="twolane", description="Two-lane traffic boundary control toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="INI config (or resolved .json); Reference defaults when omitted")
        return sp

    with_config(sub.add_parser("steady", help="steady state and equilibrium residuals")).set_defaults(func=cmd_steady)
    with_config(sub.add_parser("linearize", help="linear coefficients and speed ordering")).set_defaults(
        func=cmd_linearize
    )
    sk = with_config(sub.add_parser("kernels", help="solve and cache kernels, print the residual report"))
    sk.add_argument("--n", type=int, help="mesh nodes per edge (default from config)")
    sk.add_argument("--cache-dir", help="kernel cache directory")
    sk.set_defaults(func=cmd_kernels)

    ss = with_config(sub.add_parser("simulate", help="run one scenario"))
    ss.add_argument("--scenario", choices=SCENARIOS)
    ss.add_argument("--mode", choices=MODES)
    ss.add_argument("--plant", choices=PLANTS)
    ss.add_argument("--nx", type=int, help="number of cells")
    ss.add_argument("--cfl", type=float)
    ss.add_argument("--t-end", type=float, dest="t_end", help="simulated time (s)")
    ss.add_argument("--out", help="output directory for CSV/JSON files")
    ss.add_argument("--seed", type=int, help="seed of the optional measurement noise")
    ss.add_argument("--cache-dir", help="kernel cache directory")
    ss.set_defaults(func=cmd_simulate)

    sb = sub.add_parser("batch", help="run several configs, one process per config")
    sb.add_argument("configs", nargs="+")
    sb.add_argument("--jobs", type=int, default=1)
    sb.set_defaults(func=cmd_batch)

    sf = with_config(sub.add_parser("fundamental-diagram", help="write equilibrium speed/flux curves"))
    sf.add_argument("--out", required=True)
    sf.add_argument("--points", type=int, default=201)
    sf.set_defaults(func=cmd_fundamental_diagram)
    return p


def _error_payload(exc):
    d = {"error": str(exc), "type": type(exc).__name__}
    for attr in ("stage", "field", "line", "time", "cell", "lane", "sweeps", "residual", "path"):
        v = getattr(exc, attr, None)
        if v is not None:
            d[attr] = v
    return d


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        json.dump(_error_payload(exc), sys.stderr, default=_jsonable)
        sys.stderr.write("\n")
        return 2
    except (TwoLaneError, ValueError, OSError) as exc:
        json.dump(_error_payload(exc), sys.stderr, default=_jsonable)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
