"""Compiled loops against the numpy fallbacks.

    python benchmarks/bench_numba.py [--repeat 20]

Times the linear upwind step, the LLF step, the wave-speed scan and a full
control-kernel solve with both backends and checks that they agree.  When
numba is missing (or TWOLANE_DISABLE_NUMBA=1) the "loop" column is plain
Python and only the small sizes are run.
"""

import argparse
import time

import numpy as np

from twolane import _sim_kernels as sk
from twolane._accel import HAVE_NUMBA
from twolane.goursat import rhs_sweep_loop, rhs_sweep_numpy
from twolane.kernels import TriMesh, solve_control_kernels
from twolane.model import ModelParams, TrafficField, compute_steady_state, linearize
from twolane.pde_sim import Grid, NonlinearPlant, source_matrices


def best_of(fn, repeat):
    fn()  # warm-up, includes compilation
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def row(name, loop, vec, agree):
    print(f"{name:<28}{loop * 1e3:>12.3f}{vec * 1e3:>12.3f}{vec / loop:>10.2f}x   {'ok' if agree else 'MISMATCH'}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    p = ModelParams.defaults()
    ss = compute_steady_state(p, 0.18)
    lc = linearize(p, ss)
    sizes = (200, 2000) if HAVE_NUMBA else (200,)
    print(f"backend: {'numba' if HAVE_NUMBA else 'numpy (loops run as plain Python)'}")
    print(f"{'case':<28}{'loop ms':>12}{'numpy ms':>12}{'speed-up':>11}")
    rng = np.random.default_rng(0)
    for n in sizes:
        g = Grid(n, p.seg_length)
        s = rng.normal(size=(4, n))
        coef = source_matrices(lc, g.x)
        a, b = np.empty_like(s), np.empty_like(s)
        call = (s, coef, lc.eps, lc.mu, lc.k, np.array([0.1, -0.1]), 0.1, g.dx)
        tl = best_of(lambda: sk.linear_step_loop(*call, a), args.repeat)
        tv = best_of(lambda: sk.linear_step_numpy(*call, b), args.repeat)
        row(f"linear_step n={n}", tl, tv, np.allclose(a, b, rtol=1e-13, atol=1e-15))

        plant = NonlinearPlant(p, ss, g)
        f = TrafficField.steady(g.x, ss)
        q = plant.from_physical(TrafficField.from_stack(g.x, f.stack() * (1 + 0.1 * np.sin(g.x / 80.0))))
        a, b = np.empty_like(q), np.empty_like(q)
        fa, fb = np.zeros((2, 2)), np.zeros((2, 2))
        u = np.array([0.5, -0.5])
        tl = best_of(lambda: sk.llf_step_loop(q, plant.phys, u, 0.1, g.dx, a, fa), args.repeat)
        tv = best_of(lambda: sk.llf_step_numpy(q, plant.phys, u, 0.1, g.dx, b, fb), args.repeat)
        row(f"llf_step n={n}", tl, tv, np.allclose(a, b, rtol=1e-12, atol=0))

        ws = (q, p.gamma, p.v_max, *ss.pressure_scale)
        tl = best_of(lambda: sk.max_wave_speed_loop(*ws), args.repeat)
        tv = best_of(lambda: sk.max_wave_speed_numpy(*ws), args.repeat)
        row(f"max_wave_speed n={n}", tl, tv, np.isclose(sk.max_wave_speed_loop(*ws), sk.max_wave_speed_numpy(*ws)))

    for n in ((65, 129) if HAVE_NUMBA else (33,)):
        mesh = TriMesh(n, p.seg_length)
        out = {}

        def solve(rhs, key):
            out[key] = solve_control_kernels(lc, mesh, rhs=rhs).solution.values

        tl = best_of(lambda: solve(rhs_sweep_loop, "loop"), max(1, args.repeat // 10))
        tv = best_of(lambda: solve(rhs_sweep_numpy, "numpy"), max(1, args.repeat // 10))
        scale = np.max(np.abs(out["numpy"]))
        row(f"control kernels n={n}", tl, tv, np.max(np.abs(out["loop"] - out["numpy"])) <= 1e-13 * scale)


if __name__ == "__main__":
    main()
