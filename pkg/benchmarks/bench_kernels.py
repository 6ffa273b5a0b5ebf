"""Compare the compiled and numpy kernel backends on canonical-sized inputs.

Usage: python benchmarks/bench_kernels.py [--trials 100000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from gaslight import kernels
from gaslight.config import build_model, builtin_scenario
from gaslight.dp import backward_induction


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(trials):
    model = build_model(builtin_scenario("canonical"))
    rng = np.random.default_rng(0)
    n = model.n_states
    g = model.obs_grid
    ops = model.stage_operators(0)
    y = rng.uniform(g.lower, g.upper, trials)
    denom = model.obs_density(y)
    phi = np.ascontiguousarray(model.phi.values)
    h = np.ascontiguousarray(model.h_nodes)
    sigma = np.ascontiguousarray(np.tile(model.prior.values, (trials, 1)))
    u_idx = rng.integers(0, len(ops.controls), trials).astype(np.int64)
    alphas = backward_induction(model, None, 3)
    coeffs = np.ascontiguousarray(alphas.coeffs[0])
    tags = np.ascontiguousarray(alphas.tags[0].astype(np.int64))
    rows = np.ascontiguousarray(u_idx * n + rng.integers(0, n, trials))
    uni = rng.uniform(size=trials)

    def run(mod, name):
        if name == "likelihood_matrix":
            return mod.likelihood_matrix(phi, g.lower, g.spacing, g.length, h, y, denom)
        if name == "filter_step":
            lik = mod.likelihood_matrix(phi, g.lower, g.spacing, g.length, h, y, denom)
            return mod.filter_step(sigma, lik, u_idx, ops.kernels)
        if name == "alpha_argmin":
            return mod.alpha_argmin(sigma, coeffs, tags)
        return mod.categorical_sample(ops.cdf, rows, uni)

    return run, coeffs.shape[0]


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    run, n_vectors = cases(args.trials)
    backends = {"python": kernels.load("python")}
    try:
        backends["cython"] = kernels.load("cython")
    except ImportError:
        print("compiled backend unavailable; timing the numpy backend only")
    print(f"trials={args.trials} stage-0 alpha vectors={n_vectors}")
    print(f"{'kernel':<20}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name in ("likelihood_matrix", "filter_step", "alpha_argmin", "categorical_sample"):
        times = {b: best_time(lambda m=m: run(m, name), args.repeat) for b, m in backends.items()}
        if "cython" in times:
            out_py, out_c = run(backends["python"], name), run(backends["cython"], name)
            for a, b in zip(np.atleast_1d(out_py) if not isinstance(out_py, tuple) else out_py,
                            np.atleast_1d(out_c) if not isinstance(out_c, tuple) else out_c):
                assert np.allclose(a, b, rtol=1e-12, atol=0), name
        speed = f"{times['python'] / times['cython']:.1f}x" if "cython" in times else "-"
        print(f"{name:<20}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times.values()) + f"{speed:>10}")


if __name__ == "__main__":
    main()
