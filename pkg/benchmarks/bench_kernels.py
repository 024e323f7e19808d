"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--size N] [--repeat R]
"""
import argparse
import timeit

import numpy as np

from baeprior import kernels


def cases(size, rng):
    x = rng.uniform(size=size)
    lam = rng.uniform(1e-3, 1 - 1e-3, size=size)
    lam[::7] = 0.5 + rng.uniform(-5e-5, 5e-5, size=lam[::7].size)
    u = rng.uniform(1e-6, 1 - 1e-6, size=size)
    grad = rng.standard_normal(size)
    noise = rng.standard_normal(size)

    def state():
        return np.ones(size) + rng.uniform(size=size), 0.1 * grad.copy(), np.ones(size)

    yield "cb_logpdf_and_grad", lambda k: k.cb_logpdf_and_grad(x, lam)
    yield "cb_icdf_and_grad", lambda k: k.cb_icdf_and_grad(lam, u)
    yield "cb_log_norm_const", lambda k: k.cb_log_norm_const(lam)
    tau, g, vhat = state()
    yield "sghmc_adapt", lambda k: k.sghmc_adapt(tau, g, vhat, grad)
    w, v = np.zeros(size), np.zeros(size)
    yield "sghmc_update", lambda k: k.sghmc_update(w, v, vhat, grad, noise, 0.003, 0.05)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not built; timing the fallback only")
    rng = np.random.default_rng(0)
    print(f"size={args.size} repeat={args.repeat} (best of, milliseconds)")
    print(f"{'kernel':<22}" + "".join(f"{name:>10}" for name in backends) + f"{'speedup':>10}")
    for name, fn in cases(args.size, rng):
        times = {}
        for bname, mod in backends.items():
            times[bname] = 1e3 * min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<22}" + "".join(f"{times[b]:>10.2f}" for b in backends) + f"{speed:>10.1f}x")


if __name__ == "__main__":
    main()
