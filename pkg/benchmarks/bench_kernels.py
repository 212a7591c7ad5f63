"""Compare the jit-compiled kernels against the pure-numpy fallback.

Run with the default environment to exercise the jit path, or with
``ASYNCFL_NO_NUMBA=1`` to confirm the fallback works; this script times
both implementations directly regardless of the dispatch flag.

Usage: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from asyncfl import kernels


def timeit(fn, *args, repeat=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    n, d, c, q, bs = 20_000, 32, 10, 16, 128
    Xl = rng.standard_normal((n, d))
    yl = rng.standard_normal(n)
    w = rng.standard_normal(d)
    Xs = rng.standard_normal((n, d))
    ys = rng.integers(0, c, size=n)
    W = rng.standard_normal((c, d))
    idx = rng.integers(0, n, size=(q, bs))
    etas = np.full(q, 0.05)

    cases = [
        ("linreg_losses", kernels._linreg_losses_np, (w, Xl, yl)),
        ("linreg_sgd", kernels._linreg_sgd_np, (w, Xl, yl, idx, etas)),
        ("softmax_losses", kernels._softmax_losses_np, (W, Xs, ys)),
        ("softmax_sgd", kernels._softmax_sgd_np, (W, Xs, ys, idx, etas)),
    ]
    jit = {
        "linreg_losses": getattr(kernels, "_linreg_losses_nb", None),
        "linreg_sgd": getattr(kernels, "_linreg_sgd_nb", None),
        "softmax_losses": getattr(kernels, "_softmax_losses_nb", None),
        "softmax_sgd": getattr(kernels, "_softmax_sgd_nb", None),
    }

    print(f"n={n} dim={d} classes={c} q_steps={q} batch={bs}")
    print(f"{'kernel':<16} {'numpy':>12} {'jit':>12} {'speedup':>9}")
    for name, np_fn, args in cases:
        t_np = timeit(np_fn, *args)
        jit_fn = jit[name]
        if jit_fn is None:
            print(f"{name:<16} {t_np * 1e3:>10.3f}ms {'n/a':>12} {'n/a':>9}")
            continue
        t_jit = timeit(jit_fn, *args)
        print(
            f"{name:<16} {t_np * 1e3:>10.3f}ms {t_jit * 1e3:>10.3f}ms "
            f"{t_np / t_jit:>8.2f}x"
        )


if __name__ == "__main__":
    main()
