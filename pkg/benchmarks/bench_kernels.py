"""Compare the compiled and pure-Python kernels on SCM-sized inputs.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from brinkman_rb._kernels import _pykernels

try:
    from brinkman_rb._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def scm_like_lp(n_var, n_con, rng):
    """Scaled SCM program: box [0, 1], nearly parallel rows through a feasible point."""
    theta = 10.0 ** rng.uniform(-1, 2, n_var)
    G = theta * (1 + 0.1 * rng.standard_normal((n_con, n_var)))
    G /= np.abs(G).max(axis=1, keepdims=True)
    y0 = rng.random(n_var)
    h = G @ y0 - 0.01 * rng.random(n_con)
    c = theta / theta.max()
    return c, G, h


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the fallback only")

    print(f"{'kernel':<28}" + "".join(f"{b:>12}" for b in backends) + f"{'speed-up':>10}")
    cases = [("simplex n=10 m=100", 10, 100), ("simplex n=82 m=200", 82, 200),
             ("simplex n=73 m=200", 73, 200)]
    for name, n, m in cases:
        lps = [scm_like_lp(n, m, rng) for _ in range(3)]
        row = {}
        for b, mod in backends.items():
            def run():
                for c, G, h in lps:
                    mod.bounded_simplex(c, G, h, np.zeros(n), np.ones(n), 1e-10, 20000)
            row[b] = best_time(run, args.repeat) / len(lps)
        _print(name, row)
    idx = np.arange(1, 200001)
    row = {b: best_time(lambda mod=mod: [mod.radical_inverse(idx, p) for p in (2, 3, 5, 7)],
                        args.repeat) for b, mod in backends.items()}
    _print("radical inverse 4 x 2e5", row)


def _print(name, row):
    line = f"{name:<28}" + "".join(f"{1e3 * t:>10.2f}ms" for t in row.values())
    if "cython" in row:
        line += f"{row['python'] / row['cython']:>9.1f}x"
    print(line)


if __name__ == "__main__":
    main()
