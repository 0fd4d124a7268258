"""Time the compiled coordinate-descent kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--sizes 50 200 500] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from hdcal import _cd_py

try:
    from hdcal import _cd
except ImportError:
    _cd = None


def make_problem(q, n=200, rho=0.6, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, q)) + rho * rng.standard_normal((n, 1))
    y = x[:, :5] @ np.array([1.0, -0.8, 1.5, 0.6, -0.9]) + rng.standard_normal(n)
    x -= x.mean(axis=0)
    y -= y.mean()
    G = np.ascontiguousarray(x.T @ x / n)
    c = x.T @ y / n
    lams = np.geomspace(np.abs(c).max(), 1e-3 * np.abs(c).max(), 50)
    return G, c, lams


def bench(kernels, G, c, lams, repeat):
    single = min(timeit.repeat(lambda: kernels.cd_gram(G, c, float(lams[30]), np.zeros(len(c))),
                               number=1, repeat=repeat))
    path = min(timeit.repeat(lambda: kernels.cd_gram_path(G, c, lams), number=1, repeat=repeat))
    return single, path


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 200, 500])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = [("python", _cd_py)] + ([("cython", _cd)] if _cd is not None else [])
    print(f"{'q':>5} {'backend':>8} {'single (ms)':>12} {'path x50 (ms)':>14} {'speed-up':>9}")
    for q in args.sizes:
        G, c, lams = make_problem(q)
        times = {name: bench(k, G, c, lams, args.repeat) for name, k in backends}
        base = times["python"][1]
        for name, (s, p) in times.items():
            print(f"{q:>5} {name:>8} {1e3 * s:>12.2f} {1e3 * p:>14.2f} {base / p:>8.1f}x")
    if _cd is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")


if __name__ == "__main__":
    main()
