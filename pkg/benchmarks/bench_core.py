"""Time the compiled and numpy backends of the two hot tables and check they agree.

Usage: python benchmarks/bench_core.py [--atoms 128 256 512] [--nodes 64] [--repeat 3]
"""

import argparse
import time

import numpy as np

from lpgstar import _core
from lpgstar.measure import linf_distances, uniform_grid


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(N, T, repeat, seed=0):
    mu = uniform_grid(N, masses=np.random.default_rng(seed).uniform(0.5, 1.5, N) / N)
    d = linf_distances(mu.points, mu.points)
    fz = (np.random.default_rng([seed, 1]).standard_normal((N, 1)) * mu.masses[:, None])
    nodes = np.exp(np.linspace(np.log(1e-3), np.log(10.0), T))
    rows = []
    results = {}
    for name in sorted(_core.BACKENDS):
        t_theta, th = _best(lambda: _core.theta_table(d, fz, nodes, 0.5, 1.0, 1.0, backend=name), repeat)
        sq = th ** 2
        t_cone, cone = _best(lambda: _core.cone_table(d, mu.masses, sq, nodes, 1.0, 4.0, backend=name), repeat)
        results[name] = (th, cone)
        rows.append((name, N, T, t_theta, t_cone))
    if len(results) == 2:
        (a, b), (c, e) = results["cython"], results["numpy"]
        err = max(np.max(np.abs(a - c)) / max(np.max(np.abs(c)), 1e-300),
                  np.max(np.abs(b - e)) / max(np.max(np.abs(e)), 1e-300))
    else:
        err = 0.0
    return rows, err


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--atoms", type=int, nargs="+", default=[128, 256, 512])
    ap.add_argument("--nodes", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"default backend: {_core.BACKEND}; available: {sorted(_core.BACKENDS)}")
    print(f"{'backend':8s} {'atoms':>6s} {'nodes':>6s} {'theta_s':>10s} {'cone_s':>10s}")
    for N in args.atoms:
        rows, err = bench(N, args.nodes, args.repeat)
        for name, n_, t_, a, b in rows:
            print(f"{name:8s} {n_:6d} {t_:6d} {a:10.4f} {b:10.4f}")
        if len(rows) == 2:
            speed = sum(r[3] + r[4] for r in rows if r[0] == "numpy") / sum(r[3] + r[4] for r in rows if r[0] == "cython")
            print(f"{'':8s} speedup {speed:.1f}x, max relative difference {err:.2e}")


if __name__ == "__main__":
    main()
