"""Compare the numba kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--n 16 32 64] [--repeat 5]

Reports the best-of-``repeat`` wall time per call (after one warm-up call,
which also triggers numba compilation) and the max deviation between the
two paths.
"""

import argparse
import time

import numpy as np

from consrom import kernels
from consrom.fem import assemble_operators
from consrom.mesh import structured_unit_square
from consrom.tree import build_tree, cell_adjacency


def best_of(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(n, n_rhs, gram):
    mesh = structured_unit_square(n)
    ops = assemble_operators(mesh)
    tree = build_tree(ops)
    T = tree.T
    ro, co = tree._fwd
    b = np.random.default_rng(0).standard_normal((T.shape[0], n_rhs))
    tri = (T.indptr.astype(np.int64), T.indices.astype(np.int64), T.data, ro, co)
    levels = kernels.triangular_levels(*tri)[2]
    adj = cell_adjacency(mesh)
    a = np.random.default_rng(1).standard_normal((gram, gram))
    g = a @ a.T
    yield (f"lower_solve n={n} ({T.shape[0]} cells, {n_rhs} rhs)",
           lambda: kernels.lower_solve_numba(*tri, b)[2],
           lambda: kernels.lower_solve_numpy(*tri, b, levels)[2])
    yield (f"bfs n={n}",
           lambda: kernels.bfs_numba(*adj, 0)[0].astype(float),
           lambda: kernels.bfs_numpy(*adj, 0)[0].astype(float))
    yield (f"jacobi {gram}x{gram}",
           lambda: np.sort(kernels.jacobi_numba(g.copy())[0]),
           lambda: np.sort(kernels.jacobi_numpy(g.copy())[0]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--n", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--rhs", type=int, default=100)
    ap.add_argument("--gram", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':44s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s} {'max diff':>9s}")
    done = set()
    for n in args.n:
        for name, fast, slow in cases(n, args.rhs, args.gram):
            if name in done:
                continue
            done.add(name)
            tf, xf = best_of(fast, args.repeat)
            ts, xs = best_of(slow, args.repeat)
            diff = float(np.max(np.abs(xf - xs)))
            print(f"{name:44s} {1e3 * tf:11.3f} {1e3 * ts:11.3f} {ts / tf:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
