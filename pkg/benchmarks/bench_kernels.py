"""Time the compiled mixing kernel against the scipy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from dpnet import graph, kernels


def cases():
    for n, radius in ((100, 0.3), (969, 0.1), (4000, 0.05)):
        top = graph.random_geometric(n, radius, seed=0)
        top = graph.Topology.from_edges(n, np.vstack([top.edges, np.c_[np.arange(n - 1), np.arange(1, n)]]))
        yield f"geometric n={n}", graph.mh_weights(top)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--replicates", type=int, nargs="+", default=[1, 200])
    args = p.parse_args(argv)
    if "cython" not in kernels.BACKENDS:
        print("compiled kernel not built; only the fallback is available")
    print(f"{'case':<22}{'R':>5}{'nnz':>9}" + "".join(f"{b + ' ms':>13}" for b in kernels.BACKENDS) + f"{'speedup':>10}")
    rng = np.random.default_rng(0)
    for name, A in cases():
        for R in args.replicates:
            prev, x = rng.standard_normal((A.n, R)), rng.standard_normal((A.n, R))
            out = np.empty_like(prev)
            times = {}
            for b in kernels.BACKENDS:
                fn = lambda: kernels.mix(A, prev, 0.9, 0.05, 0.1, x, out=out, backend=b)  # noqa: E731
                fn()
                times[b] = min(timeit.repeat(fn, number=5, repeat=args.repeat)) / 5 * 1e3
            ref = kernels.mix(A, prev, 0.9, 0.05, 0.1, x, backend="python")
            for b in kernels.BACKENDS:
                assert np.array_equal(kernels.mix(A, prev, 0.9, 0.05, 0.1, x, backend=b), ref)
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:<22}{R:>5}{A.weights.nnz:>9}" + "".join(f"{times[b]:>13.3f}" for b in kernels.BACKENDS)
                  + f"{speed:>9.2f}x")


if __name__ == "__main__":
    main()
