"""Wall-clock comparison of the compiled and pure-Python Euler kernels.

    python benchmarks/bench_kernels.py [--steps 20000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from netlineq import kernels
from netlineq.dynamics import AlgorithmSpec, simulate
from netlineq.graph import Digraph, positive_null_eigenvector, ring
from netlineq.linproblem import generate_problem


def unbalanced_ring(n):
    w = np.zeros((n, n))
    for i in range(n):
        w[i, (i + 1) % n] = 1.0 + i / n
    w[0, n // 2] = 2.0
    return Digraph(w)


def cases(n, m):
    p = generate_problem(1, n, m, shift=1.0)
    g = ring(n, 10.0)
    gu = unbalanced_ring(n)
    return [
        ("central", p, g, None),
        ("gdac", p, g, None),
        ("unbalanced_fixed_v", p, gu, positive_null_eigenvector(gu)),
        ("dist", p, gu, None),
    ]


def best_of(repeat, fn):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--sizes", default="5x2,10x5,20x5")
    args = ap.parse_args()

    backends = sorted(kernels.BACKENDS)
    print(f"backends: {', '.join(backends)}; {args.steps} steps, best of {args.repeat}")
    print(f"{'size':>6} {'kind':>20} " + " ".join(f"{b:>10}" for b in backends) + "   speedup")
    for size in args.sizes.split(","):
        n, m = map(int, size.split("x"))
        for kind, p, g, vbar in cases(n, m):
            spec = AlgorithmSpec(kind)
            times = {
                b: best_of(args.repeat, lambda b=b: simulate(
                    p, g, spec, steps=args.steps, record_every=100, vbar=vbar, backend=b))
                for b in backends
            }
            speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            cells = " ".join(f"{times[b]:>9.3f}s" for b in backends)
            print(f"{size:>6} {kind:>20} {cells}   {speed:6.1f}x")


if __name__ == "__main__":
    main()
