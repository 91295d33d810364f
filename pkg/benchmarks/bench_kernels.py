"""Compare the compiled and numpy sampling kernels.

    python3 benchmarks/bench_kernels.py [--draws 200000] [--repeat 3]

Times the rejection totals (unrestricted partitions, n = 30), the
smallest-gap scan (n = 10^4) and a Poisson-heavy draw matrix (set
partitions), and checks that both backends return identical arrays.
"""
import argparse
import time

import numpy as np

from tiltcomb.ensemble import set_partitions, solve_tilt, unrestricted_partitions
from tiltcomb.kernels import backends
from tiltcomb.sampling import build_tables


def _time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(draws):
    n = 30
    ens = unrestricted_partitions(n)
    tab = build_tables(ens, solve_tilt(ens, n), n)
    d = np.arange(draws, dtype=np.int64)
    yield "weighted_totals n=30", lambda k: k.weighted_totals(1, d, *tab.args, n)
    n = 10_000
    big = unrestricted_partitions(n)
    gtab = build_tables(big, solve_tilt(big, n), n)
    yield "smallest_gaps n=1e4", lambda k: k.smallest_gaps(1, d, *gtab.args, n + 1)
    sp = set_partitions(200)
    stab = build_tables(sp, solve_tilt(sp, 200), 200)
    few = d[: max(draws // 20, 1)]
    yield "draw_matrix set partitions n=200", lambda k: k.draw_matrix(1, few, *stab.args)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--draws", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    impls = backends()
    print(f"backends: {', '.join(impls)}")
    print(f"{'kernel':36s} " + " ".join(f"{name:>10s}" for name in impls) + "   speedup  identical")
    for label, fn in cases(args.draws):
        times = {}
        outs = {}
        for name, mod in impls.items():
            times[name], outs[name] = _time(lambda: fn(mod), args.repeat)
        same = all(np.array_equal(outs["python"], o) for o in outs.values())
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:36s} " + " ".join(f"{times[k]:9.3f}s" for k in impls) + f"   {speed:6.1f}x  {same}")


if __name__ == "__main__":
    main()
