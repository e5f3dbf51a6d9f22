"""Compare the numba and pure-numpy fit kernels.

    python benchmarks/bench_fit.py [--p 500 1000 2000] [--ratio 1.0] [--repeats 3]

Prints one CSV row per (backend, p): total fit time, the fixed one-level
cost and the pair-maintenance time of the remaining levels. Comment lines
give the growth of the maintenance time between successive p, both in total
and per merge.
"""

import argparse

from treelets import kernels
from treelets.perf import pair_maintenance_time, random_covariance


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, nargs="+", default=[500, 1000, 2000])
    ap.add_argument("--ratio", type=float, default=1.0, help="L / (p - 1)")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    backends = ["numpy"] + (["numba"] if kernels.fit_kernel_numba is not None else [])
    print("backend,p,L,total_s,fixed_s,maintenance_s")
    prev = {}
    for p in args.p:
        S = random_covariance(p)
        L = max(1, int(round(args.ratio * (p - 1))))
        for b in backends:
            maint, full, base = pair_maintenance_time(S, L, b, args.repeats)
            print(f"{b},{p},{L},{full:.4f},{base:.4f},{maint:.4f}")
            if b in prev:
                p0, L0, m0 = prev[b]
                per = (maint / max(L - 1, 1)) / (m0 / max(L0 - 1, 1))
                print(f"# {b}: maintenance ratio p={p} vs p={p0}: total {maint / m0:.2f}, "
                      f"per merge {per:.2f}")
            prev[b] = (p, L, maint)


if __name__ == "__main__":
    main()
