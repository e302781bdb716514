"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_backends.py --sizes 1000,5000 --m 25 --repeats 3

Prints one row per (n, kernel) with both timings and the speed-up. When the
extension is not built only the python column is filled.
"""
import argparse
import sys

from lurk_vecchia._backend import available_backends
from lurk_vecchia.bench import compare_backends


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000,5000")
    ap.add_argument("--m", type=int, default=25)
    ap.add_argument("--p", type=int, default=20)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    have = sorted(available_backends())
    print(f"backends: {', '.join(have)}", file=sys.stderr)
    print(f"{'n':>7} {'kernel':<20} {'cython_ms':>11} {'python_ms':>11} {'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        by = {}
        for n_, kernel, backend, ms in compare_backends(n, args.m, args.p, args.seed,
                                                        args.repeats):
            by.setdefault(kernel, {})[backend] = ms
        for kernel, t in by.items():
            c, p = t.get("cython"), t.get("python")
            cs = f"{c:11.3f}" if c is not None else f"{'-':>11}"
            sp = f"{p / c:8.1f}" if c else f"{'-':>8}"
            print(f"{n:>7} {kernel:<20} {cs} {p:11.3f} {sp}")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
