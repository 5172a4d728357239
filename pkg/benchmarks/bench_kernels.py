"""Time the compiled and numpy kernel backends side by side.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats 5] [--json out.json]

Each kernel runs on the same inputs under every importable backend; the
script also confirms the outputs are bit-identical.
"""
import argparse
import json
import time

import numpy as np

from fabl import kernels
from fabl.features import HistogramConfig, layout_for


def _cases(rng):
    layout = layout_for(15, HistogramConfig(bins=16))
    d, c = layout.d, 20
    W = rng.normal(size=(d, c))
    X = rng.normal(size=(20_000, d))
    b = rng.normal(size=c)
    stream = rng.normal(size=(300, 15, 3))
    lo, hi = np.full(3, -3.0), np.full(3, 3.0)
    return {
        "group_sq_norms": lambda: kernels.group_sq_norms(W, layout.joint_ids, layout.s),
        "channel_histograms": lambda: kernels.channel_histograms(stream, lo, hi, 16),
        "affine_scores": lambda: kernels.affine_scores(X, W, b),
    }


def _best(fn, repeats):
    out = fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def run(repeats=5, seed=0):
    cases = _cases(np.random.default_rng(seed))
    results = {}
    try:
        for name in kernels.available_backends():
            kernels.use_backend(name)
            results[name] = {k: _best(fn, repeats) for k, fn in cases.items()}
    finally:
        kernels.use_backend(kernels.DEFAULT_BACKEND)
    return results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write timings here")
    args = ap.parse_args(argv)

    results = run(args.repeats, args.seed)
    names = list(results)
    ref = names[0]
    print(f"{'kernel':<20}" + "".join(f"{n:>14}" for n in names) + "   identical")
    table = {}
    for kernel in results[ref]:
        secs = [results[n][kernel][0] for n in names]
        same = all(results[n][kernel][1].tobytes() == results[ref][kernel][1].tobytes() for n in names)
        print(f"{kernel:<20}" + "".join(f"{s * 1e3:>12.2f}ms" for s in secs) + f"   {same}")
        table[kernel] = {"seconds": dict(zip(names, secs)), "bit_identical": same}
    if "cython" in results and "python" in results:
        for kernel, row in table.items():
            print(f"  speedup {kernel}: {row['seconds']['python'] / row['seconds']['cython']:.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"format_version": 1, "repeats": args.repeats, "kernels": table}, fh, indent=2)


if __name__ == "__main__":
    main()
