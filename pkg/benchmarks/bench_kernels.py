"""Hot-kernel shootout: compiled extension vs the pure-numpy fallback.

Times the two operations behind compose() and quantize() at several sizes,
checks that both backends agree bit for bit, and prints a table. Run as

    python3 benchmarks/bench_kernels.py [--runs 200]
"""
import argparse
import time

import numpy as np

from aublend import _kernels_py

try:
    from aublend import _kernels
except ImportError:
    _kernels = None


def _median_ms(fn, runs):
    for _ in range(5):
        fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples)) * 1e3


def bench_compose(impl, v, active, rng, runs):
    template = rng.normal(size=(v, 3))
    stack = rng.normal(size=(32, v, 3)) * 0.2
    idx = np.arange(active, dtype=np.int64)
    w = rng.uniform(0.1, 1.0, size=active)
    out = np.empty_like(template)
    ms = _median_ms(lambda: impl.compose_core(template, stack, idx, w, out), runs)
    return ms, out.copy()


def bench_nearest(impl, z, entries, runs):
    out = np.empty(z.shape[0], dtype=np.int64)
    ms = _median_ms(lambda: impl.nearest_entries(z, entries, out), runs)
    return ms, out.copy()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=200, help="timed runs per cell")
    args = ap.parse_args()

    if _kernels is None:
        print("compiled extension not importable; timing the fallback only")
    rows = []
    for v, active in ((529, 8), (5023, 32), (20000, 32)):
        rng = np.random.default_rng(1)
        py_ms, py_out = bench_compose(_kernels_py, v, active, rng, args.runs)
        row = [f"compose V={v} AUs={active}", f"{py_ms:8.3f}"]
        if _kernels is not None:
            rng = np.random.default_rng(1)
            c_ms, c_out = bench_compose(_kernels, v, active, rng, args.runs)
            assert np.array_equal(py_out, c_out), "backends disagree on compose"
            row += [f"{c_ms:8.3f}", f"{py_ms / c_ms:5.2f}x"]
        rows.append(row)
    for tokens, size, dim in ((32, 64, 32), (1000, 256, 64), (4096, 1024, 64)):
        rng = np.random.default_rng(2)
        entries = rng.normal(size=(size, dim))
        z = rng.normal(size=(tokens, dim))
        py_ms, py_out = bench_nearest(_kernels_py, z, entries, args.runs)
        row = [f"nearest T={tokens} P={size} D={dim}", f"{py_ms:8.3f}"]
        if _kernels is not None:
            c_ms, c_out = bench_nearest(_kernels, z, entries, args.runs)
            assert np.array_equal(py_out, c_out), "backends disagree on nearest"
            row += [f"{c_ms:8.3f}", f"{py_ms / c_ms:5.2f}x"]
        rows.append(row)

    header = ["kernel", "python ms"]
    if _kernels is not None:
        header += ["compiled ms", "speedup"]
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    for r in [header] + rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    if _kernels is not None:
        print("\nboth backends agreed bit for bit on every case")


if __name__ == "__main__":
    main()
