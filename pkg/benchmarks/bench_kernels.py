"""Benchmark: compiled extension vs numpy fallback on the hot kernels.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Times the two kernels that dominate runtime, batch cosine scoring
(classification) and the fused loss+gradient (training), at a few
problem sizes, and reports the speedup of the compiled backend.
"""

import argparse
import time

import numpy as np

from resadapt import _kernels_py

try:
    from resadapt import _kernels
except ImportError:
    _kernels = None

# classification scores over a whole bank: (rows, classes, dim)
SCORE_SIZES = [
    (256, 5, 32),
    (8192, 20, 64),
    (50000, 100, 512),
]
# training loss+gradient: one optimizer batch (64 rows) at growing scales
GRAD_SIZES = [
    (64, 5, 32),
    (64, 20, 64),
    (64, 100, 512),
    (64, 345, 512),
]


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _row(label, name, call, repeats):
    t_py = _time(lambda: call(_kernels_py), repeats)
    if _kernels is None:
        print(f"{label:>18s} {name:>14s} {t_py * 1e3:9.3f}ms {'absent':>11s} {'-':>8s}")
        return
    t_c = _time(lambda: call(_kernels), repeats)
    print(f"{label:>18s} {name:>14s} {t_py * 1e3:9.3f}ms {t_c * 1e3:9.3f}ms "
          f"{t_py / t_c:7.2f}x")


def bench(repeats):
    rng = np.random.default_rng(0)
    header = (f"{'size (NxKxD)':>18s} {'kernel':>14s} {'numpy':>10s} "
              f"{'compiled':>11s} {'speedup':>8s}")
    print(header)
    print("-" * len(header))
    for n, k, d in SCORE_SIZES:
        bank = rng.standard_normal((n, d)).astype(np.float32)
        anchors = rng.standard_normal((k, d)).astype(np.float32)
        _row(f"{n}x{k}x{d}", "cosine_scores",
             lambda impl, b=bank, a=anchors: impl.cosine_scores(b, a), repeats)
    for n, k, d in GRAD_SIZES:
        bank = rng.standard_normal((n, d)).astype(np.float32)
        anchors64 = rng.standard_normal((k, d)).astype(np.float64)
        labels = rng.integers(0, k, size=n).astype(np.int64)
        _row(f"{n}x{k}x{d}", "ce_loss_grad",
             lambda impl, b=bank, y=labels, a=anchors64:
             impl.ce_loss_grad(b, y, a, 0.01, True), repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if _kernels is None:
        print("note: compiled extension not built; showing numpy only\n")
    bench(args.repeats)


if __name__ == "__main__":
    main()
