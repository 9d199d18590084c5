"""Compare the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from robust_erm import _fallback, _kernels
from robust_erm.smooth_loss import build_smoothed_huber


def _best(fn, repeat: int, number: int) -> float:
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels._core is None:
        print("compiled extension not available (backend: %s)" % _kernels.BACKEND)
        return 1
    core = _kernels._core
    loss = build_smoothed_huber(tabulate=True)
    table = loss.table
    rng = np.random.default_rng(0)
    d1 = lambda u: _fallback.table_eval(table, u, 1)  # noqa: E731
    d2 = lambda u: _fallback.table_eval(table, u, 2)  # noqa: E731

    print(f"{'kernel':<28}{'size':>8}{'compiled [us]':>16}{'fallback [us]':>16}{'speedup':>10}")
    for size in (100, 10_000, 1_000_000):
        z = rng.normal(scale=2.0, size=size)
        number = max(1, 100_000 // size)
        assert np.allclose(core.table_eval(table, z, 2), _fallback.table_eval(table, z, 2), atol=1e-13)
        tc = _best(lambda: core.table_eval(table, z, 2), args.repeat, number)
        tp = _best(lambda: _fallback.table_eval(table, z, 2), args.repeat, number)
        print(f"{'table_eval (order 2)':<28}{size:>8}{tc * 1e6:>16.1f}{tp * 1e6:>16.1f}{tp / tc:>10.1f}")
    for k in (20, 272, 2000):
        means = rng.standard_normal(k)
        means[: k // 20] += 1e4  # a few outlying blocks
        scale = np.sqrt(100.0)
        number = max(1, 2000 // k)
        rc = core.solve_location(table, means, scale, 1e-12, 200)
        rp = _fallback.solve_location(means, scale, d1, d2, 1e-12, 200)
        assert abs(rc[0] - rp[0]) < 1e-9
        tc = _best(lambda: core.solve_location(table, means, scale, 1e-12, 200), args.repeat, number)
        tp = _best(lambda: _fallback.solve_location(means, scale, d1, d2, 1e-12, 200), args.repeat, number)
        print(f"{'solve_location':<28}{k:>8}{tc * 1e6:>16.1f}{tp * 1e6:>16.1f}{tp / tc:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
