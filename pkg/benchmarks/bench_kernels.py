#!/usr/bin/env python3
"""Timing comparison of the two training-kernel backends.

Runs the three hot kernels (penalized batch objective, per-sample input
gradients, batch forward pass) on a few representative network shapes and
prints a table of median wall times for the numpy fallback and, when
built, the Cython extension.

The extension wins where the Python fallback pays per-layer dispatch
overhead many times per call (the penalized objective does two sweeps per
layer); numpy's vectorized forward pass is already close to optimal for
wide tanh layers, so do not expect the compiled column to win every row.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import statistics
import time

import numpy as np

from wdro._accel import _fallback

try:
    from wdro._accel import _kernels
except ImportError:
    _kernels = None

# (label, layer widths, batch size)
SHAPES = (
    ("small", (16, 32, 4), 64),
    ("default", (32, 64, 64, 4), 64),
    ("wide", (64, 128, 10), 256),
)


def _instance(widths, batch, seed=0):
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        ws.append(rng.normal(scale=fan_in ** -0.5, size=(fan_out, fan_in)))
        bs.append(rng.normal(scale=0.1, size=fan_out))
    x = rng.uniform(-1.0, 1.0, size=(batch, widths[0]))
    labels = rng.integers(0, widths[-1], size=batch)
    y = np.zeros((batch, widths[-1]))
    y[np.arange(batch), labels] = 1.0
    return ws, bs, x, y


def _median_time(fn, repeats):
    fn()                                    # warm up
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def _calls(module, ws, bs, x, y):
    act = _fallback.ACT_TANH
    return {
        "penalized_objective":
            lambda: module.penalized_objective(ws, bs, act, 0.01, x, y, 0.25),
        "input_gradients":
            lambda: module.input_gradients(ws, bs, act, 0.01, x, y),
        "forward_logits":
            lambda: module.forward_logits(ws, bs, act, 0.01, x),
    }


def _check_agreement(ws, bs, x, y):
    """The benchmark is meaningless if the two backends compute different
    things, so compare their objective values before timing anything."""
    a = _fallback.penalized_objective(ws, bs, _fallback.ACT_TANH, 0.01,
                                      x, y, 0.25)
    b = _kernels.penalized_objective(ws, bs, _fallback.ACT_TANH, 0.01,
                                     x, y, 0.25)
    for u, v in zip(a[:3], b[:3]):
        if abs(u - v) > 1e-9:
            raise AssertionError(f"backends disagree: {u} vs {v}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200,
                        help="timed calls per cell (median is reported)")
    args = parser.parse_args()

    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is "
              "available.\nReinstall with a C compiler to benchmark both.")

    header = (f"{'kernel':<22} {'shape':<16} {'batch':>5} "
              f"{'numpy':>10} {'cython':>10} {'speedup':>8}")
    print(header)
    print("-" * len(header))

    for label, widths, batch in SHAPES:
        ws, bs, x, y = _instance(widths, batch)
        if _kernels is not None:
            _check_agreement(ws, bs, x, y)
        numpy_calls = _calls(_fallback, ws, bs, x, y)
        cython_calls = _calls(_kernels, ws, bs, x, y) if _kernels else {}
        shape_txt = "-".join(str(w) for w in widths)
        for name, fn in numpy_calls.items():
            t_np = _median_time(fn, args.repeats)
            if _kernels is None:
                print(f"{name:<22} {shape_txt:<16} {batch:>5} "
                      f"{t_np * 1e3:>8.3f}ms {'-':>10} {'-':>8}")
                continue
            t_cy = _median_time(cython_calls[name], args.repeats)
            print(f"{name:<22} {shape_txt:<16} {batch:>5} "
                  f"{t_np * 1e3:>8.3f}ms {t_cy * 1e3:>8.3f}ms "
                  f"{t_np / t_cy:>7.2f}x")
        print()


if __name__ == "__main__":
    main()
