"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--bits 200000] [--repeat 3]

Both backends must produce identical bytes; the script checks that before
reporting timings.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from cwic._backend import compiled_kernels, python_kernels
from cwic.entropy.models import FreqTable, NetPredictor


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n_bits: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    probs = rng.uniform(1e-4, 1 - 1e-4, n_bits)
    bits = (rng.random(n_bits) < probs).astype(np.uint8)
    side = 16
    codes = (rng.random((16, side, side)) < 0.3).astype(np.uint8)
    mask = np.ones_like(codes)
    net = NetPredictor.random(seed)
    adam = [rng.normal(size=2_000_000), rng.normal(size=2_000_000),
            np.zeros(2_000_000), np.zeros(2_000_000)]
    return [
        ("range coder encode", lambda k: k.encode_bits(bits, probs)),
        ("range coder decode", lambda k, d=python_kernels.encode_bits(bits, probs): k.decode_bits(d, probs)),
        ("context coding, freq table", lambda k: k.encode_maps(codes, mask, FreqTable())),
        ("context coding, net", lambda k: k.encode_maps(codes[:4], mask[:4], net)),
        ("adam update 2M params", lambda k: k.adam_update(adam[0], adam[1], adam[2], adam[3],
                                                          1e-4, 0.9, 0.999, 1e-8, 0.1, 0.001)),
    ]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bits", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if compiled_kernels is None:
        print("compiled extension not built; only the Python backend is available")
        return 1
    print(f"{'kernel':32s} {'python s':>10s} {'compiled s':>11s} {'speedup':>8s}")
    for name, fn in cases(args.bits):
        if not name.startswith("adam"):
            a, b = fn(python_kernels), fn(compiled_kernels)
            if isinstance(a, tuple):
                a, b = a[0], b[0]
            if not np.array_equal(np.frombuffer(a, np.uint8) if isinstance(a, bytes) else a,
                                  np.frombuffer(b, np.uint8) if isinstance(b, bytes) else b):
                print(f"{name}: backends disagree", file=sys.stderr)
                return 1
        tp = _best(lambda: fn(python_kernels), args.repeat)
        tc = _best(lambda: fn(compiled_kernels), args.repeat)
        print(f"{name:32s} {tp:10.4f} {tc:11.4f} {tp / tc:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
