"""Benchmark the compiled kernels against the numpy fallback.

Run: python benchmarks/bench_kernels.py [--repeat N]

Sizes approximate a real backbone (14x14x512 features, 128-d embeddings)
scaled to keep the 4-D contraction affordable on one core.
"""

import argparse
import time

import numpy as np

from metric_lens import _kernels_py, kernels


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    img = rng.standard_normal((64, 64, 16)).astype(np.float32)
    cw = rng.standard_normal((3, 3, 16, 32)).astype(np.float32)
    cb = rng.standard_normal(32).astype(np.float32)

    W = rng.standard_normal((14, 14, 64, 128)).astype(np.float32)
    A = rng.standard_normal((14, 14, 128)).astype(np.float32)

    Fq = rng.standard_normal((14, 14, 64)).astype(np.float32)
    Fr = rng.standard_normal((14, 14, 64)).astype(np.float32)

    src = rng.standard_normal((14, 14)).astype(np.float32)

    img3 = rng.standard_normal((128, 128, 3)).astype(np.float32)
    cw3 = rng.standard_normal((3, 3, 3, 16)).astype(np.float32)
    cb3 = rng.standard_normal(16).astype(np.float32)

    return [
        ("conv2d 128x128x3 * 3x3x3x16", lambda b: b.conv2d(img3, cw3, cb3, 1, 1)),
        ("conv2d 64x64x16 * 3x3x16x32", lambda b: b.conv2d(img, cw, cb, 1, 1)),
        ("position_features 14x14 W[64x128]", lambda b: b.position_features(W, A)),
        ("p2p_contract 14x14 x 14x14 (l=64)", lambda b: b.p2p_contract(Fq, Fr)),
        ("bilinear_resize 14x14 -> 448x448", lambda b: b.bilinear_resize(src, 448, 448)),
    ]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    backends = [("python", _kernels_py)]
    if kernels.COMPILED:
        from metric_lens import _kernels

        backends.append(("compiled", _kernels))
    else:
        print("compiled extension not available; timing the fallback only\n")

    print(f"{'kernel':<40} " + " ".join(f"{name:>12}" for name, _ in backends) + "  speedup")
    for label, call in cases(rng):
        times = {}
        for name, mod in backends:
            times[name] = _time(lambda: call(mod), args.repeat)
        row = f"{label:<40} " + " ".join(f"{times[name] * 1e3:>10.2f}ms" for name, _ in backends)
        if len(backends) == 2:
            row += f"  {times['python'] / times['compiled']:>6.2f}x"
        print(row)

    # agreement spot check while we have both backends loaded
    if len(backends) == 2:
        img = rng.standard_normal((16, 16, 4)).astype(np.float32)
        cw = rng.standard_normal((3, 3, 4, 8)).astype(np.float32)
        cb = rng.standard_normal(8).astype(np.float32)
        a = backends[0][1].conv2d(img, cw, cb, 1, 1)
        b = backends[1][1].conv2d(img, cw, cb, 1, 1)
        print(f"\nbackend agreement (conv2d max abs diff): {np.abs(a - b).max():.2e}")


if __name__ == "__main__":
    main()
