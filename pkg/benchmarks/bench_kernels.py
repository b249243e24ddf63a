"""Time the compiled kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints one line per kernel with the best-of-repeat time per call for each
backend and the speedup. The two backends are checked to agree first.
"""
import argparse
import timeit

import numpy as np

from semiproto import _pykernels, kernels


def cases(rng):
    # sizes of a 5-way 1-shot episode with M=20 and 5 distractor classes, plus
    # a batch of 28x28 images through the first conv block
    q, u, p, d = 25, 200, 5, 64
    query, unl, protos = rng.normal(size=(q, d)), rng.normal(size=(u, d)), rng.normal(size=(p, d))
    logits = rng.normal(size=(u, p + 1))
    g_sq = rng.normal(size=(u, p))
    x = rng.normal(size=(8, 1, 28, 28))
    w = rng.normal(size=(16, 1, 3, 3))
    g_conv = rng.normal(size=(8, 16, 28, 28))
    pooled = rng.normal(size=(8, 16, 28, 28))
    support = rng.normal(size=(25, d))
    return {
        "sqdist": (unl, protos),
        "sqdist_backward": (g_sq, unl, protos),
        "log_softmax": (logits,),
        "column_stats": (rng.normal(size=(u, p)),),
        "nearest_index": (query, support),
        "conv3x3": (x, w),
        "conv3x3_backward": (g_conv, x, w),
        "maxpool2": (pooled,),
    }


def best_time(fn, args, repeat, number):
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--number", type=int, default=20)
    args = parser.parse_args(argv)
    cy = kernels.cython_backend
    if cy is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace` first")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'numpy (us)':>12} {'cython (us)':>12} {'speedup':>8}")
    for name, inputs in cases(rng).items():
        py_fn, cy_fn = getattr(_pykernels, name), getattr(cy, name)
        a, b = py_fn(*inputs), cy_fn(*inputs)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(np.asarray(y), np.asarray(x), rtol=1e-10, atol=1e-10)
        t_py = best_time(py_fn, inputs, args.repeat, args.number)
        t_cy = best_time(cy_fn, inputs, args.repeat, args.number)
        print(f"{name:<18} {t_py * 1e6:12.1f} {t_cy * 1e6:12.1f} {t_py / t_cy:8.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
