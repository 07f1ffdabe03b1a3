"""Time the compiled GRU kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Reports the best-of-N wall time per call for the forward and backward
recurrence at a few (T, B, H) shapes, then for one full training update.
"""
import argparse
import timeit

import numpy as np

from pedmotion import kernels
from pedmotion.network import init_params
from pedmotion.training import Batch, backward

SHAPES = [(64, 1, 64), (64, 8, 64), (64, 32, 64), (30, 32, 16)]


def _inputs(T, B, H, seed=0):
    rng = np.random.default_rng(seed)
    x = [rng.normal(size=(T, B, H)) for _ in range(3)]
    W = [rng.normal(0, 0.2, size=(H, H)) for _ in range(3)]
    return x, W, np.zeros((B, H)), rng.normal(size=(T, B, H))


def best_ms(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return 1e3 * min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_recurrence(repeat):
    backends = kernels.available_backends()
    print(f"{'T,B,H':>12s} {'pass':>9s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup")
    for T, B, H in SHAPES:
        x, W, h0, dh = _inputs(T, B, H)
        fwd = kernels.gru_forward(*x, *W, h0, backend="python")
        for name, call in (
            ("forward", lambda b: kernels.gru_forward(*x, *W, h0, backend=b)),
            ("backward", lambda b: kernels.gru_backward(dh, *fwd, *W, backend=b)),
        ):
            times = {b: best_ms(lambda: call(b), repeat) for b in backends}
            cols = " ".join(f"{times[b]:8.3f}ms" for b in backends)
            speed = f"{times['python'] / times['cython']:6.2f}x" if "cython" in times else ""
            print(f"{f'{T},{B},{H}':>12s} {name:>9s} {cols}   {speed}")


def bench_update(repeat):
    rng = np.random.default_rng(1)
    params = init_params(0)
    B, T = 32, 64
    batch = Batch(rng.normal(size=(B, T, 72)), np.ones((B, T), bool), rng.integers(0, 2, (B, T)))
    keep = np.ones((B, T, params.arch.input_dim))
    print("\nfull loss+gradient for one 32x64 batch")
    for b in kernels.available_backends():
        ms = best_ms(lambda: backward(batch, params, None, keep=keep, backend=b), repeat)
        print(f"  {b:>8s}: {ms:8.2f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(kernels.available_backends())}\n")
    bench_recurrence(args.repeat)
    bench_update(args.repeat)


if __name__ == "__main__":
    main()
