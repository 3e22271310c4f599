"""Benchmark the compiled depthwise-convolution kernels against the numpy
fallback, plus an optional end-to-end training-step comparison.

Usage:
    python benchmarks/bench_kernels.py [--train-step]

The kernel benchmark times both implementations in-process. The training-step
benchmark re-runs the interpreter with SLOTRX_BACKEND set to each backend,
since the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from slotrx.tensorgrad import _conv_np

try:
    from slotrx.tensorgrad import _conv_cy
except ImportError:
    _conv_cy = None

SHAPES = [
    # (batch, height, width, channels) - batch covers slots x layers
    (16, 48, 14, 19),
    (16, 48, 14, 64),
    (16, 48, 14, 66),
    (4, 96, 14, 64),
]


def _time(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(dtype):
    rng = np.random.default_rng(0)
    print(f"\ndepthwise 3x3 kernels, {np.dtype(dtype).name}")
    print(f"{'shape':>18} {'op':>8} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for shape in SHAPES:
        x = rng.standard_normal(shape).astype(dtype)
        k = rng.standard_normal((3, 3, shape[3])).astype(dtype)
        g = rng.standard_normal(shape).astype(dtype)
        rows = [("forward", lambda m: m.depthwise3x3(x, k)),
                ("grad_k", lambda m: m.depthwise3x3_grad_kernel(x, g))]
        for name, call in rows:
            t_np = _time(lambda: call(_conv_np))
            if _conv_cy is None:
                print(f"{str(shape):>18} {name:>8} {t_np*1e3:9.2f}ms {'n/a':>10}")
                continue
            t_cy = _time(lambda: call(_conv_cy))
            np.testing.assert_allclose(call(_conv_np), call(_conv_cy), rtol=1e-5)
            print(f"{str(shape):>18} {name:>8} {t_np*1e3:9.2f}ms {t_cy*1e3:9.2f}ms "
                  f"{t_np/t_cy:7.2f}x")


TRAIN_SNIPPET = """
import time
import numpy as np
from slotrx import grid, neural, training
from slotrx.tensorgrad import BACKEND
rx = neural.NeuralReceiver.build(neural.Hyperparams(n_rx=4, bits_per_symbol=4),
                                 seed=0, dtype=np.float32)
slot = grid.SlotConfig(n_f=48, n_t=2, n_rx=4, bits_per_symbol=4)
cfg = training.TrainConfig(batch_size=8, n_t_max=2, seed=1, steps=8)
state = training.init_training(rx, slot, cfg)
training.train_step(state)
t0 = time.perf_counter()
for _ in range(6):
    training.train_step(state)
print(f"{BACKEND}: {(time.perf_counter() - t0) / 6 * 1e3:.1f} ms/step")
"""


def bench_train_step():
    print("\nfull training step (desk scale, float32, batch 8)")
    for backend in ("numpy", "cython"):
        env = dict(os.environ, SLOTRX_BACKEND=backend)
        proc = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env,
                              capture_output=True, text=True)
        out = proc.stdout.strip() or proc.stderr.strip().splitlines()[-1]
        print(f"  {out}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train-step", action="store_true",
                        help="also compare a full training step per backend")
    args = parser.parse_args()
    for dtype in (np.float32, np.float64):
        bench_kernels(dtype)
    if args.train_step:
        bench_train_step()


if __name__ == "__main__":
    main()
