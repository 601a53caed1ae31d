"""Time the numba kernels against their numpy twins on CIFAR-sized tensors.

    python benchmarks/bench_kernels.py [--repeat 5]

Also runs one training epoch of the tiny network under each backend
(CIMBNN_DISABLE_JIT selects the backend at import, so that part runs in
subprocesses).
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from cimbnn import kernels


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compilation)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    x = rng.random((32, 128, 32, 32))
    cols = kernels.im2col_numpy(x, 3, 1, 1)
    pooled, arg = kernels.maxpool_numpy(x, 2)
    g = rng.random(pooled.shape)
    return {
        "im2col 32x128x32x32 k3": lambda impl: impl["im2col"](x, 3, 1, 1),
        "col2im 32x128x32x32 k3": lambda impl: impl["col2im"](cols, x.shape, 3, 1, 1),
        "maxpool 32x128x32x32": lambda impl: impl["maxpool"](x, 2),
        "maxpool_backward": lambda impl: impl["maxpool_backward"](g, arg, 2, x.shape),
    }


EPOCH_SNIPPET = """
import time
from cimbnn import kernels
from cimbnn.data_io import synthetic_split
from cimbnn.nn.arch import tiny
from cimbnn.trainer import TrainConfig, train
tr, _ = synthetic_split(2000, 10, shape=(3, 16, 16))
train(TrainConfig(epochs=1, array_size=64, batch_size=64, val_fraction=0), tiny(input_hw=16), tr)
t = time.perf_counter()
train(TrainConfig(epochs=1, array_size=64, batch_size=64, val_fraction=0), tiny(input_hw=16), tr)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-epoch", action="store_true")
    args = ap.parse_args()
    if not kernels._HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, call in kernel_cases(rng).items():
        t_np = best_of(lambda: call(kernels.IMPLEMENTATIONS["numpy"]), args.repeat)
        t_nb = best_of(lambda: call(kernels.IMPLEMENTATIONS["numba"]), args.repeat)
        print(f"{name:28s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.2f}")
    if args.skip_epoch:
        return
    for flag in ("1", "0"):
        env = dict(os.environ, CIMBNN_DISABLE_JIT=flag)
        out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"tiny-net training epoch ({backend}): {float(secs):.2f} s")


if __name__ == "__main__":
    main()
