"""Compare the numba and pure-numpy convolution backends.

Times conv3x3 forward/backward at the feature-map sizes the training loop
actually hits, then a few full training steps under each backend. Select the
production backend with ALR_KERNELS=numba|numpy.

Usage: python benchmarks/bench_kernels.py [--train-steps N]
"""

from __future__ import annotations

import argparse
import importlib
import time

import numpy as np

SHAPES = [
    ("stage0 grid", 32, 32, 8),
    ("stage1 grid", 32, 32, 16),
    ("stage2 grid", 32, 32, 32),
    ("fuse 2D->D", 64, 32, 16),
    ("disc", 16, 16, 16),
    ("rgb head", 32, 3, 32),
]


def bench_convs(backend: str) -> dict:
    import alrgan.kernels as kernels

    kernels.BACKEND = backend
    kernels.warmup()
    rng = np.random.default_rng(0)
    rows = {}
    for name, cin, cout, side in SHAPES:
        x = rng.normal(size=(cin, side, side))
        w = rng.normal(size=(cout, cin, 3, 3))
        b = rng.normal(size=cout)
        y = kernels.conv3x3_fwd(x, w, b)
        reps = max(30, int(2e6 / (cin * cout * side * side)))
        t0 = time.perf_counter()
        for _ in range(reps):
            kernels.conv3x3_fwd(x, w, b)
        fwd = (time.perf_counter() - t0) / reps
        t0 = time.perf_counter()
        for _ in range(reps):
            kernels.conv3x3_bwd(x, w, y)
        bwd = (time.perf_counter() - t0) / reps
        gflops = 2 * 9 * cin * cout * side * side / fwd / 1e9
        rows[name] = (fwd * 1e3, bwd * 1e3, gflops)
    return rows


def bench_train(backend: str, steps: int) -> float:
    import alrgan.kernels as kernels

    kernels.BACKEND = backend
    kernels.warmup()
    from alrgan.gan import GanConfig
    from alrgan.train import Trainer

    trainer = Trainer(GanConfig(seed=0, batch=4), dataset_size=16, eval_size=36)
    trainer.train_step(0)  # compile/warm path
    t0 = time.perf_counter()
    for s in range(1, steps + 1):
        trainer.train_step(s)
    return (time.perf_counter() - t0) / steps


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--train-steps", type=int, default=5)
    args = ap.parse_args()

    importlib.import_module("alrgan.kernels")
    results = {be: bench_convs(be) for be in ("numba", "numpy")}
    print(f"{'conv3x3 case':<14} {'numba fwd/bwd (ms)':>22} {'numpy fwd/bwd (ms)':>22}")
    for name, *_ in SHAPES:
        nb = results["numba"][name]
        np_ = results["numpy"][name]
        print(
            f"{name:<14} {nb[0]:>9.3f} /{nb[1]:>9.3f}  {np_[0]:>10.3f} /{np_[1]:>9.3f}"
        )
    print()
    for be in ("numba", "numpy"):
        dt = bench_train(be, args.train_steps)
        print(f"full train step [{be:>5}]: {dt * 1e3:7.1f} ms "
              f"({args.train_steps} steps, default desk config)")


if __name__ == "__main__":
    main()
