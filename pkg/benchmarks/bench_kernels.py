"""Time the numpy and numba kernel backends side by side.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--no-train]

Kernel timings call both backends directly. The training-step timing runs one
subprocess per backend with KEYSTEGO_BACKEND set, so it exercises the same
switch a user would flip.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from keystego import kernels
from keystego.metrics import gaussian_taps

TRAIN_STEP = """
import json, time, numpy as np
from keystego import kernels, training
from keystego.sampledata import sample_images
ims = sample_images(size=96, limit=8)
cfg = training.TrainConfig(max_steps=1, epochs=1, crop_size=64, n_blocks=4, seed=0)
training.train(ims, cfg)  # warm-up and JIT compile
cfg.max_steps = {steps}
t = time.perf_counter()
_, hist = training.train(ims, cfg)
print(json.dumps({{"backend": kernels.BACKEND, "per_step": (time.perf_counter() - t) / hist.steps}}))
"""


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    # shapes of one desk-scale training batch: 4 crops of 64x64 -> 32x32 coefficients, 16 hidden channels
    xp = rng.normal(size=(4, 16, 34, 34)).astype(np.float32)
    cols = rng.normal(size=(4 * 32 * 32, 16 * 9)).astype(np.float32)
    img = rng.normal(size=(4, 3, 64, 64)).astype(np.float32)
    coeff = rng.normal(size=(4, 12, 32, 32)).astype(np.float32)
    planes = rng.uniform(0, 255, size=(15, 64, 64))
    taps = gaussian_taps()
    return {
        "im2col": lambda k: k.im2col(xp, 3),
        "col2im": lambda k: k.col2im(cols, xp.shape, 3),
        "haar_forward": lambda k: k.haar_forward(img),
        "haar_inverse": lambda k: k.haar_inverse(coeff),
        "ssim_filter": lambda k: k.filter_valid(planes, taps),
    }


def train_step(backend, steps):
    env = {**os.environ, "KEYSTEGO_BACKEND": backend}
    out = subprocess.run([sys.executable, "-c", TRAIN_STEP.format(steps=steps)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])["per_step"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=10, help="timed training steps per backend")
    ap.add_argument("--no-train", action="store_true")
    args = ap.parse_args()

    if "numba" not in kernels.BACKENDS:
        sys.exit("numba is not installed; nothing to compare against (pip install numba)")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, case in kernel_cases(rng).items():
        t_np = best_of(lambda: case(kernels.BACKENDS["numpy"]), args.repeat)
        t_nb = best_of(lambda: case(kernels.BACKENDS["numba"]), args.repeat)
        print(f"{name:<14} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:7.2f}x")
    if not args.no_train:
        t_np, t_nb = train_step("numpy", args.steps), train_step("numba", args.steps)
        print(f"{'train step':<14} {t_np * 1e3:10.1f} {t_nb * 1e3:10.1f} {t_np / t_nb:7.2f}x")


if __name__ == "__main__":
    main()
