"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Times each hot kernel under both backends, then one full SSTA training step
(forward + backward on a batch) with each backend forced through the
SSTAFED_KERNELS switch in a subprocess.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from sstafed import kernels

STEP = """
import numpy as np
from sstafed.model import SstaConfig, init_params, loss_and_grad, one_hot
cfg = SstaConfig(frame_size=({h}, {h}))
p = init_params(cfg, 0)
x = np.random.default_rng(0).random((16, cfg.sequence_length) + cfg.frame_size)
y = one_hot(np.arange(16) % 2, 2)
"""


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases():
    rng = np.random.default_rng(0)
    x = rng.random((80, 1, 16, 16))
    w = rng.normal(size=(4, 1, 3, 3))
    dy = rng.normal(size=(80, 4, 16, 16))
    mag = rng.random((128, 128))
    ori = rng.random((128, 128)) * np.pi
    return {
        "conv2d_same 80x1x16x16 * 4x3x3": lambda impl: kernels.conv2d_same(x, w, impl=impl),
        "conv2d grad_input": lambda impl: kernels.conv2d_same_grad_input(dy, w, impl=impl),
        "conv2d grad_weight": lambda impl: kernels.conv2d_same_grad_weight(x, dy, 3, 3, impl=impl),
        "cell_histograms 128x128 / 8px": lambda impl: kernels.cell_histograms(mag, ori, 8, 9, np.pi, impl=impl),
    }


def train_step_time(backend, size, repeat):
    code = (
        "import timeit\n" + STEP.format(h=size)
        + f"print(min(timeit.repeat(lambda: loss_and_grad(p, x, y), number=1, repeat={repeat})))"
    )
    env = dict(os.environ, SSTAFED_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    impls = kernels.backends()
    names = sorted(impls)
    print(f"backends available: {', '.join(names)} (selected at import: {kernels.BACKEND})")
    print(f"{'kernel':34s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in kernel_cases().items():
        t = {n: best_of(lambda: fn(impls[n]), args.repeat) for n in names}
        line = f"{label:34s}" + "".join(f"{t[n] * 1e3:10.3f}ms" for n in names)
        if len(names) > 1:
            line += f"{t['python'] / t['cython']:11.1f}x"
        print(line)
    for size in (8, 16):
        label = f"train step 16 seq, {size}x{size} frames"
        t = {n: train_step_time(n if n == "python" else "auto", size, max(3, args.repeat // 4)) for n in names}
        line = f"{label:34s}" + "".join(f"{t[n] * 1e3:10.3f}ms" for n in names)
        if len(names) > 1:
            line += f"{t['python'] / t['cython']:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
