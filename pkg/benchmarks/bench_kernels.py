"""Compare the compiled and numpy kernel backends.

Per-kernel timings call both modules directly; the end-to-end timing runs a
full experiment config in a subprocess once per backend (the backend is
fixed at import, so switching needs a fresh interpreter).

    python3 benchmarks/bench_kernels.py [--sizes 8 64 256] [--config PATH]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit
from pathlib import Path

import numpy as np

from hamlearn import _pykernels

try:
    from hamlearn import _ckernels
except ImportError:
    _ckernels = None

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "src" / "hamlearn" / "harness" / "configs" / "gd-a-linear.yaml"


def kernel_calls(n: int, rng):
    a = rng.normal(size=(n, n))
    x, g = rng.normal(size=n), rng.normal(size=n)
    y = np.tanh(x)
    target = np.eye(n)[n // 2]
    return {
        "matvec": ("matvec", (a, x)),
        "rmatvec": ("rmatvec", (a, g)),
        "outer": ("outer", (g, x)),
        "tanh": ("tanh", (x,)),
        "tanh_vjp": ("tanh_vjp", (g, y)),
        "relu": ("relu", (x,)),
        "relu_vjp": ("relu_vjp", (g, x)),
        "softmax": ("softmax", (x,)),
        "softmax_xent": ("softmax_xent", (x, target)),
    }


def per_call_us(mod, name, args, number):
    fn = getattr(mod, name)
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=5)) / number * 1e6


def bench_kernels(sizes, number):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'n':>6}{'python us':>12}{'cython us':>12}{'speedup':>9}")
    for n in sizes:
        for label, (name, args) in kernel_calls(n, rng).items():
            py = per_call_us(_pykernels, name, args, number)
            if _ckernels is None:
                print(f"{label:<14}{n:>6}{py:>12.2f}{'n/a':>12}{'':>9}")
                continue
            cy = per_call_us(_ckernels, name, args, number)
            print(f"{label:<14}{n:>6}{py:>12.2f}{cy:>12.2f}{py / cy:>8.2f}x")


def bench_end_to_end(config: Path):
    code = ("import time, sys; from hamlearn import kernels; from hamlearn.harness import load_config, run_experiment;"
            "cfg = load_config(sys.argv[1]); t = time.perf_counter(); r = run_experiment(cfg);"
            "print(kernels.BACKEND, time.perf_counter() - t, r.passed)")
    print(f"\nend-to-end: {config.name}")
    for pure in ("0", "1"):
        env = {**os.environ, "HAMLEARN_PURE_PYTHON": pure}
        out = subprocess.run([sys.executable, "-c", code, str(config)], env=env, capture_output=True, text=True,
                             check=True).stdout.split()
        print(f"  {out[0]:<8} {float(out[1]):7.2f} s  passed={out[2]}")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[4, 16, 64, 256])
    p.add_argument("--number", type=int, default=2000)
    p.add_argument("--config", type=Path, default=DEFAULT_CONFIG)
    p.add_argument("--skip-end-to-end", action="store_true")
    args = p.parse_args(argv)
    bench_kernels(args.sizes, args.number)
    if not args.skip_end_to_end:
        bench_end_to_end(args.config)


if __name__ == "__main__":
    main()
