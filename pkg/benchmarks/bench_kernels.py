"""Benchmark the numba kernels against their pure-numpy twins.

Runs each hot kernel under both backends in subprocesses (the backend is
fixed at import time via SETSEQ_BACKEND) and prints a speedup table.

    python benchmarks/bench_kernels.py [--rows N] [--repeat K]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from setseq import kernels
from setseq.backend import ACTIVE_BACKEND

rows, repeat = int(sys.argv[1]), int(sys.argv[2])
rng = np.random.default_rng(0)
results = {"backend": ACTIVE_BACKEND}

def timeit(fn, *args):
    fn(*args)  # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat

u = rng.random((rows, 8, 100), dtype=np.float32)
ker = rng.random((8, 30), dtype=np.float32)
y = np.empty_like(u)
results["conv_forward"] = timeit(kernels.conv_forward_cm_into, u, ker, y)
results["conv_backward_input"] = timeit(kernels.conv_backward_input_cm_into, u, ker, y)
results["conv_backward_kernel"] = timeit(kernels.conv_backward_kernel_cm, u, u, 30)

m = 1000
x = np.zeros(m, np.uint8); x[m // 2:] = 1
init = rng.integers(1, 3, m).astype(np.uint8)
uni = rng.random((99, m))
results["simulate_paths"] = timeit(
    kernels.simulate_paths, x, init, uni, 0.001, 4.0, 0.5, 0.0, True)

a = rng.random((m, 5), dtype=np.float32)
b = rng.random((m, 5), dtype=np.float32)
out = np.empty((m, m), np.float32)
if ACTIVE_BACKEND == "numba":
    results["outer_scores"] = timeit(kernels.outer_scores_jit, a, b, out)
    dk = np.zeros((8, 30), np.float32)
    results["conv_backward_kernel"] = timeit(kernels._nb_conv_backward_kernel_cm, u, u, dk)
else:
    results["outer_scores"] = timeit(kernels.outer_scores, a, b, out)

print(json.dumps(results))
"""


def run(backend: str, rows: int, repeat: int) -> dict:
    env = dict(os.environ, SETSEQ_BACKEND=backend)
    proc = subprocess.run([sys.executable, "-c", WORKER, str(rows), str(repeat)],
                          capture_output=True, text=True, env=env)
    if proc.returncode != 0:
        raise RuntimeError(f"{backend} worker failed:\n{proc.stderr}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=5000,
                    help="convolution batch rows (units x batch)")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    numba_res = run("numba", args.rows, args.repeat)
    numpy_res = run("numpy", args.rows, args.repeat)
    keys = [k for k in numba_res if k != "backend"]
    width = max(len(k) for k in keys)
    print(f"{'kernel':<{width}}  {'numba (ms)':>12}  {'numpy (ms)':>12}  {'speedup':>8}")
    for k in keys:
        nb, np_ = numba_res[k] * 1e3, numpy_res[k] * 1e3
        print(f"{k:<{width}}  {nb:>12.2f}  {np_:>12.2f}  {np_ / nb:>7.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
