"""Benchmark: compiled convolution kernels vs the numpy fallback.

Times the raw conv2d forward/backward kernels on classifier- and
segmenter-shaped workloads, then times a full classifier training step per
backend in subprocesses (the backend is fixed at import via RGBN_KERNELS).

Usage: python benchmarks/bench_kernels.py [--repeats N] [--skip-train-step]
"""
from __future__ import annotations

import argparse
import importlib
import json
import os
import subprocess
import sys
import time

import numpy as np

CASES = [
    # (name, n, c, h, w, k, kernel, stride, pad)
    ("classifier conv1 64x64", 32, 4, 64, 64, 16, 3, 1, 1),
    ("classifier conv2 32x32", 32, 16, 32, 32, 32, 3, 1, 1),
    ("classifier conv6 4x4", 32, 64, 4, 4, 128, 3, 1, 1),
    ("segmenter enc1 96x96", 4, 4, 96, 96, 16, 3, 1, 1),
    ("segmenter dec4 96x96", 4, 32, 96, 96, 16, 3, 1, 1),
]

TRAIN_STEP_SNIPPET = """
import json, time
import numpy as np
from rgbn.engine import backend_name, nll_from_probs, sgd_step
from rgbn.models import build_sequential

model = build_sequential(4, 3, 64, seed=0)
rng = np.random.default_rng(0)
x = rng.random((32, 4, 64, 64))
y = rng.integers(0, 3, size=32)

def step():
    probs = model.forward(x)
    loss, dprobs = nll_from_probs(probs, y)
    model.backward(dprobs)
    sgd_step(model.parameters(), 0.001)

step()  # warm-up
times = []
for _ in range(5):
    t0 = time.perf_counter()
    step()
    times.append(time.perf_counter() - t0)
print(json.dumps({"backend": backend_name(), "train_step_s": min(times)}))
"""


def _load_backends():
    backends = {"numpy": importlib.import_module("rgbn.engine.kernels.numpy_backend")}
    try:
        backends["cython"] = importlib.import_module("rgbn.engine.kernels._convkern")
    except ImportError:
        print("note: compiled extension not built; benchmarking numpy only")
    return backends


def _time_case(mod, case, repeats):
    name, n, c, h, w, k, kernel, stride, pad = case
    rng = np.random.default_rng(0)
    x = rng.random((n, c, h, w))
    weight = rng.random((k, c, kernel, kernel)) - 0.5
    bias = rng.random(k) - 0.5
    y = mod.conv2d_forward(x, weight, bias, stride, pad)
    dy = rng.random(y.shape)

    def once(fn):
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    fwd = once(lambda: mod.conv2d_forward(x, weight, bias, stride, pad))
    bwd = once(lambda: mod.conv2d_backward(x, weight, dy, stride, pad))
    return fwd, bwd


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--skip-train-step", action="store_true")
    args = parser.parse_args()

    backends = _load_backends()
    print(f"{'case':30s} {'backend':8s} {'forward s':>10s} {'backward s':>11s}")
    totals = {name: 0.0 for name in backends}
    for case in CASES:
        for bname, mod in backends.items():
            fwd, bwd = _time_case(mod, case, args.repeats)
            totals[bname] += fwd + bwd
            print(f"{case[0]:30s} {bname:8s} {fwd:10.4f} {bwd:11.4f}")
    if len(totals) == 2:
        speedup = totals["numpy"] / totals["cython"]
        print(f"\nkernel total: numpy {totals['numpy']:.3f}s, "
              f"cython {totals['cython']:.3f}s ({speedup:.2f}x)")

    if not args.skip_train_step:
        print("\nfull classifier train step (batch 32 @ 4x64x64):")
        for bname in backends:
            env = dict(os.environ, RGBN_KERNELS=bname)
            out = subprocess.run([sys.executable, "-c", TRAIN_STEP_SNIPPET],
                                 env=env, capture_output=True, text=True, check=True)
            result = json.loads(out.stdout.strip().splitlines()[-1])
            print(f"  {result['backend']:8s} {result['train_step_s']:.4f} s/step")
    return 0


if __name__ == "__main__":
    sys.exit(main())
