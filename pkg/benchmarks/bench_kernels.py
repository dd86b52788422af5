"""Benchmark: compiled hot kernels vs the pure-Python (numpy) fallback.

Covers the individual kernels at training-relevant shapes and one full
training step of the default desk model. Run:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from sediff.nn import kernels_py

try:
    from sediff.nn import _kernels
except ImportError:
    _kernels = None


def bench(fn, iters=50, warmup=5):
    for _ in range(warmup):
        fn()
    start = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - start) / iters * 1e3


def kernel_table():
    rng = np.random.default_rng(0)
    pre = rng.normal(size=(64, 4, 1024)).astype(np.float32)
    _, ta, sig = kernels_py.gate_fwd_cache(pre)
    ta = np.ascontiguousarray(ta)
    sig = np.ascontiguousarray(sig)
    dout = rng.normal(size=ta.shape).astype(np.float32)
    z = rng.normal(size=(3, 64, 4, 1024)).astype(np.float32)
    bias = rng.normal(size=64).astype(np.float32)
    dy = rng.normal(size=(64, 4, 1024)).astype(np.float32)
    p = rng.normal(size=220_000).astype(np.float32)
    g = rng.normal(size=220_000).astype(np.float32)
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    cases = [
        ("gate_fwd_cache (numpy SIMD in both backends)",
         lambda k: k.gate_fwd_cache(pre), False),
        ("gate_bwd_cached", lambda k: k.gate_bwd_cached(ta, sig, dout), True),
        ("conv_taps_fwd", lambda k: k.conv_taps_fwd(z, bias, 4), True),
        ("conv_taps_bwd_scatter", lambda k: k.conv_taps_bwd_scatter(dy, 4), True),
        ("adam_update (220k params)",
         lambda k: k.adam_update(p, g, m, v, 1e-4, 0.9, 0.999, 1e-8), True),
    ]
    print(f"{'kernel':45s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, fn, has_compiled in cases:
        t_py = bench(lambda: fn(kernels_py))
        if _kernels is not None and has_compiled:
            t_cy = bench(lambda: fn(_kernels))
            print(f"{name:45s} {t_py:9.3f}ms {t_cy:9.3f}ms {t_py / t_cy:7.2f}x")
        else:
            print(f"{name:45s} {t_py:9.3f}ms {'-':>10s} {'-':>8s}")


def train_step_table():
    import os
    import subprocess
    import sys

    code = r"""
import time, numpy as np
from sediff.denoiser import DenoiserConfig, DenoiserModel, TrainConfig, TrainItem, train_denoiser
from sediff.schedule import ScheduleConfig, build_schedule
from sediff.nn.backend import BACKEND
table = build_schedule(ScheduleConfig())
rng = np.random.default_rng(0)
items = []
for i in range(4):
    x0 = rng.normal(scale=0.3, size=11200).astype(np.float32)
    y = (x0 + 0.1*rng.normal(size=11200)).astype(np.float32)
    mel = rng.normal(size=(44, 80)).astype(np.float32)
    enc = np.zeros(4, np.float32); enc[i % 4] = 1
    items.append(TrainItem(x0, y, mel, enc))
model = DenoiserModel(DenoiserConfig(blocks=8, channels=32, enc_dim=4))
train_denoiser(model, items, table, TrainConfig(steps=5, batch=4, crop_frames=4, seed=1))
start = time.perf_counter()
train_denoiser(model, items, table, TrainConfig(steps=30, batch=4, crop_frames=4, seed=1))
print(f"{BACKEND}: {(time.perf_counter()-start)/30*1e3:.1f} ms/step")
"""
    print("\nfull training step (8 blocks, 32 ch, batch 4, crop 1024):")
    for pure in ("0", "1"):
        env = dict(os.environ, SEDIFF_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True)
        print(" ", out.stdout.strip() or out.stderr.strip())


if __name__ == "__main__":
    if _kernels is None:
        print("compiled kernels not available; showing fallback timings only\n")
    kernel_table()
    train_step_table()
