"""Why the accept/reject correction matters.

Dropping the accept/reject step turns the flow into a plain composition
of deterministic HMC maps.  At small step sizes that flow behaves fine,
but it is no longer target-preserving, and at large step sizes the
uncorrected leapfrog trajectories blow up: samples leave the support and
the density is undefined.  The corrected flow rejects exactly those
moves and stays finite at every step size.

Run:  python demos/corrected_vs_uncorrected.py
"""
import csv
import pathlib

import numpy as np

import mixirf as mx
from mixirf.estimators import tv_to_target
from mixirf.flows import uncorrected_flow_sample
from mixirf.targets import default_grid

HERE = pathlib.Path(__file__).parent
T, N, SEEDS = 200, 512, 8

target = mx.banana()
base = mx.fit_advi(target, seed=0)
grid = default_grid(target, nx=12, ny=12)

rows = []
print(f"banana, HMC flows of length T={T}, {SEEDS} seeds, {N} samples each")
for eps in (0.02, 0.1, 0.3):
    kernel = mx.hmc_kernel(target, eps=eps, k=50)
    ref = mx.AugmentedReference(base, kernel)
    for family in ("homogeneous", "uncorrected_homogeneous"):
        spec = mx.FlowSpec(family, kernel, ref, T)
        tvs, bad = [], 0
        for seed in range(SEEDS):
            rng = np.random.default_rng(seed)
            if family == "homogeneous":
                x = mx.flow_sample(spec, N, rng).x
            else:
                x = uncorrected_flow_sample(spec, N, rng).x
            if not np.all(np.isfinite(x)):
                bad += 1
            tvs.append(tv_to_target(x, target, grid))
        med = float(np.median(tvs))
        rows.append({"eps": eps, "family": family, "tv_median": med,
                     "nonfinite_runs": bad})
        print(f"  eps={eps:<5} {family:25s} TV median {med:.3f}  "
              f"non-finite runs {bad}/{SEEDS}")

print()
print("Non-finite samples count fully toward TV.  The corrected flow never")
print("produces one; at the largest step size every uncorrected run")
print("contains diverged trajectories, and its density is undefined there.")

with open(HERE / "corrected_vs_uncorrected.csv", "w", newline="") as fh:
    w = csv.DictWriter(fh, fieldnames=["eps", "family", "tv_median",
                                       "nonfinite_runs"])
    w.writeheader()
    w.writerows(rows)
