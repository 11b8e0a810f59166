"""Experiment harness: `mixirf run <subcommand> <config>`.

Configs are flat key=value text files (diffable provenance); every
subcommand is a pure function of (config, seeds) and emits UTF-8 CSV
with a header row, each data row carrying the package version, a hash of
the config file, and the seed that produced it.

Exit codes: 0 success, 2 config error, 3 numerical failure outside the
tolerated divergence accounting.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .estimators import (ess_per_sample, flow_log_weights, inversion_error_curve,
                         mcmc_ess, running_means, tv_to_target)
from .flows import (FlowSpec, flow_sample, uncorrected_flow_sample,
                    uncorrected_reference_sample, _unc_forward, _unc_inverse)
from .irf import FrozenStream, default_theta_star, irf_forward, IrfParam
from .kernels import KERNEL_BUILDERS, get_kernel
from .numerics import log_mean_exp
from .reference import AugmentedReference, MeanFieldGaussian, fit_advi
from .targets import SYNTHETIC_TARGETS, default_grid, get_target

__all__ = ["main", "ConfigError", "load_config"]


class ConfigError(ValueError):
    pass


def _parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return [_parse_value(p) for p in raw.split(",") if p.strip()]
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def load_config(path: str) -> dict:
    """Read a key=value config file; '#' starts a comment."""
    cfg = {}
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e}")
    cfg["_hash"] = hashlib.sha256(text.encode()).hexdigest()[:12]
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = line.split("=", 1)
        cfg[key.strip()] = _parse_value(raw)
    return cfg


def _as_list(v):
    return v if isinstance(v, list) else [v]


def _seeds(cfg) -> list:
    s = _as_list(cfg.get("seeds", list(range(int(cfg.get("n_seeds", 32))))))
    return [int(x) for x in s]


def _target(cfg):
    name = cfg.get("target", "banana")
    if name not in SYNTHETIC_TARGETS:
        raise ConfigError(f"unknown target {name!r}")
    return get_target(name)


def _kernel(cfg, target, eps=None):
    name = cfg.get("kernel", "hmc")
    if name not in KERNEL_BUILDERS:
        raise ConfigError(f"unknown kernel {name!r}")
    kw = {}
    if eps is not None or "eps" in cfg:
        kw["eps"] = float(eps if eps is not None else cfg["eps"])
    if name == "hmc" and "leapfrog" in cfg:
        kw["k"] = int(cfg["leapfrog"])
    return get_kernel(name, target, **kw)


def _reference(cfg, target):
    if "reference_file" in cfg:
        base = MeanFieldGaussian.from_json(cfg["reference_file"])
    else:
        base = fit_advi(target,
                        steps=int(cfg.get("ref_steps", 10_000)),
                        batch=int(cfg.get("ref_batch", 10)),
                        lr=float(cfg.get("ref_lr", 1e-3)),
                        seed=int(cfg.get("ref_seed", 0)))
    return base


def _n_workers() -> int:
    env = os.environ.get("MIXIRF_WORKERS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def _seed_map(fn, seeds):
    """Run fn(seed) for each seed (worker pool), results in seed order."""
    nw = min(_n_workers(), len(seeds))
    if nw <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=nw) as ex:
        return list(ex.map(fn, seeds))


def _write_csv(path, header, rows, cfg):
    rows = sorted(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(header) + ["version", "config_hash", "seed"])
        for row in rows:
            *vals, seed = row
            w.writerow(list(vals) + [__version__, cfg["_hash"], seed])
    return path


def _fmt(x) -> str:
    return f"{float(x):.10g}"


# ---------------------------------------------------------------------------
# subcommands

def cmd_fit_reference(cfg) -> int:
    target = _target(cfg)
    out = cfg.get("out", f"reference_{target.name}.json")
    base = _reference(cfg, target)
    base.to_json(out, target=target.name, seed=int(cfg.get("ref_seed", 0)),
                 version=__version__, config_hash=cfg["_hash"])
    print(out)
    return 0


_STABILITY_KERNELS = (
    ("hmc", {"eps": 0.02, "k": 50}),
    ("uncorrected_hmc", {"eps": 0.02, "k": 50}),
    ("mala", {"eps": 0.25}),
    ("rwmh", {"eps": 0.3}),
)


def _uncorrected_inversion_errors(kernel, base, stream, t_checks, n_starts, rng):
    s0 = uncorrected_reference_sample(
        AugmentedReference(base, kernel), n_starts, rng)
    ref = np.column_stack([s0.x, s0.v, s0.u_v])
    errs = np.empty((len(t_checks), n_starts))
    cur, t_done = s0, 0
    for i, t_stop in enumerate(sorted(t_checks)):
        for t in range(t_done + 1, t_stop + 1):
            row = stream.table(0)[t - 1]
            cur = _unc_forward(kernel, cur, IrfParam(row[:-1], row[-1]))
        t_done = t_stop
        back = cur
        for t in range(t_stop, 0, -1):
            row = stream.table(0)[t - 1]
            back, _ = _unc_inverse(kernel, back, IrfParam(row[:-1], row[-1]))
        diff = np.column_stack([back.x, back.v, back.u_v]) - ref
        e = np.linalg.norm(diff, axis=1)
        errs[i] = np.where(np.all(np.isfinite(diff), axis=1), e, np.inf)
    return errs


def cmd_stability(cfg) -> int:
    target = _target(cfg)
    n_starts = int(cfg.get("n_starts", 32))
    t_checks = [int(t) for t in _as_list(cfg.get("T", [1, 10, 30, 100, 300, 1000]))]
    base = _reference(cfg, target)
    seed = int(cfg.get("seed", 0))
    rows = []
    for name, params in _STABILITY_KERNELS:
        uncorrected = name.startswith("uncorrected_")
        kern = get_kernel(name.removeprefix("uncorrected_"), target, **params)
        stream = FrozenStream(seed, max(t_checks), target.dim)
        rng = np.random.default_rng(seed)
        if uncorrected:
            errs = _uncorrected_inversion_errors(kern, base, stream, t_checks,
                                                 n_starts, rng)
            tvals = np.asarray(sorted(t_checks))
        else:
            ref = AugmentedReference(base, kern)
            tvals, errs = inversion_error_curve(kern, ref, stream, t_checks,
                                                n_starts, rng)
        for tv_, row in zip(tvals, errs):
            finite = np.isfinite(row)
            rows.append((name, int(tv_),
                         _fmt(row[finite].mean()) if finite.any() else "inf",
                         _fmt(row[finite].std()) if finite.any() else "inf",
                         int((~finite).sum()), seed))
    out = cfg.get("out", "stability.csv")
    _write_csv(out, ("kernel", "T", "mean_err", "sd_err", "n_nonfinite"), rows, cfg)
    print(out)
    return 0


def cmd_tv_sweep(cfg) -> int:
    target = _target(cfg)
    families = [str(f) for f in _as_list(cfg.get("family", "homogeneous"))]
    eps_list = [float(e) for e in _as_list(cfg.get("eps", 0.02))]
    t_list = [int(t) for t in _as_list(cfg.get("T", [1, 10, 100, 200]))]
    n = int(cfg.get("n_samples", 512))
    bins = int(cfg.get("grid_bins", 12))
    seeds = _seeds(cfg)
    base = _reference(cfg, target)
    grid = default_grid(target, nx=bins, ny=bins)
    kname = cfg.get("kernel", "hmc")
    rows = []
    for eps in eps_list:
        kern = _kernel(dict(cfg, eps=eps), target, eps=eps)
        ref = AugmentedReference(base, kern)
        for family in families:
            for T in t_list:
                def one(seed, family=family, T=T, kern=kern, ref=ref):
                    rng = np.random.default_rng(seed)
                    stream = FrozenStream(seed, max(T, 1), target.dim,
                                          M=int(cfg.get("M", 1)))
                    spec = FlowSpec(family, kern, ref, T,
                                    M=int(cfg.get("M", 1)), stream=stream)
                    if family == "uncorrected_homogeneous":
                        x = uncorrected_flow_sample(spec, n, rng).x
                    else:
                        x = flow_sample(spec, n, rng).x
                    bad = not np.all(np.isfinite(x))
                    return tv_to_target(x, target, grid), bad
                res = _seed_map(one, seeds)
                tvs = np.array([r[0] for r in res])
                n_nan = sum(r[1] for r in res)
                rows.append((target.name, kname, family, _fmt(eps), T,
                             _fmt(tvs.mean()), _fmt(tvs.std()), n_nan,
                             ";".join(map(str, seeds))))
    out = cfg.get("out", "tv_sweep.csv")
    _write_csv(out, ("target", "kernel", "family", "eps", "T",
                     "tv_mean", "tv_sd", "n_nan"), rows, cfg)
    print(out)
    return 0


def cmd_metrics(cfg) -> int:
    target = _target(cfg)
    family = str(cfg.get("family", "irf"))
    T = int(cfg.get("T", 200))
    n = int(cfg.get("n_samples", 64))
    base = _reference(cfg, target)
    kern = _kernel(cfg, target)
    ref = AugmentedReference(base, kern)
    seeds = _seeds(cfg)

    def one(seed):
        stream = FrozenStream(seed, T, target.dim, M=int(cfg.get("M", 1)))
        spec = FlowSpec(family, kern, ref, T, M=int(cfg.get("M", 1)),
                        stream=stream)
        _, lw = flow_log_weights(spec, n, np.random.default_rng(seed))
        return {"elbo": float(np.mean(lw)),
                "log_z_is": float(log_mean_exp(lw)),
                "ess_per_sample": ess_per_sample(lw)}

    rows = []
    for seed, vals in zip(seeds, _seed_map(one, seeds)):
        for metric, v in vals.items():
            rows.append((target.name, kern.name, family, T, metric, _fmt(v), seed))
    out = cfg.get("out", "metrics.csv")
    _write_csv(out, ("target", "kernel", "family", "T", "metric", "value"),
               rows, cfg)
    print(out)
    return 0


def cmd_ensemble_sweep(cfg) -> int:
    target = _target(cfg)
    kern = _kernel(cfg, target, eps=float(cfg.get("eps", 0.3)))
    base = _reference(cfg, target)
    ref = AugmentedReference(base, kern)
    n = int(cfg.get("n_samples", 512))
    bins = int(cfg.get("grid_bins", 12))
    grid = default_grid(target, nx=bins, ny=bins)
    seeds = _seeds(cfg)
    t_list = [int(t) for t in _as_list(cfg.get("T", [1, 10, 100]))]
    m_list = [int(m) for m in _as_list(cfg.get("M", [1, 10, 30]))]
    fixed_m = int(cfg.get("fixed_M", 30))
    fixed_t = int(cfg.get("fixed_T", 100))
    jobs = [("T_sweep", t, fixed_m) for t in t_list] + \
           [("M_sweep", fixed_t, m) for m in m_list]
    rows = []
    for mode, T, M in jobs:
        def one(seed, T=T, M=M):
            stream = FrozenStream(seed, max(T, 1), target.dim, M=M)
            spec = FlowSpec("ensemble_irf", kern, ref, T, M=M, stream=stream)
            x = flow_sample(spec, n, np.random.default_rng(seed)).x
            return tv_to_target(x, target, grid)
        tvs = np.array(_seed_map(one, seeds))
        rows.append((mode, T, M, _fmt(tvs.mean()), _fmt(tvs.std()),
                     ";".join(map(str, seeds))))
    out = cfg.get("out", "ensemble_sweep.csv")
    _write_csv(out, ("mode", "T", "M", "tv_mean", "tv_sd"), rows, cfg)
    print(out)
    return 0


def cmd_diagnostics(cfg) -> int:
    target = _target(cfg)
    kern = _kernel(cfg, target, eps=float(cfg.get("eps", 0.3)))
    base = _reference(cfg, target)
    ref = AugmentedReference(base, kern)
    T = int(cfg.get("T", 1000))
    seed = int(cfg.get("seed", 0))
    stream = FrozenStream(seed, T, target.dim)
    rng = np.random.default_rng(seed)
    fns = {"x1": lambda tr: tr[:, 0], "x2": lambda tr: tr[:, 1]}
    traces = running_means(kern, ref, stream, default_theta_star(target.dim),
                           T, fns, rng)
    rows = []
    for dyn, per_fn in traces.items():
        for fname, tr in per_fn.items():
            # raw iterate values back out of the cumulative means
            csum = tr * np.arange(1, T + 1)
            raw = np.diff(csum, prepend=0.0)
            ess, _ = mcmc_ess(raw)
            rows.append((dyn, fname, "mcmc_ess", 0, _fmt(ess), seed))
            stride = max(1, T // int(cfg.get("trace_points", 200)))
            for t in range(stride - 1, T, stride):
                rows.append((dyn, fname, "running_mean", t + 1, _fmt(tr[t]), seed))
    out = cfg.get("out", "diagnostics.csv")
    _write_csv(out, ("dynamic", "test_fn", "kind", "t", "value"), rows, cfg)
    print(out)
    return 0


def tune_step(target, kernel_name, seed=0, target_accept=0.8,
              lo=0.001, hi=10.0, iters=5000, tol=0.02, max_probes=30):
    """Bisect the step size to hit a desired IRF acceptance rate.

    Acceptance is estimated from `iters` IRF iterations per probe (a
    batch of chains driven by a frozen stream).  If the acceptance rate
    is not monotone decreasing in the step size across probes, warns and
    returns the best probe seen.
    """
    n_chains = 50
    n_steps = max(1, iters // n_chains)

    def accept_rate(eps):
        kern = get_kernel(kernel_name, target, eps=eps)
        base = fit_advi(target, steps=1000, seed=seed)
        ref = AugmentedReference(base, kern)
        rng = np.random.default_rng(seed)
        stream = FrozenStream(seed, n_steps, target.dim)
        s = ref.sample(n_chains, rng)
        acc = 0.0
        for t in range(1, n_steps + 1):
            s, tr = irf_forward(kern, s, stream.param(t), return_trace=True)
            acc += tr.accepted.mean()
        return acc / n_steps

    probes = []  # (eps, acc)
    a_lo, a_hi = accept_rate(lo), accept_rate(hi)
    probes += [(lo, a_lo), (hi, a_hi)]
    if a_lo < target_accept or a_hi > target_accept:
        warnings.warn("acceptance rate not bracketing the target; "
                      "returning best probe")
        return min(probes, key=lambda p: abs(p[1] - target_accept))[0]
    for _ in range(max_probes):
        mid = float(np.sqrt(lo * hi))  # bisect on log scale
        a_mid = accept_rate(mid)
        probes.append((mid, a_mid))
        if abs(a_mid - target_accept) <= tol:
            return mid
        if a_mid > target_accept:
            lo, a_lo = mid, a_mid
        else:
            hi, a_hi = mid, a_mid
    by_eps = sorted(probes)
    accs = [a for _, a in by_eps]
    if any(a2 > a1 + 0.05 for a1, a2 in zip(accs, accs[1:])):
        warnings.warn("acceptance rate not monotone in step size; "
                      "returning best probe")
    return min(probes, key=lambda p: abs(p[1] - target_accept))[0]


def cmd_tune_step(cfg) -> int:
    target = _target(cfg)
    eps = tune_step(target, cfg.get("kernel", "rwmh"),
                    seed=int(cfg.get("seed", 0)),
                    target_accept=float(cfg.get("target_accept", 0.8)))
    out = cfg.get("out")
    if out:
        _write_csv(out, ("target", "kernel", "eps"),
                   [(target.name, cfg.get("kernel", "rwmh"), _fmt(eps),
                     int(cfg.get("seed", 0)))], cfg)
    print(_fmt(eps))
    return 0


_SUBCOMMANDS = {
    "fit-reference": cmd_fit_reference,
    "stability": cmd_stability,
    "tv-sweep": cmd_tv_sweep,
    "metrics": cmd_metrics,
    "ensemble-sweep": cmd_ensemble_sweep,
    "diagnostics": cmd_diagnostics,
    "tune-step": cmd_tune_step,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mixirf")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("subcommand", choices=sorted(_SUBCOMMANDS))
    run.add_argument("config")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _SUBCOMMANDS[args.subcommand](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
