import csv
import json

import numpy as np
import pytest

from mixirf.cli import ConfigError, load_config, main, tune_step
import mixirf as mx


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def rows_of(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_config_parsing(tmp_path):
    p = write(tmp_path, "a.cfg", """
# comment
target = banana
eps = 0.1, 0.3   # a list
T = 200
out = x.csv
""")
    cfg = load_config(p)
    assert cfg["target"] == "banana"
    assert cfg["eps"] == [0.1, 0.3]
    assert cfg["T"] == 200
    assert len(cfg["_hash"]) == 12


def test_config_bad_line(tmp_path):
    p = write(tmp_path, "bad.cfg", "no equals sign here\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_missing_config_exits_2():
    assert main(["run", "metrics", "/nonexistent/path.cfg"]) == 2


def test_unknown_target_exits_2(tmp_path, capsys):
    p = write(tmp_path, "t.cfg", "target = nachos\n")
    assert main(["run", "fit-reference", p]) == 2
    assert "unknown target" in capsys.readouterr().err


def test_fit_reference_idempotent(tmp_path, capsys):
    out = tmp_path / "ref.json"
    p = write(tmp_path, "fit.cfg",
              f"target = banana\nref_steps = 200\nout = {out}\n")
    assert main(["run", "fit-reference", p]) == 0
    first = out.read_bytes()
    assert main(["run", "fit-reference", p]) == 0
    assert out.read_bytes() == first
    rec = json.loads(first)
    assert rec["target"] == "banana" and len(rec["mean"]) == 2


def test_metrics_csv_deterministic(tmp_path):
    out = tmp_path / "m.csv"
    p = write(tmp_path, "m.cfg", f"""
target = cross
kernel = rwmh
eps = 0.3
family = irf
T = 10
n_samples = 32
seeds = 0, 1
ref_steps = 200
out = {out}
""")
    assert main(["run", "metrics", p]) == 0
    first = out.read_bytes()
    assert main(["run", "metrics", p]) == 0
    assert out.read_bytes() == first
    rows = rows_of(out)
    assert rows[0] == ["target", "kernel", "family", "T", "metric", "value",
                      "version", "config_hash", "seed"]
    # one row per (seed, metric)
    assert len(rows) == 1 + 2 * 3
    metrics = {r[4] for r in rows[1:]}
    assert metrics == {"elbo", "log_z_is", "ess_per_sample"}


def test_tv_sweep_csv(tmp_path):
    out = tmp_path / "tv.csv"
    p = write(tmp_path, "tv.cfg", f"""
target = cross
kernel = rwmh
eps = 0.3
family = homogeneous, uncorrected_homogeneous
T = 1, 5
n_samples = 256
seeds = 0, 1
ref_steps = 200
grid_bins = 10
out = {out}
""")
    assert main(["run", "tv-sweep", p]) == 0
    rows = rows_of(out)
    assert len(rows) == 1 + 2 * 2
    for r in rows[1:]:
        assert 0.0 <= float(r[5]) <= 1.0  # tv_mean
        assert r[7] == "0"  # n_nan: nothing diverges at these settings


def test_stability_csv(tmp_path):
    out = tmp_path / "s.csv"
    p = write(tmp_path, "s.cfg", f"""
target = banana
T = 1, 5
n_starts = 4
ref_steps = 200
out = {out}
""")
    assert main(["run", "stability", p]) == 0
    rows = rows_of(out)
    kernels = {r[0] for r in rows[1:]}
    assert kernels == {"hmc", "uncorrected_hmc", "mala", "rwmh"}
    # rwmh/mala are stable at depth 5; hmc error growth from a weak
    # reference is the phenomenon the sweep measures, so only check
    # the numbers are recorded and finite-ness is accounted
    for r in rows[1:]:
        assert r[2] != ""
        if r[0] in ("rwmh", "mala"):
            assert float(r[2]) < 1e-6
            assert r[4] == "0"


def test_ensemble_sweep_csv(tmp_path):
    out = tmp_path / "e.csv"
    p = write(tmp_path, "e.cfg", f"""
target = cross
kernel = rwmh
eps = 0.3
T = 1, 5
M = 1, 3
fixed_M = 3
fixed_T = 5
n_samples = 256
seeds = 0
ref_steps = 200
grid_bins = 10
out = {out}
""")
    assert main(["run", "ensemble-sweep", p]) == 0
    rows = rows_of(out)
    modes = {(r[0]) for r in rows[1:]}
    assert modes == {"T_sweep", "M_sweep"}


def test_diagnostics_csv(tmp_path):
    out = tmp_path / "d.csv"
    p = write(tmp_path, "d.cfg", f"""
target = cross
kernel = rwmh
eps = 0.3
T = 200
ref_steps = 200
out = {out}
""")
    assert main(["run", "diagnostics", p]) == 0
    rows = rows_of(out)
    dynamics = {r[0] for r in rows[1:]}
    assert dynamics == {"inverse_irf", "backward_process", "homogeneous", "mcmc"}
    ess_rows = [r for r in rows[1:] if r[2] == "mcmc_ess"]
    assert all(0 < float(r[4]) <= 1 for r in ess_rows)


def test_tune_step_reproducible_and_calibrated():
    tg = mx.get_target("banana")
    a = tune_step(tg, "rwmh", seed=0)
    b = tune_step(tg, "rwmh", seed=0)
    assert a == b
    # acceptance at the returned eps must sit near the 0.8 goal
    kern = mx.rwmh_kernel(tg, eps=a)
    base = mx.fit_advi(tg, steps=1000, seed=0)
    ref = mx.AugmentedReference(base, kern)
    rng = np.random.default_rng(0)
    stream = mx.FrozenStream(0, 100, 2)
    s = ref.sample(50, rng)
    acc = 0.0
    for t in range(1, 101):
        s, tr = mx.irf_forward(kern, s, stream.param(t), return_trace=True)
        acc += tr.accepted.mean()
    assert 0.75 <= acc / 100 <= 0.85
