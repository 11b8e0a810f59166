import numpy as np
import pytest

import mixirf as mx
from mixirf.reference import MeanFieldGaussian, elbo_value, fit_advi

from conftest import make_kernel


def test_advi_recovers_std_normal():
    tg = mx.std_normal(2)
    q = fit_advi(tg, steps=4000, seed=0)
    assert np.max(np.abs(q.mean)) < 0.05
    assert np.max(np.abs(q.sd - 1.0)) < 0.05


def test_advi_deterministic():
    tg = mx.banana()
    a = fit_advi(tg, steps=500, seed=3)
    b = fit_advi(tg, steps=500, seed=3)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.log_sd, b.log_sd)


def test_advi_improves_elbo(references):
    tg = mx.banana()
    rng = np.random.default_rng(0)
    init = MeanFieldGaussian(np.zeros(2), np.zeros(2))
    assert elbo_value(tg, references["banana"], 20_000, rng) > \
        elbo_value(tg, init, 20_000, rng) + 1.0


def test_mean_field_json_round_trip(tmp_path, references):
    q = references["funnel"]
    p = tmp_path / "ref.json"
    q.to_json(p, target="funnel")
    q2 = MeanFieldGaussian.from_json(p)
    np.testing.assert_array_equal(q.mean, q2.mean)
    np.testing.assert_array_equal(q.log_sd, q2.log_sd)


def test_mean_field_rejects_nonfinite():
    with pytest.raises(ValueError):
        MeanFieldGaussian(np.array([0.0, np.nan]), np.zeros(2))


def test_log_density_matches_sample_moments():
    q = MeanFieldGaussian(np.array([1.0, -2.0]), np.log([0.5, 2.0]))
    x = q.sample(200_000, np.random.default_rng(1))
    assert np.max(np.abs(x.mean(0) - q.mean)) < 0.02
    assert np.max(np.abs(x.std(0) - q.sd)) < 0.02
    # normalized: integrates to 1 on a grid
    g = np.linspace(-8, 8, 801)
    gx, gy = np.meshgrid(1 + g, -2 + 4 * g, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    mass = np.exp(q.log_density(pts)).sum() * (g[1] - g[0]) * 4 * (g[1] - g[0])
    assert mass == pytest.approx(1.0, abs=1e-3)


def test_augmented_reference_density(references, targets):
    tg = targets["banana"]
    kern = make_kernel("rwmh", tg)
    ref = mx.AugmentedReference(references["banana"], kern)
    rng = np.random.default_rng(2)
    s = ref.sample(100, rng)
    ld = ref.log_density(s)
    expect = ref.base.log_density(s.x) + kern.aux.log_pdf(s.v, s.x)
    np.testing.assert_allclose(ld, expect)
    # off the unit cube the density vanishes
    bad = mx.AugmentedState(s.x, s.v, s.u_v + 1.5, s.u_a)
    assert np.all(np.isneginf(ref.log_density(bad)))


def test_log_ratio_is_reference_minus_target(references, targets):
    tg = targets["cross"]
    kern = make_kernel("mala", tg)
    ref = mx.AugmentedReference(references["cross"], kern)
    s = ref.sample(50, np.random.default_rng(3))
    got = ref.log_ratio_vs_target(s)
    np.testing.assert_allclose(got, ref.log_density(s) - kern.log_gamma_aug(s.x, s.v))
