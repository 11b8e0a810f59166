import numpy as np
import pytest

import mixirf as mx
from mixirf.kernels import LeapfrogDivergence, leapfrog, mcmc_step

from conftest import make_kernel


@pytest.mark.parametrize("kind", ["rwmh", "mala", "hmc"])
@pytest.mark.parametrize("name", ["banana", "cross"])
def test_involution_is_self_inverse(kind, name, targets):
    tg = targets[name]
    kern = make_kernel(kind, tg)
    rng = np.random.default_rng(0)
    x = tg.exact_sampler(200, rng)
    v = kern.aux.sample(x, rng)
    x2, v2 = kern.involution(x, v)
    x3, v3 = kern.involution(x2, v2)
    assert np.max(np.abs(x3 - x)) < 1e-9
    assert np.max(np.abs(v3 - v)) < 1e-9


def test_leapfrog_single_step_oracle():
    # hand-worked single step on the standard normal, x=1, v=0, eps=0.1:
    # v_half = -0.05, x' = 0.995, v' = -0.09975
    tg = mx.std_normal(1)
    x, v = leapfrog(tg, np.array([[1.0]]), np.array([[0.0]]),
                    0.1, 1)
    assert x[0, 0] == pytest.approx(0.995, abs=1e-15)
    assert v[0, 0] == pytest.approx(-0.09975, abs=1e-15)


def test_leapfrog_energy_drift_small():
    tg = mx.std_normal(2)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((100, 2))
    v = rng.standard_normal((100, 2))

    def energy(x, v):
        return -tg.log_gamma(x) + 0.5 * np.sum(v**2, axis=1)

    x2, v2 = leapfrog(tg, x, v, 0.02, 50)
    # symplectic integrator: O(eps^2) energy error, no secular growth
    assert np.max(np.abs(energy(x2, v2) - energy(x, v))) < 2e-3
    x4, v4 = leapfrog(tg, x, v, 0.01, 100)
    assert np.max(np.abs(energy(x4, v4) - energy(x, v))) < 5e-4


def test_leapfrog_divergence_raises():
    tg = mx.funnel()

    def run():
        return leapfrog(tg, np.array([[-20.0, 5.0]]),
                        np.array([[0.0, 50.0]]), 5.0, 100, check_finite=True)

    with pytest.raises(LeapfrogDivergence):
        run()


def test_mala_auxiliary_moments():
    tg = mx.std_normal(2)
    kern = mx.mala_kernel(tg, eps=0.25)
    x = np.array([[1.0, -2.0]])
    mean, sd = kern.aux.moments(x)
    np.testing.assert_allclose(mean, x + 0.25**2 / 2 * tg.grad_log_gamma(x))
    np.testing.assert_allclose(sd, 0.25)


def test_aux_cdf_quantile_round_trip(targets):
    tg = targets["banana"]
    kern = make_kernel("mala", tg)
    rng = np.random.default_rng(2)
    x = tg.exact_sampler(500, rng)
    v = kern.aux.sample(x, rng)
    u = kern.aux.cdf(v, x)
    assert np.all((u > 0) & (u < 1))
    np.testing.assert_allclose(kern.aux.quantile(u, x), v, atol=1e-8)


def test_log_gamma_aug_factorizes(targets):
    tg = targets["funnel"]
    kern = make_kernel("rwmh", tg)
    rng = np.random.default_rng(3)
    x = tg.exact_sampler(50, rng)
    v = kern.aux.sample(x, rng)
    np.testing.assert_allclose(kern.log_gamma_aug(x, v),
                               tg.log_gamma(x) + kern.aux.log_pdf(v, x))


@pytest.mark.parametrize("kind", ["rwmh", "mala", "hmc"])
def test_mcmc_preserves_target_moments(kind, targets):
    # start from exact samples; one sweep of transitions must keep the
    # first two moments (stationarity)
    tg = targets["cross"]
    kern = make_kernel(kind, tg)
    rng = np.random.default_rng(4)
    x = tg.exact_sampler(20_000, rng)
    for _ in range(3):
        x, acc = mcmc_step(kern, x, rng)
    ref = tg.exact_sampler(200_000, np.random.default_rng(5))
    assert np.max(np.abs(x.mean(0) - ref.mean(0))) < 0.05
    assert np.max(np.abs(x.std(0) - ref.std(0))) < 0.05
    assert 0.05 < acc.mean() <= 1.0


def test_unknown_kernel(targets):
    with pytest.raises(ValueError):
        mx.get_kernel("gibbs", targets["banana"])


def test_certain_rejection_outside_support():
    # a proposal with -inf target density must never be accepted
    tg = mx.std_normal(1)
    lg = tg.log_gamma

    def bounded_lg(x):
        out = np.atleast_1d(lg(x))
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        return np.where(np.abs(x2[:, 0]) < 1.0, out, -np.inf)

    bounded = mx.Target("bounded", 1, bounded_lg, tg.grad_log_gamma,
                        tg.exact_sampler, 0.0)
    kern = mx.rwmh_kernel(bounded, eps=0.5)
    rng = np.random.default_rng(6)
    x = rng.uniform(-0.99, 0.99, size=(5000, 1))
    x2, _ = mcmc_step(kern, x, rng)
    assert np.all(np.abs(x2) < 1.0)
