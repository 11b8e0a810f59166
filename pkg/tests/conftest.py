import pytest

import mixirf as mx

TARGET_NAMES = ["banana", "funnel", "cross", "warped_gaussian"]
KERNEL_SETTINGS = {
    "rwmh": {"eps": 0.3},
    "mala": {"eps": 0.25},
    "hmc": {"eps": 0.02, "k": 50},
}


@pytest.fixture(scope="session")
def targets():
    return {name: mx.get_target(name) for name in TARGET_NAMES}


@pytest.fixture(scope="session")
def references(targets):
    """Fitted mean-field bases, one ADVI run per target (seed 0)."""
    return {name: mx.fit_advi(tg, seed=0) for name, tg in targets.items()}


def make_kernel(kind, target):
    return mx.get_kernel(kind, target, **KERNEL_SETTINGS[kind])


def typical_state(target, kernel, n, rng):
    """Augmented states drawn from the target itself (x exact, v ~ rho)."""
    x = target.exact_sampler(n, rng)
    v = kernel.aux.sample(x, rng)
    u_v = rng.uniform(size=(n, target.dim))
    u_a = rng.uniform(size=n)
    return mx.AugmentedState(x, v, u_v, u_a)


def random_theta(dim, rng):
    return mx.IrfParam(rng.uniform(size=dim), float(rng.uniform()))
