"""Reference distribution: a mean-field Gaussian fitted by stochastic
ELBO ascent, plus its augmentation to the full flow state space.

The augmented reference draws x from the fitted Gaussian, v from the
kernel's auxiliary conditional at x, and the uniform blocks from
Unif[0,1); its density is the product of those four factors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .irf import AugmentedState
from .kernels import InvolutiveKernel
from .numerics import normal_log_pdf
from .targets import Target

__all__ = ["MeanFieldGaussian", "AugmentedReference", "fit_advi"]


@dataclass(frozen=True)
class MeanFieldGaussian:
    mean: np.ndarray
    log_sd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "log_sd", np.asarray(self.log_sd, dtype=float))
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.log_sd))):
            raise ValueError("mean-field parameters must be finite")

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def sd(self) -> np.ndarray:
        return np.exp(self.log_sd)

    def sample(self, n: int, rng) -> np.ndarray:
        return self.mean + self.sd * rng.standard_normal((n, self.dim))

    def log_density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.sum(normal_log_pdf(x, self.mean, self.sd), axis=1)

    def to_dict(self, **meta) -> dict:
        return {"mean": self.mean.tolist(), "log_sd": self.log_sd.tolist(), **meta}

    @staticmethod
    def from_dict(d: dict) -> "MeanFieldGaussian":
        return MeanFieldGaussian(np.asarray(d["mean"]), np.asarray(d["log_sd"]))

    def to_json(self, path, **meta):
        with open(path, "w") as fh:
            json.dump(self.to_dict(**meta), fh, indent=1, sort_keys=True)

    @staticmethod
    def from_json(path) -> "MeanFieldGaussian":
        with open(path) as fh:
            return MeanFieldGaussian.from_dict(json.load(fh))


def fit_advi(target: Target, steps: int = 10_000, batch: int = 10,
             lr: float = 1e-3, seed: int = 0,
             init: MeanFieldGaussian | None = None) -> MeanFieldGaussian:
    """Fit a mean-field Gaussian by reparameterized stochastic ELBO ascent.

    Plain Adam (beta = (0.9, 0.999), eps = 1e-8) on (mean, log_sd),
    using the analytic target gradient; deterministic given the seed.
    Initialization is mean 0, log_sd 0 unless overridden.
    """
    d = target.dim
    mean = np.zeros(d) if init is None else init.mean.copy()
    log_sd = np.zeros(d) if init is None else init.log_sd.copy()
    rng = np.random.default_rng(seed)

    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    m = np.zeros(2 * d)
    v = np.zeros(2 * d)

    for step in range(steps):
        z = rng.standard_normal((batch, d))
        sd = np.exp(log_sd)
        x = mean + sd * z
        g = target.grad_log_gamma(x)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite target gradient at step {step}")
        # ELBO = E[log gamma(mean + sd z)] + sum(log_sd) + const
        grad_mean = g.mean(axis=0)
        grad_log_sd = (g * z * sd).mean(axis=0) + 1.0
        grad = np.concatenate([grad_mean, grad_log_sd])

        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad**2
        mhat = m / (1 - b1 ** (step + 1))
        vhat = v / (1 - b2 ** (step + 1))
        upd = lr * mhat / (np.sqrt(vhat) + adam_eps)
        mean = mean + upd[:d]
        log_sd = log_sd + upd[d:]

    return MeanFieldGaussian(mean, log_sd)


def elbo_value(target: Target, q: MeanFieldGaussian, n: int, rng) -> float:
    """Monte Carlo ELBO of the plain mean-field approximation."""
    x = q.sample(n, rng)
    return float(np.mean(target.log_gamma(x) - q.log_density(x)))


@dataclass(frozen=True)
class AugmentedReference:
    """Reference on the augmented space: q0(x) rho(v|x) x Unif x Unif."""

    base: MeanFieldGaussian
    kernel: InvolutiveKernel

    @property
    def dim(self) -> int:
        return self.base.dim

    def sample(self, n: int, rng) -> AugmentedState:
        x = self.base.sample(n, rng)
        v = self.kernel.aux.sample(x, rng)
        u_v = rng.uniform(size=(n, self.dim))
        u_a = rng.uniform(size=n)
        return AugmentedState(x, v, u_v, u_a)

    def log_density(self, s: AugmentedState) -> np.ndarray:
        out = self.base.log_density(s.x) + self.kernel.aux.log_pdf(s.v, s.x)
        in_cube = (
            np.all((s.u_v >= 0.0) & (s.u_v < 1.0), axis=1)
            & (s.u_a >= 0.0) & (s.u_a <= 1.0)
        )
        return np.where(in_cube, out, -np.inf)

    def log_ratio_vs_target(self, s: AugmentedState) -> np.ndarray:
        """log q0_bar(s) - log gamma_bar(s); the unknown normalizer of the
        target is deliberately not subtracted, so flow densities built
        from this ratio are exact up to + log Z."""
        den = self.kernel.log_gamma_aug(s.x, s.v)
        if np.any(np.isposinf(den)):
            raise FloatingPointError("target density is +inf at the given state")
        return self.log_density(s) - den
