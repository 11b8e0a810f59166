"""Involutive MCMC kernels: auxiliary conditional + involution + Jacobian.

Three concrete kernels are provided, matching the ones used throughout
the experiments: random-walk MH, MALA (cast as a swap-involution MH with
a Langevin proposal), and HMC (leapfrog + momentum flip).  All three have
diagonal Gaussian auxiliary conditionals, so CDF/quantile transforms act
coordinatewise.

All maps are vectorized over a leading batch axis: x, v are (n, d).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .numerics import normal_cdf, normal_log_pdf, normal_quantile
from .targets import Target

__all__ = [
    "AuxiliaryConditional",
    "Involution",
    "InvolutiveKernel",
    "rwmh_kernel",
    "mala_kernel",
    "hmc_kernel",
    "mcmc_step",
    "LeapfrogDivergence",
]

# quantile inputs are clamped into this open interval; mod-1 shifted
# uniforms can land on exactly 0.0, where the quantile is undefined
_P_LO = 1e-300
_P_HI = 1.0 - 1e-16


class LeapfrogDivergence(RuntimeError):
    """Non-finite gradient encountered inside a leapfrog trajectory."""

    def __init__(self, step_index: int):
        super().__init__(f"non-finite gradient at leapfrog step {step_index}")
        self.step_index = step_index


class AuxiliaryConditional:
    """Diagonal Gaussian conditional rho(v | x) with x-dependent moments."""

    def __init__(self, dim: int, moments=None):
        self.dim = dim
        # moments: x (n,d) -> (mean (n,d), sd (n,d) or scalars)
        self._moments = moments or (lambda x: (0.0, 1.0))

    def moments(self, x):
        return self._moments(np.asarray(x, dtype=float))

    def log_pdf(self, v, x):
        """Summed per-coordinate log-density, shape (n,)."""
        m, s = self.moments(x)
        return np.sum(normal_log_pdf(np.asarray(v, dtype=float), m, s), axis=-1)

    def cdf(self, v, x):
        # clamped away from {0, 1} so the uniform block stays inside
        # [0, 1) even when v is many sigmas out (saturated CDF)
        m, s = self.moments(x)
        out = normal_cdf((np.asarray(v, dtype=float) - m) / s)
        return np.clip(out, _P_LO, _P_HI)

    def quantile(self, p, x):
        """Conditional quantile; non-finite probabilities (divergent
        upstream states) pass through as NaN rather than raising."""
        m, s = self.moments(x)
        p = np.asarray(p, dtype=float)
        bad = ~np.isfinite(p)
        if bad.any():
            p = np.where(bad, 0.5, p)
        out = m + s * normal_quantile(np.clip(p, _P_LO, _P_HI))
        return np.where(bad, np.nan, out) if bad.any() else out

    def sample(self, x, rng):
        x = np.asarray(x, dtype=float)
        m, s = self.moments(x)
        return m + s * rng.standard_normal(x.shape)


@dataclass
class Involution:
    """Self-inverse map g on (x, v) with its log|Jacobian|."""

    map: callable  # (x, v) -> (x2, v2)
    log_abs_jacobian: callable  # (x, v) -> (n,)

    def __call__(self, x, v):
        return self.map(x, v)


@dataclass
class InvolutiveKernel:
    name: str
    target: Target
    aux: AuxiliaryConditional
    involution: Involution
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.target.dim

    def log_gamma_aug(self, x, v):
        """log of the augmented unnormalized density gamma(x) rho(v|x)."""
        return self.target.log_gamma(x) + self.aux.log_pdf(v, x)

    def propose(self, x, v):
        """Involution image plus the log MH ratio, batched.

        Non-finite augmented density at the proposal (overflowed states,
        NaN from a divergent trajectory) is treated as zero density, i.e.
        certain rejection; this is what makes the corrected kernels
        discard numerically divergent moves.
        """
        x2, v2 = self.involution(x, v)
        with np.errstate(over="ignore", invalid="ignore"):
            num = self.log_gamma_aug(x2, v2)
            den = self.log_gamma_aug(x, v)
            logj = self.involution.log_abs_jacobian(x, v)
        num = np.where(np.isfinite(num), num, -np.inf)
        log_r = num - den + logj
        # zero denominator: certain rejection, keeps the map total
        log_r = np.where(np.isfinite(den), log_r, -np.inf)
        return x2, v2, log_r


def rwmh_kernel(target: Target, eps: float = 0.3) -> InvolutiveKernel:
    """Random-walk MH: g(x, v) = (x + eps*v, -v), rho = N(0, I)."""
    if eps <= 0:
        raise ValueError("eps must be positive")

    def g(x, v):
        return x + eps * v, -v

    inv = Involution(g, lambda x, v: np.zeros(np.shape(x)[0]))
    return InvolutiveKernel("rwmh", target, AuxiliaryConditional(target.dim), inv,
                            {"eps": eps})


def mala_kernel(target: Target, eps: float = 0.25) -> InvolutiveKernel:
    """MALA as a swap-involution MH with Langevin proposal.

    rho(v | x) = N(x + eps^2/2 * grad log gamma(x), eps^2 I) and
    g swaps the state with the proposal, so log|J_g| = 0.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def moments(x):
        with np.errstate(over="ignore", invalid="ignore"):
            drift = x + 0.5 * eps**2 * target.grad_log_gamma(x)
        return drift, eps

    def g(x, v):
        return v.copy(), x.copy()

    inv = Involution(g, lambda x, v: np.zeros(np.shape(x)[0]))
    return InvolutiveKernel("mala", target, AuxiliaryConditional(target.dim, moments),
                            inv, {"eps": eps})


def leapfrog(target: Target, x, v, eps: float, k: int, check_finite: bool = False):
    """k leapfrog steps on the Hamiltonian -log gamma(x) + |v|^2/2."""
    x = np.array(x, dtype=float)
    v = np.array(v, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        grad = target.grad_log_gamma(x)
        for i in range(k):
            if check_finite and not np.all(np.isfinite(grad)):
                raise LeapfrogDivergence(i)
            vh = v + 0.5 * eps * grad
            x = x + eps * vh
            grad = target.grad_log_gamma(x)
            v = vh + 0.5 * eps * grad
        if check_finite and not np.all(np.isfinite(grad)):
            raise LeapfrogDivergence(k)
    return x, v


def hmc_kernel(target: Target, eps: float = 0.02, k: int = 50,
               check_finite: bool = False) -> InvolutiveKernel:
    """HMC: k leapfrog steps followed by a momentum sign flip.

    Identity mass matrix, so rho(v|x) = N(0, I).  The leapfrog map is
    symplectic and the flip is orthogonal, hence log|J_g| = 0.
    """
    if eps <= 0 or k < 1:
        raise ValueError("need eps > 0 and k >= 1")

    def g(x, v):
        x2, v2 = leapfrog(target, x, v, eps, k, check_finite=check_finite)
        return x2, -v2

    inv = Involution(g, lambda x, v: np.zeros(np.shape(x)[0]))
    return InvolutiveKernel("hmc", target, AuxiliaryConditional(target.dim), inv,
                            {"eps": eps, "k": k})


KERNEL_BUILDERS = {"rwmh": rwmh_kernel, "mala": mala_kernel, "hmc": hmc_kernel}


def get_kernel(name: str, target: Target, **params) -> InvolutiveKernel:
    try:
        return KERNEL_BUILDERS[name](target, **params)
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; known: {sorted(KERNEL_BUILDERS)}")


def mcmc_step(kernel: InvolutiveKernel, x, rng) -> Tuple[np.ndarray, np.ndarray]:
    """One involutive MCMC transition, batched.  Returns (x_new, accepted)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = kernel.aux.sample(x, rng)
    x2, _, log_r = kernel.propose(x, v)
    with np.errstate(divide="ignore"):
        log_u = np.log(rng.uniform(size=x.shape[0]))
    accepted = log_u < log_r
    return np.where(accepted[:, None], x2, x), accepted
