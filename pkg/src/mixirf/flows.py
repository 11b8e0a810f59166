"""The flow families: seeded sampling and exact log-density for
homogeneous, IRF, backward-IRF, and ensemble-IRF mixed flows, plus the
uncorrected (never-rejecting) homogeneous flow used as a baseline.

Density convention: values are exact up to the additive constant log Z
of the target; all synthetic targets here are normalized (log Z = 0),
and every estimator that combines a flow density with the unnormalized
target is consistent regardless of Z.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .irf import (
    AugmentedState,
    FrozenStream,
    IrfParam,
    default_theta_star,
    inverse_orbit,
    inverse_orbit_ratios,
    irf_forward,
    irf_inverse,
)
from .kernels import InvolutiveKernel
from .numerics import log_mean_exp, mod1_shift, mod1_unshift
from .reference import AugmentedReference

__all__ = [
    "FlowSpec",
    "FlowDivergence",
    "flow_sample",
    "flow_log_density",
    "UncorrectedState",
    "uncorrected_flow_sample",
    "uncorrected_flow_log_density",
    "homogeneous_log_density_jacobian",
    "FAMILIES",
]

FAMILIES = ("homogeneous", "irf", "backward_irf", "ensemble_irf",
            "uncorrected_homogeneous")


class FlowDivergence(FloatingPointError):
    """Non-finite state encountered while evaluating a flow."""


@dataclass
class FlowSpec:
    family: str
    kernel: InvolutiveKernel
    reference: AugmentedReference
    T: int
    M: int = 1
    stream: Optional[FrozenStream] = None
    theta_star: Optional[IrfParam] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.family == "ensemble_irf":
            if self.M < 1:
                raise ValueError("ensemble flows need M >= 1")
            if self.T > 0 and (self.stream is None or self.stream.M < self.M):
                raise ValueError("ensemble flow needs a stream with M streams")
        elif self.family in ("irf", "backward_irf"):
            if self.T > 0 and (self.stream is None or self.stream.T < self.T):
                raise ValueError(f"{self.family} flow needs a stream of length >= T")
        else:
            if self.theta_star is None:
                self.theta_star = default_theta_star(self.kernel.dim)

    def log_gamma_bar(self, s: AugmentedState) -> np.ndarray:
        """Augmented target log-density (up to log Z), -inf off the cubes."""
        out = self.kernel.log_gamma_aug(s.x, s.v)
        in_cube = (
            np.all((s.u_v >= 0.0) & (s.u_v < 1.0), axis=1)
            & (s.u_a >= 0.0) & (s.u_a <= 1.0)
        )
        return np.where(in_cube, out, -np.inf)


def _masked_step(kernel, cur, theta, active):
    nxt = irf_forward(kernel, cur, theta)
    return nxt.select(active, cur)


def flow_sample(spec: FlowSpec, n: int, rng) -> AugmentedState:
    """Draw n iid samples: a uniform mixture index per draw, pushed
    through the frozen map sequence of the family."""
    s = spec.reference.sample(n, rng)
    if spec.T == 0:
        return s
    if spec.family == "ensemble_irf":
        k = rng.integers(1, spec.M + 1, size=n)
        tables = np.stack([spec.stream.table(m) for m in range(spec.M)])
        for t in range(1, spec.T + 1):
            rows = tables[k - 1, t - 1]  # (n, d + 1)
            s = irf_forward(spec.kernel, s, IrfParam(rows[:, :-1], rows[:, -1]))
        return s

    k = rng.integers(1, spec.T + 1, size=n)
    if spec.family in ("homogeneous", "irf"):
        for t in range(1, spec.T + 1):
            theta = spec.theta_star if spec.family == "homogeneous" \
                else spec.stream.param(t)
            s = _masked_step(spec.kernel, s, theta, k >= t)
    elif spec.family == "backward_irf":
        for t in range(spec.T, 0, -1):
            s = _masked_step(spec.kernel, s, spec.stream.param(t), k >= t)
    else:
        raise ValueError(f"flow_sample does not handle {spec.family!r}")
    return s


def flow_log_density(spec: FlowSpec, s: AugmentedState,
                     workers: Optional[int] = None) -> np.ndarray:
    """Exact log-density (up to + log Z of the target) of the flow at s."""
    if spec.T == 0:
        return spec.reference.log_density(s)
    ratio = spec.reference.log_ratio_vs_target
    if spec.family == "homogeneous":
        ratios = inverse_orbit_ratios(spec.kernel, ratio, s, spec.theta_star, spec.T)
    elif spec.family == "backward_irf":
        ratios = inverse_orbit_ratios(spec.kernel, ratio, s, spec.stream, spec.T)
    elif spec.family == "irf":
        from .irf import backward_process
        ratios = backward_process(spec.kernel, ratio, s, spec.stream, spec.T,
                                  workers=workers)
    elif spec.family == "ensemble_irf":
        # deterministic reduction in ascending stream order
        ratios = np.empty((spec.M, s.n))
        for m in range(spec.M):
            end = inverse_orbit(spec.kernel, s, spec.stream, 1, spec.T, m)
            ratios[m] = ratio(end)
    else:
        raise ValueError(f"flow_log_density does not handle {spec.family!r}")
    return spec.log_gamma_bar(s) + log_mean_exp(ratios, axis=0)


def homogeneous_log_density_jacobian(spec: FlowSpec, s: AugmentedState) -> np.ndarray:
    """Homogeneous flow density via explicit Jacobian accumulation.

    Evaluates the classic pushforward-mixture formula, tracking the
    forward Jacobian of every map application along the inverse orbit.
    Agrees with :func:`flow_log_density` because the map preserves the
    augmented target; used as a cross-check, not in production paths.
    """
    if spec.family != "homogeneous":
        raise ValueError("Jacobian-tracking density is defined for homogeneous flows")
    terms = np.empty((spec.T, s.n))
    cur = s
    cum_log_j = np.zeros(s.n)
    for t in range(spec.T):
        cur, trace = irf_inverse(spec.kernel, cur, spec.theta_star, return_trace=True)
        cum_log_j += trace.log_j_refresh + trace.log_j_branch
        terms[t] = spec.reference.log_density(cur) - cum_log_j
    return log_mean_exp(terms, axis=0)


# ---------------------------------------------------------------------------
# Uncorrected homogeneous flow (no accept/reject step; HMC maps only)

@dataclass
class UncorrectedState:
    """State (x, v, u_v) of the never-rejecting flow; no accept variable."""

    x: np.ndarray
    v: np.ndarray
    u_v: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        self.u_v = np.atleast_2d(np.asarray(self.u_v, dtype=float))

    @property
    def n(self):
        return self.x.shape[0]

    def select(self, mask, other):
        m = mask[:, None]
        return UncorrectedState(np.where(m, self.x, other.x),
                                np.where(m, self.v, other.v),
                                np.where(m, self.u_v, other.u_v))


def _unc_forward(kernel, s: UncorrectedState, theta: IrfParam) -> UncorrectedState:
    u_v = mod1_shift(s.u_v, theta.theta_v)
    u_v_out = kernel.aux.cdf(s.v, s.x)
    v_t = kernel.aux.quantile(u_v, s.x)
    with np.errstate(over="ignore", invalid="ignore"):
        x2, v2 = kernel.involution(s.x, v_t)
    return UncorrectedState(x2, v2, u_v_out)


def _unc_inverse(kernel, s: UncorrectedState, theta: IrfParam):
    """Inverse step plus the forward log-Jacobian at the pre-image."""
    with np.errstate(over="ignore", invalid="ignore"):
        x, v_t = kernel.involution(s.x, s.v)
        v = kernel.aux.quantile(s.u_v, x)
        u_v = kernel.aux.cdf(v_t, x)
        log_j = kernel.aux.log_pdf(v_t, x) - kernel.aux.log_pdf(v, x)
    return UncorrectedState(x, v, mod1_unshift(u_v, theta.theta_v)), log_j


def uncorrected_reference_sample(ref: AugmentedReference, n: int, rng) -> UncorrectedState:
    x = ref.base.sample(n, rng)
    v = ref.kernel.aux.sample(x, rng)
    return UncorrectedState(x, v, rng.uniform(size=(n, ref.dim)))


def uncorrected_reference_log_density(ref: AugmentedReference,
                                      s: UncorrectedState) -> np.ndarray:
    out = ref.base.log_density(s.x) + ref.kernel.aux.log_pdf(s.v, s.x)
    in_cube = np.all((s.u_v >= 0.0) & (s.u_v < 1.0), axis=1)
    return np.where(in_cube, out, -np.inf)


def uncorrected_flow_sample(spec: FlowSpec, n: int, rng) -> UncorrectedState:
    """Sample the uncorrected flow.  Divergent trajectories propagate as
    non-finite entries rather than raising, so sweeps can account for
    them per run."""
    if spec.family != "uncorrected_homogeneous":
        raise ValueError("spec.family must be 'uncorrected_homogeneous'")
    s = uncorrected_reference_sample(spec.reference, n, rng)
    if spec.T == 0:
        return s
    k = rng.integers(1, spec.T + 1, size=n)
    for t in range(1, spec.T + 1):
        nxt = _unc_forward(spec.kernel, s, spec.theta_star)
        s = nxt.select(k >= t, s)
    return s


def uncorrected_flow_log_density(spec: FlowSpec, s: UncorrectedState) -> np.ndarray:
    """Density of the uncorrected flow via explicit Jacobian products.

    The map is not measure-preserving for the target (the leapfrog
    contributes no volume change, but the CDF/quantile refresh does), so
    the Jacobian of every application is accumulated along the inverse
    orbit.  Raises :class:`FlowDivergence` on non-finite states.
    """
    if spec.family != "uncorrected_homogeneous":
        raise ValueError("spec.family must be 'uncorrected_homogeneous'")
    if spec.T == 0:
        return uncorrected_reference_log_density(spec.reference, s)
    terms = np.empty((spec.T, s.n))
    cur = s
    cum_log_j = np.zeros(s.n)
    for t in range(spec.T):
        cur, log_j = _unc_inverse(spec.kernel, cur, spec.theta_star)
        if not (np.all(np.isfinite(cur.x)) and np.all(np.isfinite(cur.v))):
            raise FlowDivergence(f"non-finite state at inverse step {t + 1}")
        cum_log_j += log_j
        terms[t] = uncorrected_reference_log_density(spec.reference, cur) - cum_log_j
    return log_mean_exp(terms, axis=0)
