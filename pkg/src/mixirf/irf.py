"""The augmented-state iterated-random-function map, its exact inverse,
frozen parameter streams, and orbit evaluation.

The map acts on states s = (x, v, u_v, u_a): the kernel's state and
auxiliary variable, a [0,1)^d block paired with v through the CDF /
quantile of rho(.|x), and a [0,1) scalar encoding the accept/reject
randomness.  Each application is a bijection that preserves the
augmented target gamma(x) rho(v|x) on its support.

All ratio and accept/reject arithmetic is carried in log space; the MH
ratio spans hundreds of orders of magnitude on funnel-like targets.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .kernels import InvolutiveKernel
from .numerics import mod1_shift, mod1_unshift

__all__ = [
    "AugmentedState",
    "IrfParam",
    "FrozenStream",
    "BranchTrace",
    "irf_forward",
    "irf_inverse",
    "forward_orbit",
    "inverse_orbit",
    "backward_process",
    "inverse_orbit_ratios",
    "default_theta_star",
]


@dataclass
class AugmentedState:
    """Batch of augmented states: x, v, u_v are (n, d); u_a is (n,)."""

    x: np.ndarray
    v: np.ndarray
    u_v: np.ndarray
    u_a: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        self.u_v = np.atleast_2d(np.asarray(self.u_v, dtype=float))
        self.u_a = np.atleast_1d(np.asarray(self.u_a, dtype=float))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def copy(self) -> "AugmentedState":
        return AugmentedState(self.x.copy(), self.v.copy(), self.u_v.copy(),
                              self.u_a.copy())

    def as_array(self) -> np.ndarray:
        """Flatten to (n, 3d + 1) for norms and finite-difference work."""
        return np.column_stack([self.x, self.v, self.u_v, self.u_a])

    @staticmethod
    def from_array(a: np.ndarray, dim: int) -> "AugmentedState":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return AugmentedState(a[:, :dim], a[:, dim:2 * dim],
                              a[:, 2 * dim:3 * dim], a[:, 3 * dim])

    def select(self, mask, other: "AugmentedState") -> "AugmentedState":
        """Rows from self where mask is True, else from other."""
        m = mask[:, None]
        return AugmentedState(
            np.where(m, self.x, other.x),
            np.where(m, self.v, other.v),
            np.where(m, self.u_v, other.u_v),
            np.where(mask, self.u_a, other.u_a),
        )


@dataclass(frozen=True)
class IrfParam:
    """Uniform shift parameters: theta_v in [0,1)^d, theta_a in [0,1).

    Either field may also carry a leading batch axis to give each row of
    a state batch its own parameters.
    """

    theta_v: np.ndarray
    theta_a: Union[float, np.ndarray]


@dataclass
class BranchTrace:
    """Per-step accept flags and log MH ratios (diagnostics only)."""

    accepted: np.ndarray
    log_r: np.ndarray
    # forward log-Jacobian pieces at the pre-image, for Jacobian-tracking
    # density checks: refresh term log rho(v_tilde|x) - log rho(v|x) and
    # branch term log gamma_aug(post) - log gamma_aug(pre) (0 on reject)
    log_j_refresh: Optional[np.ndarray] = None
    log_j_branch: Optional[np.ndarray] = None


# experiments fix the homogeneous-flow shifts to these mod-1 constants
THETA_V_STAR = float(np.pi / 8 % 1.0)
THETA_A_STAR = float(np.pi / 7 % 1.0)


def default_theta_star(dim: int) -> IrfParam:
    return IrfParam(np.full(dim, THETA_V_STAR), THETA_A_STAR)


class FrozenStream:
    """Seeded, immutable table of per-step parameters theta_t^(m).

    Parameters are re-derived from (seed, t, m) on demand and cached per
    stream; identical inputs always yield identical tables.  Serializes
    as (seed, T, M) only.
    """

    def __init__(self, seed: int, T: int, dim: int, M: int = 1):
        if T < 0 or M < 1:
            raise ValueError("need T >= 0 and M >= 1")
        self.seed = int(seed)
        self.T = int(T)
        self.M = int(M)
        self.dim = int(dim)
        self._tables: dict[int, np.ndarray] = {}

    def table(self, m: int = 0) -> np.ndarray:
        """(T, dim + 1) uniforms for stream m: columns [theta_v, theta_a]."""
        if not 0 <= m < self.M:
            raise IndexError(f"stream index {m} out of range [0, {self.M})")
        if m not in self._tables:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, m]))
            self._tables[m] = rng.uniform(size=(self.T, self.dim + 1))
        return self._tables[m]

    def param(self, t: int, m: int = 0) -> IrfParam:
        """Parameter theta_t (1-based t, matching the flow-length index)."""
        if not 1 <= t <= self.T:
            raise IndexError(f"step index {t} out of range [1, {self.T}]")
        row = self.table(m)[t - 1]
        return IrfParam(row[:-1], float(row[-1]))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "T": self.T, "M": self.M, "dim": self.dim}

    @staticmethod
    def from_dict(d: dict) -> "FrozenStream":
        return FrozenStream(d["seed"], d["T"], d["dim"], d["M"])


def _check_finite(arrs, tag: str):
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite intermediate at {tag}")


def irf_forward(kernel: InvolutiveKernel, s: AugmentedState, theta: IrfParam,
                return_trace: bool = False):
    """One forward application of the measure-preserving map.

    Steps: mod-1 shift of (u_v, u_a); CDF/quantile refresh pairing v with
    u_v; involution proposal with log MH ratio; accept (rescaling u_a by
    the ratio) or reject (keeping the pre-involution state).  Ties
    u_a = r resolve as accept so forward and inverse agree.
    """
    u_v = mod1_shift(s.u_v, theta.theta_v)
    u_a = mod1_shift(s.u_a, theta.theta_a)

    u_v_out = kernel.aux.cdf(s.v, s.x)
    v_t = kernel.aux.quantile(u_v, s.x)
    _check_finite([v_t], "quantile refresh")

    x2, v2, log_r = kernel.propose(s.x, v_t)
    if np.any(np.isnan(log_r)):
        raise FloatingPointError("non-finite intermediate at MH ratio")

    with np.errstate(divide="ignore"):
        log_u_a = np.log(u_a)
    accept = log_u_a <= log_r
    with np.errstate(invalid="ignore", over="ignore"):
        u_a_acc = np.exp(log_u_a - log_r)

    out = AugmentedState(
        np.where(accept[:, None], x2, s.x),
        np.where(accept[:, None], v2, v_t),
        u_v_out,
        np.where(accept, u_a_acc, u_a),
    )
    if return_trace:
        return out, BranchTrace(accept, log_r)
    return out


def irf_inverse(kernel: InvolutiveKernel, s_out: AugmentedState, theta: IrfParam,
                return_trace: bool = False):
    """Exact inverse of :func:`irf_forward`.

    The accept/reject branch is inferred from the output alone: the
    recomputed MH ratio at the output equals r if the forward pass
    accepted and 1/r if it rejected, so u_a * r_tilde <= 1 identifies
    the acceptance branch.
    """
    gx, gv = kernel.involution(s_out.x, s_out.v)
    with np.errstate(over="ignore", invalid="ignore"):
        num = kernel.log_gamma_aug(s_out.x, s_out.v)
        den = kernel.log_gamma_aug(gx, gv)
        logj = kernel.involution.log_abs_jacobian(gx, gv)
    if not np.all(np.isfinite(num)):
        raise FloatingPointError("non-finite density at inverse input")
    den = np.where(np.isfinite(den), den, -np.inf)
    log_rt = num - den + logj

    with np.errstate(divide="ignore"):
        log_u_cand = np.log(s_out.u_a) + log_rt
    accepted = log_u_cand <= 0.0  # tie resolves as accept, matching forward

    x = np.where(accepted[:, None], gx, s_out.x)
    v_t = np.where(accepted[:, None], gv, s_out.v)
    with np.errstate(invalid="ignore", over="ignore"):
        u_a = np.where(accepted, np.exp(log_u_cand), s_out.u_a)

    v = kernel.aux.quantile(s_out.u_v, x)
    _check_finite([v], "inverse quantile")
    u_v = kernel.aux.cdf(v_t, x)

    out = AugmentedState(x, v, mod1_unshift(u_v, theta.theta_v),
                         mod1_unshift(u_a, theta.theta_a))
    if return_trace:
        # forward-map Jacobian pieces, evaluated at the recovered
        # pre-image: refresh = log rho(v|x) - log rho(v_tilde|x), accept
        # branch = log gamma_bar(pre) - log gamma_bar(post); together
        # they telescope to log gamma_bar(pre) - log gamma_bar(post)
        # over the whole step, the measure-preservation identity
        log_j_refresh = kernel.aux.log_pdf(v, x) - kernel.aux.log_pdf(v_t, x)
        log_j_branch = np.where(accepted, den - num, 0.0)
        return out, BranchTrace(accepted, log_rt, log_j_refresh, log_j_branch)
    return out


def _theta_at(stream_or_theta, t: int, m: int = 0) -> IrfParam:
    if isinstance(stream_or_theta, FrozenStream):
        return stream_or_theta.param(t, m)
    return stream_or_theta


def forward_orbit(kernel, s: AugmentedState, stream_or_theta, t_from: int,
                  t_to: int, m: int = 0) -> AugmentedState:
    """Compose irf_forward with theta_{t_from}, ..., theta_{t_to} in order."""
    if t_from < 1 or t_to < t_from - 1:
        raise ValueError("need 1 <= t_from <= t_to")
    out = s
    for t in range(t_from, t_to + 1):
        out = irf_forward(kernel, out, _theta_at(stream_or_theta, t, m))
    return out


def inverse_orbit(kernel, s: AugmentedState, stream_or_theta, t_from: int,
                  t_to: int, m: int = 0) -> AugmentedState:
    """Compose irf_inverse with theta_{t_to}, theta_{t_to - 1}, ..., theta_{t_from}."""
    out = s
    for t in range(t_to, t_from - 1, -1):
        out = irf_inverse(kernel, out, _theta_at(stream_or_theta, t, m))
    return out


def _n_workers(workers: Optional[int]) -> int:
    if workers is not None:
        return max(1, workers)
    env = os.environ.get("MIXIRF_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def backward_process(kernel, log_ratio_fn, s: AugmentedState, stream: FrozenStream,
                     T: int, m: int = 0, workers: Optional[int] = None) -> np.ndarray:
    """log-ratios along the backward process, shape (T, n).

    Entry t-1 is log_ratio_fn evaluated at
    f^-1_{theta_1} o ... o f^-1_{theta_t}(s).  The per-t computations
    share no state, so they may run concurrently; the result is
    identical to serial evaluation (tasks are independent and gathered
    in index order).  Serial cost is quadratic in T.
    """
    if stream.T < T:
        raise ValueError("stream shorter than requested T")

    nw = _n_workers(workers)
    if nw > 1:
        def one(t):
            return log_ratio_fn(inverse_orbit(kernel, s, stream, 1, t, m))

        with ThreadPoolExecutor(max_workers=nw) as ex:
            return np.asarray(list(ex.map(one, range(1, T + 1))))

    # Single-process path: sweep all T orbits at once.  The orbit ending
    # at t applies theta_{t - j + 1} on sweep j and finishes on sweep t,
    # so blocks are stacked in ascending t and one block retires per
    # sweep.  Work is identical to the per-t loop (quadratic in T); only
    # the numpy batches are larger.
    n = s.n
    table = stream.table(m)
    arr = np.repeat(s.as_array()[None, :, :], T, axis=0)  # (T, n, 3d+1)
    rows = np.empty((T, n))
    for j in range(1, T + 1):
        nblk = T - j + 1
        cur = AugmentedState.from_array(arr.reshape(nblk * n, -1), s.dim)
        th = table[np.repeat(np.arange(nblk), n)]  # row for block t is t-j
        cur = irf_inverse(kernel, cur, IrfParam(th[:, :-1], th[:, -1]))
        arr = cur.as_array().reshape(nblk, n, -1)
        rows[j - 1] = log_ratio_fn(AugmentedState.from_array(arr[0], s.dim))
        arr = arr[1:]
    return rows


def inverse_orbit_ratios(kernel, log_ratio_fn, s: AugmentedState, stream_or_theta,
                         T: int, m: int = 0) -> np.ndarray:
    """log-ratios along the sequential inverse orbit, shape (T, n).

    Entry t-1 is log_ratio_fn at f^-1_{theta_t} o ... o f^-1_{theta_1}(s)
    (or at f^-t(s) when a fixed parameter is supplied).  O(T) total.
    """
    rows = np.empty((T, s.n))
    cur = s
    for t in range(1, T + 1):
        cur = irf_inverse(kernel, cur, _theta_at(stream_or_theta, t, m))
        rows[t - 1] = log_ratio_fn(cur)
    return rows
