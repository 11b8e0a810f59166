"""Target distributions: the abstraction plus four synthetic 2-D benchmarks.

All four synthetic targets are normalized (log Z = 0), have hand-derived
gradients, and come with exact samplers (they are all transforms or
mixtures of Gaussians), which makes strong statistical checks possible
without any MCMC ground truth.

Conventions: ``log_gamma`` accepts an (n, d) batch and returns (n,);
``grad_log_gamma`` returns (n, d).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .numerics import log_sum_exp

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Target:
    """Unnormalized target density with gradient and optional exact sampler."""

    name: str
    dim: int
    log_gamma: Callable[[np.ndarray], np.ndarray]
    grad_log_gamma: Callable[[np.ndarray], np.ndarray]
    exact_sampler: Optional[Callable[[int, np.random.Generator], np.ndarray]] = None
    log_z: Optional[float] = None
    # optional exact cell-mass routine (x_edges, y_edges) -> (nx, ny);
    # used instead of density quadrature when histogram bins are coarse
    cell_prob: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class Grid2D:
    """Regular evaluation grid for quadrature and histogram-based TV."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    nx: int = 400
    ny: int = 400

    @property
    def cell_area(self) -> float:
        return (self.x_hi - self.x_lo) / self.nx * (self.y_hi - self.y_lo) / self.ny

    @property
    def x_edges(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx + 1)

    @property
    def y_edges(self) -> np.ndarray:
        return np.linspace(self.y_lo, self.y_hi, self.ny + 1)

    def centers(self) -> np.ndarray:
        """All cell centers as an (nx*ny, 2) array."""
        xc = 0.5 * (self.x_edges[:-1] + self.x_edges[1:])
        yc = 0.5 * (self.y_edges[:-1] + self.y_edges[1:])
        gx, gy = np.meshgrid(xc, yc, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])


def _conditional_cell_prob(x1_log_pdf, mean_fn, sd_fn, sub: int = 32):
    """Exact-in-x2 cell masses for targets of the form
    x1 ~ marginal, x2 | x1 ~ N(mean(x1), sd(x1)^2).

    Integrates the x1 marginal by midpoint subdivision and the x2
    conditional by CDF differences, which stays accurate even when the
    conditional is far narrower than a grid cell (e.g. the funnel neck).
    """
    from .numerics import normal_cdf

    def cell_prob(x_edges, y_edges):
        x_edges = np.asarray(x_edges, dtype=float)
        y_edges = np.asarray(y_edges, dtype=float)
        nx = x_edges.size - 1
        w = np.diff(x_edges) / sub
        nodes = (x_edges[:-1, None] + (np.arange(sub)[None, :] + 0.5) * w[:, None]).ravel()
        weight = np.exp(x1_log_pdf(nodes)) * np.repeat(w, sub)
        m = np.broadcast_to(mean_fn(nodes), nodes.shape)
        s = np.broadcast_to(sd_fn(nodes), nodes.shape)
        cdf = normal_cdf((y_edges[None, :] - m[:, None]) / s[:, None])
        mass = cdf[:, 1:] - cdf[:, :-1]
        out = (weight[:, None] * mass).reshape(nx, sub, y_edges.size - 1).sum(axis=1)
        return out / out.sum()

    return cell_prob


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    return (x[None, :] if squeeze else x), squeeze


def _norm_logpdf(x, var):
    return -0.5 * x * x / var - 0.5 * (_LOG_2PI + np.log(var))


def banana(b: float = 0.1) -> Target:
    """Push of N(0, diag(100, 1)) through (y1, y2 + b*y1^2 - 100b).

    The warp is unit-triangular, so the density is the base Gaussian
    evaluated at the unwarped point.
    """

    def log_gamma(x):
        x, sq = _as_batch(x)
        y2 = x[:, 1] - b * x[:, 0] ** 2 + 100.0 * b
        out = _norm_logpdf(x[:, 0], 100.0) + _norm_logpdf(y2, 1.0)
        return out[0] if sq else out

    def grad_log_gamma(x):
        x, sq = _as_batch(x)
        y2 = x[:, 1] - b * x[:, 0] ** 2 + 100.0 * b
        g = np.empty_like(x)
        g[:, 0] = -x[:, 0] / 100.0 + 2.0 * b * x[:, 0] * y2
        g[:, 1] = -y2
        return g[0] if sq else g

    def exact_sampler(n, rng):
        y = rng.standard_normal((n, 2)) * np.array([10.0, 1.0])
        return np.column_stack([y[:, 0], y[:, 1] + b * y[:, 0] ** 2 - 100.0 * b])

    cell_prob = _conditional_cell_prob(
        lambda x1: _norm_logpdf(x1, 100.0),
        lambda x1: b * x1**2 - 100.0 * b,
        lambda x1: 1.0,
    )
    return Target("banana", 2, log_gamma, grad_log_gamma, exact_sampler,
                  log_z=0.0, cell_prob=cell_prob)


def funnel(sigma2: float = 36.0) -> Target:
    """Funnel: x1 ~ N(0, sigma2), x2 | x1 ~ N(0, exp(x1/2)).

    exp(x1/2) is read as the conditional *variance*, matching the
    N(mean, variance) convention used for the x1 factor.
    """

    def log_gamma(x):
        x, sq = _as_batch(x)
        v = np.exp(x[:, 0] / 2.0)
        out = _norm_logpdf(x[:, 0], sigma2) + (
            -0.5 * x[:, 1] ** 2 / v - 0.5 * (_LOG_2PI + x[:, 0] / 2.0)
        )
        return out[0] if sq else out

    def grad_log_gamma(x):
        x, sq = _as_batch(x)
        ev = np.exp(-x[:, 0] / 2.0)
        g = np.empty_like(x)
        g[:, 0] = -x[:, 0] / sigma2 + 0.25 * x[:, 1] ** 2 * ev - 0.25
        g[:, 1] = -x[:, 1] * ev
        return g[0] if sq else g

    def exact_sampler(n, rng):
        x1 = rng.standard_normal(n) * np.sqrt(sigma2)
        x2 = rng.standard_normal(n) * np.exp(x1 / 4.0)
        return np.column_stack([x1, x2])

    cell_prob = _conditional_cell_prob(
        lambda x1: _norm_logpdf(x1, sigma2),
        lambda x1: 0.0,
        lambda x1: np.exp(x1 / 4.0),
    )
    return Target("funnel", 2, log_gamma, grad_log_gamma, exact_sampler,
                  log_z=0.0, cell_prob=cell_prob)


_CROSS_MEANS = np.array([[0.0, 2.0], [-2.0, 0.0], [2.0, 0.0], [0.0, -2.0]])
_CROSS_VARS = np.array(
    [[0.15**2, 1.0], [1.0, 0.15**2], [1.0, 0.15**2], [0.15**2, 1.0]]
)


_CROSS_LOGNORM = -0.5 * np.sum(_LOG_2PI + np.log(_CROSS_VARS), axis=1)  # (4,)


def cross() -> Target:
    """Equal-weight 4-component Gaussian mixture shaped like a cross."""

    def _component_logpdfs(x):
        # (n, 4) log-densities and the (n, 4, 2) deviations
        diff = x[:, None, :] - _CROSS_MEANS
        lp = -0.5 * np.einsum("nkd,kd->nk", diff * diff, 1.0 / _CROSS_VARS) \
            + _CROSS_LOGNORM
        return lp, diff

    def log_gamma(x):
        x, sq = _as_batch(x)
        lp, _ = _component_logpdfs(x)
        out = log_sum_exp(lp, axis=1) - np.log(4.0)
        return out[0] if sq else out

    def grad_log_gamma(x):
        # hot path (called once per leapfrog substep): manual softmax,
        # no scipy round trips
        x, sq = _as_batch(x)
        lp, diff = _component_logpdfs(x)
        w = np.exp(lp - lp.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        g = -np.einsum("nk,nkd->nd", w, diff / _CROSS_VARS)
        return g[0] if sq else g

    def exact_sampler(n, rng):
        comp = rng.integers(0, 4, size=n)
        z = rng.standard_normal((n, 2))
        return _CROSS_MEANS[comp] + z * np.sqrt(_CROSS_VARS[comp])

    def cell_prob(x_edges, y_edges):
        from .numerics import normal_cdf
        out = 0.0
        for mu, var in zip(_CROSS_MEANS, _CROSS_VARS):
            px = np.diff(normal_cdf((np.asarray(x_edges) - mu[0]) / np.sqrt(var[0])))
            py = np.diff(normal_cdf((np.asarray(y_edges) - mu[1]) / np.sqrt(var[1])))
            out = out + 0.25 * np.outer(px, py)
        return out / out.sum()

    return Target("cross", 2, log_gamma, grad_log_gamma, exact_sampler,
                  log_z=0.0, cell_prob=cell_prob)


def _twist(y, sign=-1.0):
    """Rotate each point by sign*|y|/2 radians; an isometry in radius."""
    r = np.hypot(y[:, 0], y[:, 1])
    a = sign * 0.5 * r
    c, s = np.cos(a), np.sin(a)
    return np.column_stack([c * y[:, 0] - s * y[:, 1], s * y[:, 0] + c * y[:, 1]])


def warped_gaussian() -> Target:
    """Push of N(0, diag(1, 0.12^2)) through a radius-dependent rotation.

    The twist preserves the polar area element, so its Jacobian is 1 and
    the density is the base Gaussian at the untwisted point.
    """
    vars_ = np.array([1.0, 0.12**2])

    def log_gamma(x):
        x, sq = _as_batch(x)
        y = _twist(x, sign=+1.0)  # inverse twist
        out = np.sum(-0.5 * y**2 / vars_ - 0.5 * (_LOG_2PI + np.log(vars_)), axis=1)
        return out[0] if sq else out

    def grad_log_gamma(x):
        x, sq = _as_batch(x)
        r = np.hypot(x[:, 0], x[:, 1])
        a = 0.5 * r
        c, s = np.cos(a), np.sin(a)
        y1 = c * x[:, 0] - s * x[:, 1]
        y2 = s * x[:, 0] + c * x[:, 1]
        # dy/dx = R(a) + R'(a) x (x/(2r))^T, with R'(a)x = (-y2, y1)
        gy1 = -y1 / vars_[0]
        gy2 = -y2 / vars_[1]
        with np.errstate(invalid="ignore", divide="ignore"):
            hx = np.where(r > 0, x[:, 0] / (2.0 * r), 0.0)
            hy = np.where(r > 0, x[:, 1] / (2.0 * r), 0.0)
        g = np.empty_like(x)
        g[:, 0] = gy1 * (c - y2 * hx) + gy2 * (s + y1 * hx)
        g[:, 1] = gy1 * (-s - y2 * hy) + gy2 * (c + y1 * hy)
        return g[0] if sq else g

    def exact_sampler(n, rng):
        y = rng.standard_normal((n, 2)) * np.sqrt(vars_)
        return _twist(y, sign=-1.0)

    return Target("warped_gaussian", 2, log_gamma, grad_log_gamma, exact_sampler, log_z=0.0)


def std_normal(dim: int = 2) -> Target:
    """Standard normal test target (normalized, log Z = 0)."""

    def log_gamma(x):
        x, sq = _as_batch(x)
        out = np.sum(-0.5 * x**2 - 0.5 * _LOG_2PI, axis=1)
        return out[0] if sq else out

    def grad_log_gamma(x):
        return -np.asarray(x, dtype=float)

    def exact_sampler(n, rng):
        return rng.standard_normal((n, dim))

    return Target("std_normal", dim, log_gamma, grad_log_gamma, exact_sampler, log_z=0.0)


SYNTHETIC_TARGETS = {
    "banana": banana,
    "funnel": funnel,
    "cross": cross,
    "warped_gaussian": warped_gaussian,
    "std_normal": std_normal,
}


def get_target(name: str) -> Target:
    try:
        return SYNTHETIC_TARGETS[name]()
    except KeyError:
        raise ValueError(f"unknown target {name!r}; known: {sorted(SYNTHETIC_TARGETS)}")


def default_grid(target: Target, rng=None, n_probe: int = 200_000, pad: float = 0.0,
                 nx: int = 400, ny: int = 400) -> Grid2D:
    """Quantile-box grid covering essentially all target mass.

    Uses the exact sampler to find the [q0.001, q0.999] box, then pads it
    generously so the quadrature tail bound holds.
    """
    if target.exact_sampler is None:
        raise ValueError("default_grid needs an exact sampler")
    rng = np.random.default_rng(0) if rng is None else rng
    s = target.exact_sampler(n_probe, rng)
    lo = np.quantile(s, 0.0005, axis=0)
    hi = np.quantile(s, 0.9995, axis=0)
    span = hi - lo
    lo = lo - 0.35 * span - pad
    hi = hi + 0.35 * span + pad
    return Grid2D(lo[0], hi[0], lo[1], hi[1], nx, ny)


def quadrature_log_norm(target: Target, grid: Grid2D) -> float:
    """log of the Riemann sum of exp(log_gamma) over the grid."""
    if target.dim != 2:
        raise ValueError("quadrature_log_norm only supports dim = 2")
    lg = target.log_gamma(grid.centers())
    return float(log_sum_exp(lg) + np.log(grid.cell_area))


def grid_probabilities(target: Target, grid: Grid2D, refine: int = 1) -> np.ndarray:
    """Normalized cell probabilities of the target on the grid, shape (nx, ny).

    refine > 1 evaluates the density on a refine-times-finer mesh and sums
    into the coarse cells, so coarse grids stay accurate on curved targets.
    """
    if refine < 1:
        raise ValueError("refine must be >= 1")
    if target.cell_prob is not None:
        return target.cell_prob(grid.x_edges, grid.y_edges)
    fine = Grid2D(grid.x_lo, grid.x_hi, grid.y_lo, grid.y_hi,
                  grid.nx * refine, grid.ny * refine)
    lg = target.log_gamma(fine.centers()).reshape(fine.nx, fine.ny)
    p = np.exp(lg - log_sum_exp(lg))
    if refine == 1:
        return p
    return p.reshape(grid.nx, refine, grid.ny, refine).sum(axis=(1, 3))
