"""Curved exponential families and their statistical curvature.

A curved family restricts the natural parameter of a full family to a smooth
``q``-dimensional embedding ``eta(theta)``::

    log p(x | theta) = eta(theta) . phi(x) - log Z(eta(theta)) + log h(x)

Derivative conventions: ``eta_dot`` is the ``m x q`` Jacobian and
``eta_ddot[i]`` is the ``m x q`` matrix ``d^2 eta^j / d theta_i d theta_k``
(rows ``j``, columns ``k``).

The shipped instance is :class:`EllipseModel`, a unit-covariance bivariate
normal whose mean lies on ``(a cos t, b sin t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import DomainError, RankDeficiencyError
from .expfam import (
    FullExpFamily,
    Parameterization,
    SampleSet,
    moment_covariance,
    moment_map,
    sample_full,
    suff_stat_mean,
    unit_gaussian,
)

__all__ = [
    "CurvedModel",
    "EllipseModel",
    "LinearEmbeddingModel",
    "ChartModel",
    "CurvatureReport",
    "embedding_jet",
    "fisher_info",
    "curvature_scalar",
    "curvature_general",
    "mle_curved",
    "maximize_expected_loglik",
    "expected_loglik",
    "sample_curved",
    "angular_difference",
]

GRID_SIZE = kernels.GRID_SIZE
_RANK_TOL = 1e-8


def angular_difference(x, y):
    """``x - y`` wrapped into [-pi, pi)."""
    return np.mod(np.asarray(x) - np.asarray(y) + math.pi, 2.0 * math.pi) - math.pi


class CurvedModel:
    """A smooth sub-family ``eta(theta)`` of a full exponential family.

    Parameters
    ----------
    base : FullExpFamily
        The ambient full family (``m = base.stat_dim``).
    param_dim : int
        ``q``; must not exceed ``m``.
    eta, eta_dot, eta_ddot : callables
        Embedding and its analytic derivatives, each taking a length-``q``
        array. ``eta_ddot`` returns a sequence of ``q`` arrays of shape ``(m, q)``.
    lower, upper : sequence of float
        Box bounds of the theta domain (open unless ``closed_upper``).
    eta_dddot : callable, optional
        Third derivative for ``q = 1`` (shape ``(m,)``), used by the bias formula.
    search_interval : (float, float), optional
        Finite interval gridded by :func:`mle_curved` when the domain is unbounded.
    periodic : bool
        Treat the (scalar) domain ``(lower, upper]`` as a circle: the grid
        includes ``upper`` and results are wrapped back into the domain.
    """

    def __init__(
        self,
        base: FullExpFamily,
        param_dim: int,
        eta: Callable,
        eta_dot: Callable,
        eta_ddot: Callable,
        lower: Sequence[float],
        upper: Sequence[float],
        *,
        eta_dddot: Optional[Callable] = None,
        closed_upper: bool = False,
        search_interval: Optional[tuple] = None,
        periodic: bool = False,
        name: str = "curved",
    ):
        if param_dim > base.stat_dim:
            raise ValueError("param_dim cannot exceed the dimension of the base family")
        self.base = base
        self.param_dim = int(param_dim)
        self.stat_dim = base.stat_dim
        self._eta = eta
        self._eta_dot = eta_dot
        self._eta_ddot = eta_ddot
        self._eta_dddot = eta_dddot
        self.lower = np.asarray(lower, dtype=float).reshape(self.param_dim)
        self.upper = np.asarray(upper, dtype=float).reshape(self.param_dim)
        self.closed_upper = closed_upper
        self.search_interval = search_interval
        self.periodic = bool(periodic)
        if self.periodic and not (param_dim == 1 and np.all(np.isfinite([lower, upper]))):
            raise ValueError("periodic models need a bounded scalar domain")
        self.name = name

    # -- domain ---------------------------------------------------------
    def as_theta(self, theta) -> np.ndarray:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if t.shape != (self.param_dim,):
            raise DomainError(f"expected theta of length {self.param_dim}, got shape {t.shape}")
        return t

    def in_domain(self, theta) -> bool:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if not np.all(np.isfinite(t)) or np.any(t <= self.lower):
            return False
        if self.closed_upper:
            return bool(np.all(t <= self.upper))
        return bool(np.all(t < self.upper))

    def check(self, theta) -> np.ndarray:
        t = self.as_theta(theta)
        if not self.in_domain(t):
            raise DomainError(f"theta={t.tolist()} is outside the domain of {self.name}")
        return t

    # -- embedding --------------------------------------------------------
    def eta(self, theta) -> np.ndarray:
        return np.asarray(self._eta(theta), dtype=float).reshape(self.stat_dim)

    def eta_dot(self, theta) -> np.ndarray:
        return np.asarray(self._eta_dot(theta), dtype=float).reshape(self.stat_dim, self.param_dim)

    def eta_ddot(self, theta) -> list:
        return [np.asarray(h, dtype=float).reshape(self.stat_dim, self.param_dim)
                for h in self._eta_ddot(theta)]

    def eta_dddot(self, theta) -> Optional[np.ndarray]:
        if self._eta_dddot is None:
            return None
        return np.asarray(self._eta_dddot(theta), dtype=float).reshape(self.stat_dim)

    def sigma(self, theta) -> np.ndarray:
        return moment_covariance(self.base, self.eta(theta))

    def mean_stat(self, theta) -> np.ndarray:
        return moment_map(self.base, self.eta(theta))

    def grid(self, size: int = GRID_SIZE) -> np.ndarray:
        if self.param_dim != 1:
            raise ValueError("grids are only defined for scalar theta")
        lo, hi = float(self.lower[0]), float(self.upper[0])
        if self.periodic:
            g = lo + (np.arange(size) + 1) * ((hi - lo) / size)
            g[-1] = hi
            return g
        if not (math.isfinite(lo) and math.isfinite(hi)):
            if self.search_interval is None:
                raise ValueError(f"{self.name}: unbounded domain needs a search_interval")
            lo, hi = map(float, self.search_interval)
        return lo + (np.arange(size) + 0.5) * ((hi - lo) / size)

    def wrap(self, theta: float) -> float:
        if not self.periodic:
            return theta
        lo, hi = float(self.lower[0]), float(self.upper[0])
        period = hi - lo
        while theta <= lo:
            theta += period
        while theta > hi:
            theta -= period
        return theta

    def expected_third_derivative(self, theta) -> tuple:
        """``E_theta[d^3 log p / d theta^3]`` for ``q = 1``, with an error estimate.

        Computed as the derivative of the analytic second derivative of the
        expected log-likelihood (Richardson-extrapolated central difference).
        """
        t0 = float(self.check(theta)[0])
        mu_star = self.mean_stat([t0])

        def h2(t):
            tt = np.array([t])
            ed = self.eta_dot(tt)[:, 0]
            edd = self.eta_ddot(tt)[0][:, 0]
            return float(edd @ (mu_star - self.mean_stat(tt)) - ed @ self.sigma(tt) @ ed)

        def richardson(d):
            d1 = (h2(t0 + d) - h2(t0 - d)) / (2 * d)
            d2 = (h2(t0 + 2 * d) - h2(t0 - 2 * d)) / (4 * d)
            return (4 * d1 - d2) / 3

        step = 1e-3 * max(1.0, abs(t0))
        while not (self.in_domain([t0 - 2 * step]) and self.in_domain([t0 + 2 * step])):
            step *= 0.5
        coarse = richardson(step)
        fine = richardson(step / 2)
        return fine, abs(fine - coarse)


class EllipseModel(CurvedModel):
    """Bivariate unit-covariance normal with mean ``(a cos t, b sin t)``, t in (-pi, pi]."""

    def __init__(self, a: float = 1.0, b: float = 5.0):
        if not (a > 0 and b > 0):
            raise ValueError("ellipse semi-axes must be positive")
        self.a = float(a)
        self.b = float(b)
        super().__init__(
            unit_gaussian(2),
            1,
            eta=self._eta_fn,
            eta_dot=self._eta_dot_fn,
            eta_ddot=self._eta_ddot_fn,
            eta_dddot=self._eta_dddot_fn,
            lower=[-math.pi],
            upper=[math.pi],
            closed_upper=True,
            periodic=True,
            name=f"ellipse(a={a:g},b={b:g})",
        )

    def _eta_fn(self, t):
        t = float(np.ravel(t)[0])
        return np.array([self.a * math.cos(t), self.b * math.sin(t)])

    def _eta_dot_fn(self, t):
        t = float(np.ravel(t)[0])
        return np.array([[-self.a * math.sin(t)], [self.b * math.cos(t)]])

    def _eta_ddot_fn(self, t):
        t = float(np.ravel(t)[0])
        return [np.array([[-self.a * math.cos(t)], [-self.b * math.sin(t)]])]

    def _eta_dddot_fn(self, t):
        t = float(np.ravel(t)[0])
        return np.array([self.a * math.sin(t), -self.b * math.cos(t)])

    def sigma(self, theta) -> np.ndarray:
        return np.eye(2)

    def mean_stat(self, theta) -> np.ndarray:
        return self.eta(theta)

    def grid(self, size: int = GRID_SIZE) -> np.ndarray:
        return kernels.angle_grid(size)[0]

    def expected_third_derivative(self, theta) -> tuple:
        t = float(self.check(theta)[0])
        return 1.5 * (self.b**2 - self.a**2) * math.sin(2.0 * t), 0.0


class LinearEmbeddingModel(CurvedModel):
    """``eta(theta) = A theta + c``: a flat (full exponential) sub-family."""

    def __init__(self, base: FullExpFamily, A, c=None, lower=None, upper=None, search_interval=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        m, q = A.shape
        c = np.zeros(m) if c is None else np.asarray(c, dtype=float)
        self.A, self.c = A, c
        lower = [-math.inf] * q if lower is None else lower
        upper = [math.inf] * q if upper is None else upper
        super().__init__(
            base, q,
            eta=lambda t: A @ np.atleast_1d(t) + c,
            eta_dot=lambda t: A,
            eta_ddot=lambda t: [np.zeros((m, q)) for _ in range(q)],
            eta_dddot=(lambda t: np.zeros(m)) if q == 1 else None,
            lower=lower, upper=upper,
            search_interval=search_interval,
            name="linear_embedding",
        )


class ChartModel(CurvedModel):
    """A scalar full family viewed through a parameterization chart (``q = m = 1``).

    Used to evaluate the linear-averaging bias in a given parameterization.
    """

    def __init__(self, base: FullExpFamily, chart: Parameterization, search_interval=None):
        if base.stat_dim != 1 or chart.derivatives is None:
            raise ValueError("ChartModel needs a scalar family and a chart with derivatives")
        self.chart = chart

        def d(t, k):
            return chart.derivatives(float(np.ravel(t)[0]))[k]

        super().__init__(
            base, 1,
            eta=lambda t: np.atleast_1d(chart.to_natural(float(np.ravel(t)[0]))),
            eta_dot=lambda t: np.array([[d(t, 0)]]),
            eta_ddot=lambda t: [np.array([[d(t, 1)]])],
            eta_dddot=lambda t: np.array([d(t, 2)]),
            lower=[-math.inf], upper=[math.inf],
            search_interval=search_interval,
            name=f"{base.name}[{chart.label}]",
        )

    def in_domain(self, theta) -> bool:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if not np.all(np.isfinite(t)):
            return False
        if self.chart.valid is not None and not self.chart.valid(t):
            return False
        return bool(self.base.domain(np.atleast_1d(self.chart.to_natural(t))))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurvatureReport:
    theta: np.ndarray
    fisher_info: np.ndarray
    gamma_sq: float
    lambda_: np.ndarray

    @property
    def gamma(self) -> float:
        return math.sqrt(max(self.gamma_sq, 0.0))


def embedding_jet(model: CurvedModel, theta):
    """Return ``(eta, eta_dot, eta_ddot)`` at ``theta``."""
    t = model.check(theta)
    return model.eta(t), model.eta_dot(t), model.eta_ddot(t)


def fisher_info(model: CurvedModel, theta) -> np.ndarray:
    """Per-observation Fisher information ``eta_dot^T Sigma eta_dot`` (``q x q``)."""
    t = model.check(theta)
    ed = model.eta_dot(t)
    I = ed.T @ model.sigma(t) @ ed
    return 0.5 * (I + I.T)


def curvature_scalar(model: CurvedModel, theta) -> float:
    """Statistical curvature ``gamma`` of a one-parameter family (not squared)."""
    if model.param_dim != 1:
        raise ValueError("curvature_scalar needs a one-parameter model (q = 1)")
    t = model.check(theta)
    S = model.sigma(t)
    v = model.eta_dot(t)[:, 0]
    w = model.eta_ddot(t)[0][:, 0]
    vv = float(v @ S @ v)
    ww = float(w @ S @ w)
    wv = float(w @ S @ v)
    gamma_sq = (ww * vv - wv * wv) / vv**3
    return math.sqrt(max(gamma_sq, 0.0))


def curvature_general(model: CurvedModel, theta) -> CurvatureReport:
    """Vector-parameter curvature: ``Lambda_ij = tr(I^-1 eta_ddot_i^T N Sigma N^T eta_ddot_j)``."""
    from .theory import projection_matrices

    t = model.check(theta)
    ed = model.eta_dot(t)
    if np.linalg.svd(ed, compute_uv=False).min() <= _RANK_TOL:
        raise RankDeficiencyError(f"eta_dot is rank deficient at theta={t.tolist()}")
    S = model.sigma(t)
    I = ed.T @ S @ ed
    I = 0.5 * (I + I.T)
    Iinv = np.linalg.inv(I)
    N = projection_matrices(model, t).n_star
    core = N @ S @ N.T
    hs = model.eta_ddot(t)
    q = model.param_dim
    lam = np.empty((q, q))
    for i in range(q):
        for j in range(q):
            lam[i, j] = np.trace(Iinv @ hs[i].T @ core @ hs[j])
    lam = 0.5 * (lam + lam.T)
    gamma_sq = max(float(np.trace(lam @ Iinv)), 0.0)
    return CurvatureReport(theta=t, fisher_info=I, gamma_sq=gamma_sq, lambda_=lam)


# ---------------------------------------------------------------------------
# 1-D maximisation of  eta(t) . mu - log Z(eta(t))


def expected_loglik(model: CurvedModel, theta, mu) -> float:
    """``eta(theta) . mu - log Z(eta(theta))``: the per-point log-likelihood up to base measure."""
    e = model.eta(np.atleast_1d(theta))
    return float(e @ np.asarray(mu, dtype=float)) - model.base.log_partition(e)


def _polish(model, x0, h, mu, max_iter=100):
    lo_dom, hi_dom = float(model.lower[0]), float(model.upper[0])

    def ok(x):
        return model.periodic or model.in_domain([x])

    def score(x):
        t = np.array([x])
        return float(model.eta_dot(t)[:, 0] @ (mu - model.mean_stat(t)))

    def curv(x):
        t = np.array([x])
        ed = model.eta_dot(t)[:, 0]
        return float(model.eta_ddot(t)[0][:, 0] @ (mu - model.mean_stat(t)) - ed @ model.sigma(t) @ ed)

    lo, hi = x0 - h, x0 + h
    if not model.periodic:
        lo = max(lo, lo_dom + 1e-12 * (1 + abs(lo_dom))) if math.isfinite(lo_dom) else lo
        hi = min(hi, hi_dom - 1e-12 * (1 + abs(hi_dom))) if math.isfinite(hi_dom) else hi
    bracketed = ok(lo) and ok(hi) and score(lo) >= 0.0 and score(hi) <= 0.0
    x = x0
    for _ in range(max_iter):
        g = score(x)
        if g == 0.0:
            break
        if bracketed:
            if g > 0.0:
                lo = x
            else:
                hi = x
        H = curv(x)
        xn = x - g / H if H < 0.0 else math.nan
        if bracketed:
            if not (lo < xn < hi):
                xn = 0.5 * (lo + hi)
        elif xn != xn or abs(xn - x0) > h or not ok(xn):
            break
        if xn == x:
            break
        dx = abs(xn - x)
        x = xn
        if dx <= 1e-15 * (1.0 + abs(x)):
            break
        if bracketed and hi - lo <= 4e-16 * (1.0 + abs(x)):
            break
    f0 = expected_loglik(model, x0, mu)
    fx = expected_loglik(model, x, mu)
    if not fx >= f0 - 1e-12 * (1.0 + abs(f0)):
        x, fx = x0, f0
    return model.wrap(x), fx


def _generic_maximize(model: CurvedModel, mu: np.ndarray, grid_size: int):
    grid = model.grid(grid_size)
    vals = np.array([expected_loglik(model, g, mu) for g in grid])
    j = int(np.argmax(vals))
    h = float(grid[1] - grid[0]) if grid_size > 1 else 1.0
    return _polish(model, float(grid[j]), h, mu)


def maximize_expected_loglik(model: CurvedModel, mu, grid_size: int = GRID_SIZE, generic: bool = False):
    """Global maximiser over theta of ``eta(theta) . mu - log Z(eta(theta))`` for ``q = 1``.

    Dense grid, then bracketed Newton from the best grid point (ties go to the
    first, i.e. smaller, grid point). Returns ``(theta, value)``. Ellipse
    models use the compiled kernel unless ``generic`` is set.
    """
    if model.param_dim != 1:
        raise ValueError("only scalar-parameter models can be maximised")
    mu = np.asarray(mu, dtype=float).reshape(model.stat_dim)
    if isinstance(model, EllipseModel) and not generic:
        th, val = kernels.ellipse_argmax(mu[None, :], model.a, model.b, grid_size)
        return float(th[0]), float(val[0])
    return _generic_maximize(model, mu, grid_size)


def mle_curved(model: CurvedModel, sample: SampleSet, grid_size: int = GRID_SIZE) -> float:
    """Maximum-likelihood theta of a one-parameter curved family."""
    if len(sample) == 0:
        raise ValueError("empty sample")
    if model.param_dim != 1:
        raise ValueError("mle_curved supports q = 1 only")
    mu_hat = suff_stat_mean(model.base, sample)
    return maximize_expected_loglik(model, mu_hat, grid_size)[0]


def sample_curved(model: CurvedModel, theta, n: int, seed) -> SampleSet:
    """``n`` i.i.d. draws from ``p(x | theta)``; deterministic per seed."""
    t = model.check(theta)
    return sample_full(model.base, model.eta(t), n, seed)
