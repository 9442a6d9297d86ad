"""Canonical full exponential families.

A family is described by its sufficient statistic ``phi``, its log-partition
function ``log Z`` and a base-measure term, so that::

    log p(x | theta) = theta . phi(x) - log Z(theta) + log h(x)

All log-densities are in nats. Two instances ship with the package: the
zero-mean Gaussian variance family (``phi(x) = x**2``) and the unit-covariance
Gaussian (``phi(x) = x``). Both carry closed-form moment maps; families built
from only a log-partition fall back to finite differences and a safeguarded
Newton inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import DomainError, MomentRangeError

__all__ = [
    "SampleSet",
    "Parameterization",
    "FullExpFamily",
    "zero_mean_gaussian",
    "unit_gaussian",
    "log_density",
    "moment_map",
    "moment_covariance",
    "inverse_moment_map",
    "suff_stat_mean",
    "mle_full",
    "sample_full",
    "sample_loglik",
    "kl_divergence",
]

_INVERSE_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SampleSet:
    """A batch of observations, stored as an ``(n, p)`` float array.

    ``labels`` is an optional integer vector used for label-wise partitioning.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("SampleSet needs a nonempty (n, p) array of points")
        object.__setattr__(self, "points", _frozen(pts))
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise ValueError("labels must have one entry per point")
            object.__setattr__(self, "labels", _frozen(lab))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, index) -> "SampleSet":
        labels = None if self.labels is None else self.labels[index]
        return SampleSet(self.points[index], labels)


@dataclass(frozen=True)
class Parameterization:
    """A one-to-one chart onto the natural parameters.

    ``derivatives`` (optional, scalar charts only) returns the first three
    derivatives of ``to_natural``; it lets a chart be treated as a
    (non-curved) embedding by :mod:`distmle.curved`.
    """

    label: str
    to_natural: Callable[[np.ndarray], np.ndarray]
    from_natural: Callable[[np.ndarray], np.ndarray]
    derivatives: Optional[Callable[[float], tuple]] = None
    valid: Optional[Callable[[np.ndarray], bool]] = None


def _identity(v):
    return np.asarray(v, dtype=float)


NATURAL = Parameterization(
    "natural", _identity, _identity, derivatives=lambda t: (1.0, 0.0, 0.0)
)


@dataclass(frozen=True, eq=False)
class FullExpFamily:
    """Specification of a minimal canonical exponential family.

    Only ``suff_stat``, ``log_partition`` and ``domain`` are required. The
    optional hooks supply closed forms; anything missing is computed
    numerically from ``log_partition``.
    """

    name: str
    stat_dim: int
    data_dim: int
    suff_stat: Callable[[np.ndarray], np.ndarray]
    log_partition: Callable[[np.ndarray], float]
    domain: Callable[[np.ndarray], bool]
    base_measure: Optional[Callable[[np.ndarray], np.ndarray]] = None
    moment: Optional[Callable[[np.ndarray], np.ndarray]] = None
    moment_cov: Optional[Callable[[np.ndarray], np.ndarray]] = None
    inverse_moment: Optional[Callable[[np.ndarray], np.ndarray]] = None
    moment_valid: Optional[Callable[[np.ndarray], bool]] = None
    sampler: Optional[Callable[[np.ndarray, int, np.random.Generator], np.ndarray]] = None
    reference_point: Optional[np.ndarray] = None
    parameterizations: Mapping[str, Parameterization] = field(default_factory=dict)

    def parameterization(self, label: str) -> Parameterization:
        if label == "natural":
            return self.parameterizations.get("natural", NATURAL)
        try:
            return self.parameterizations[label]
        except KeyError:
            raise KeyError(f"family {self.name!r} has no {label!r} parameterization") from None

    def check_domain(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.stat_dim,):
            raise DomainError(f"expected a natural parameter of length {self.stat_dim}, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)) or not self.domain(theta):
            raise DomainError(f"theta={theta.tolist()} is outside the natural domain of {self.name}")
        return theta


# ---------------------------------------------------------------------------
# shipped instances


def _var_phi(x):
    return np.asarray(x, dtype=float) ** 2


def _var_sampler(theta, n, rng):
    sd = math.sqrt(-0.5 / theta[0])
    return rng.normal(0.0, sd, size=(n, 1))


def _positive(v):
    v = np.asarray(v, dtype=float)
    return bool(np.all(v > 0) and np.all(np.isfinite(v)))


def zero_mean_gaussian() -> FullExpFamily:
    """Zero-mean univariate Gaussian indexed by its variance.

    Natural parameter ``theta = -1/(2 sigma^2) < 0``, statistic ``x**2``.
    The ``1/sqrt(pi)`` constant is folded into the log-partition, so the
    base measure is plain Lebesgue.
    """
    charts = {
        "natural": Parameterization(
            "natural", _identity, _identity,
            derivatives=lambda t: (1.0, 0.0, 0.0),
            valid=lambda t: bool(np.all(np.asarray(t) < 0)),
        ),
        "variance": Parameterization(
            "variance",
            lambda s: -0.5 / np.asarray(s, dtype=float),
            lambda t: -0.5 / np.asarray(t, dtype=float),
            derivatives=lambda s: (0.5 / s**2, -1.0 / s**3, 3.0 / s**4),
            valid=_positive,
        ),
        "std": Parameterization(
            "std",
            lambda sd: -0.5 / np.asarray(sd, dtype=float) ** 2,
            lambda t: np.sqrt(-0.5 / np.asarray(t, dtype=float)),
            derivatives=lambda sd: (sd**-3, -3.0 * sd**-4, 12.0 * sd**-5),
            valid=_positive,
        ),
        "precision": Parameterization(
            "precision",
            lambda p: -0.5 * np.asarray(p, dtype=float),
            lambda t: -2.0 * np.asarray(t, dtype=float),
            derivatives=lambda p: (-0.5, 0.0, 0.0),
            valid=_positive,
        ),
    }

    def inverse(mu):
        if not (mu[0] > 0 and math.isfinite(mu[0])):
            raise MomentRangeError(f"second moment must be positive, got {mu[0]!r}")
        return np.array([-0.5 / mu[0]])

    return FullExpFamily(
        name="zero_mean_gaussian",
        stat_dim=1,
        data_dim=1,
        suff_stat=_var_phi,
        log_partition=lambda t: 0.5 * math.log(math.pi / -t[0]),
        domain=lambda t: bool(t[0] < 0),
        moment=lambda t: np.array([-0.5 / t[0]]),
        moment_cov=lambda t: np.array([[0.5 / t[0] ** 2]]),
        inverse_moment=inverse,
        moment_valid=lambda m: bool(m[0] > 0),
        sampler=_var_sampler,
        reference_point=np.array([-0.5]),
        parameterizations=charts,
    )


def unit_gaussian(dim: int = 2) -> FullExpFamily:
    """Gaussian with identity covariance; the natural parameter is the mean."""
    half_log_2pi = 0.5 * dim * math.log(2.0 * math.pi)

    def base(x):
        x = np.asarray(x, dtype=float)
        return -0.5 * np.sum(x * x, axis=-1) - half_log_2pi

    return FullExpFamily(
        name=f"unit_gaussian{dim}",
        stat_dim=dim,
        data_dim=dim,
        suff_stat=lambda x: np.asarray(x, dtype=float),
        log_partition=lambda t: 0.5 * float(np.dot(t, t)),
        domain=lambda t: True,
        base_measure=base,
        moment=lambda t: np.array(t, dtype=float),
        moment_cov=lambda t: np.eye(dim),
        inverse_moment=lambda m: np.array(m, dtype=float),
        moment_valid=lambda m: bool(np.all(np.isfinite(m))),
        sampler=lambda t, n, rng: t + rng.standard_normal((n, dim)),
        reference_point=np.zeros(dim),
    )


# ---------------------------------------------------------------------------
# operations


def _as_points(family: FullExpFamily, x):
    """Return ``(points, single)`` with points shaped ``(n, data_dim)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and x.size == family.data_dim)
    if single:
        pts = x.reshape(1, family.data_dim)
    elif x.ndim == 1 and family.data_dim == 1:
        pts = x[:, None]
    else:
        pts = x
    if pts.ndim != 2 or pts.shape[1] != family.data_dim:
        raise ValueError(f"points of shape {x.shape} do not match data dimension {family.data_dim}")
    return pts, single


def log_density(family: FullExpFamily, theta, x):
    """Log-density (nats) at one point or at each row of an ``(n, p)`` array."""
    theta = family.check_domain(theta)
    pts, single = _as_points(family, x)
    phi = np.asarray(family.suff_stat(pts), dtype=float).reshape(pts.shape[0], family.stat_dim)
    out = phi @ theta - family.log_partition(theta)
    if family.base_measure is not None:
        out = out + family.base_measure(pts)
    return float(out[0]) if single else out


def _fd_gradient(f, theta, h_rel=1e-4):
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = h_rel * max(1.0, abs(theta[i]))
        e = np.zeros_like(theta)
        e[i] = h
        # five-point stencil, O(h^4)
        g[i] = (-f(theta + 2 * e) + 8 * f(theta + e) - 8 * f(theta - e) + f(theta - 2 * e)) / (12 * h)
    return g


def moment_map(family: FullExpFamily, theta) -> np.ndarray:
    """Mean of the sufficient statistic, ``mu(theta) = grad log Z(theta)``."""
    theta = family.check_domain(theta)
    if family.moment is not None:
        return np.asarray(family.moment(theta), dtype=float)
    return _fd_gradient(family.log_partition, theta)


def moment_covariance(family: FullExpFamily, theta) -> np.ndarray:
    """Covariance of the sufficient statistic (the Hessian of log Z)."""
    theta = family.check_domain(theta)
    if family.moment_cov is not None:
        return np.atleast_2d(np.asarray(family.moment_cov(theta), dtype=float))
    m = family.stat_dim
    H = np.empty((m, m))
    for i in range(m):
        h = 1e-4 * max(1.0, abs(theta[i]))
        e = np.zeros(m)
        e[i] = h
        H[:, i] = (moment_map(family, theta + e) - moment_map(family, theta - e)) / (2 * h)
    return 0.5 * (H + H.T)


def _dual_objective(family, theta, mu):
    return family.log_partition(theta) - float(theta @ mu)


def _newton_inverse(family: FullExpFamily, mu: np.ndarray, tol: float) -> np.ndarray:
    """Minimise ``log Z(theta) - theta . mu`` by damped Newton; bisection backup in 1-D."""
    theta = np.array(family.reference_point if family.reference_point is not None
                     else np.zeros(family.stat_dim), dtype=float)
    scale = max(1.0, float(np.max(np.abs(mu))))
    for _ in range(200):
        resid = moment_map(family, theta) - mu
        if np.max(np.abs(resid)) <= tol * scale:
            return theta
        H = moment_covariance(family, theta)
        try:
            step = -np.linalg.solve(H, resid)
        except np.linalg.LinAlgError:
            break
        f0 = _dual_objective(family, theta, mu)
        t = 1.0
        while t > 1e-12:
            cand = theta + t * step
            if np.all(np.isfinite(cand)) and family.domain(cand):
                if _dual_objective(family, cand, mu) <= f0 + 1e-4 * t * float(resid @ step) + 1e-15 * abs(f0):
                    break
            t *= 0.5
        else:
            break
        if np.array_equal(cand, theta):
            break
        theta = cand
    if family.stat_dim == 1:
        return _bisect_inverse(family, mu, tol * scale)
    raise MomentRangeError(f"could not invert the moment map at mu={mu.tolist()}")


def _bisect_inverse(family, mu, tol):
    # mu(theta) is increasing in 1-D; expand a bracket from the reference point
    ref = float(family.reference_point[0]) if family.reference_point is not None else 0.0

    def resid(t):
        return float(moment_map(family, np.array([t]))[0] - mu[0])

    lo = hi = ref
    step = 1.0
    for _ in range(200):
        if resid(lo) <= 0:
            break
        cand = lo - step
        while not family.domain(np.array([cand])):
            step *= 0.5
            cand = lo - step
            if step < 1e-300:
                raise MomentRangeError(f"moment {mu.tolist()} is below the attainable range")
        lo, step = cand, step * 2
    step = 1.0
    for _ in range(200):
        if resid(hi) >= 0:
            break
        cand = hi + step
        while not family.domain(np.array([cand])):
            step *= 0.5
            cand = hi + step
            if step < 1e-300:
                raise MomentRangeError(f"moment {mu.tolist()} is above the attainable range")
        hi, step = cand, step * 2
    if resid(lo) > 0 or resid(hi) < 0:
        raise MomentRangeError(f"moment {mu.tolist()} is outside the attainable range")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        r = resid(mid)
        if abs(r) <= tol or mid in (lo, hi):
            return np.array([mid])
        if r > 0:
            hi = mid
        else:
            lo = mid
    return np.array([0.5 * (lo + hi)])


def inverse_moment_map(family: FullExpFamily, mu, tol: float = _INVERSE_TOL) -> np.ndarray:
    """Natural parameter whose moment is ``mu``.

    Raises :class:`MomentRangeError` when ``mu`` is not an attainable moment,
    e.g. a nonpositive second moment for the variance family.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.shape != (family.stat_dim,) or not np.all(np.isfinite(mu)):
        raise MomentRangeError(f"invalid moment vector {mu.tolist()}")
    if family.moment_valid is not None and not family.moment_valid(mu):
        raise MomentRangeError(f"mu={mu.tolist()} is outside the moment range of {family.name}")
    if family.inverse_moment is not None:
        return np.asarray(family.inverse_moment(mu), dtype=float)
    return _newton_inverse(family, mu, tol)


def suff_stat_mean(family: FullExpFamily, sample: SampleSet) -> np.ndarray:
    """Empirical mean of the sufficient statistic over ``sample``."""
    if len(sample) == 0:
        raise ValueError("empty sample")
    phi = np.asarray(family.suff_stat(sample.points), dtype=float)
    return phi.reshape(len(sample), family.stat_dim).mean(axis=0)


def mle_full(family: FullExpFamily, sample: SampleSet) -> np.ndarray:
    """Maximum-likelihood natural parameter: the inverse moment of the data mean."""
    return inverse_moment_map(family, suff_stat_mean(family, sample))


def sample_loglik(family: FullExpFamily, theta, sample: SampleSet) -> float:
    """Total log-likelihood of ``sample`` under ``theta``."""
    return float(np.sum(log_density(family, theta, sample.points)))


def sample_full(family: FullExpFamily, theta, n: int, seed) -> SampleSet:
    """Draw ``n`` i.i.d. points; ``seed`` is anything ``np.random.default_rng`` accepts."""
    theta = family.check_domain(theta)
    if n < 1:
        raise ValueError("n must be >= 1")
    if family.sampler is None:
        raise NotImplementedError(f"family {family.name!r} has no sampler")
    rng = np.random.default_rng(seed)
    return SampleSet(family.sampler(theta, int(n), rng))


def kl_divergence(family: FullExpFamily, theta_p, theta_q) -> float:
    """``KL(p(.|theta_p) || p(.|theta_q))`` in nats (Bregman divergence of log Z)."""
    tp = family.check_domain(theta_p)
    tq = family.check_domain(theta_q)
    mu_p = moment_map(family, tp)
    val = family.log_partition(tq) - family.log_partition(tp) - float((tq - tp) @ mu_p)
    return max(val, 0.0)
