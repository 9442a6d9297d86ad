"""Gaussian mixtures: EM fitting and the three ways of combining local fits.

* naive linear averaging of weights, means and covariances in index order;
* matched linear averaging, which first aligns component labels to a
  reference model by minimising the total symmetric KL (optimal assignment);
* KL averaging approximated by a parametric bootstrap: draw points from every
  local mixture, pool them and refit by EM.

Covariances are kept symmetric positive definite with every eigenvalue at
least ``COV_FLOOR``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .combine import kl_average_bootstrap
from .errors import FitError
from .expfam import SampleSet
from .rng import substream, substream_seq

__all__ = [
    "COV_FLOOR",
    "GmmParams",
    "Matching",
    "floor_covariance",
    "em_fit",
    "gmm_loglik",
    "gmm_log_density",
    "sample_gmm",
    "gaussian_sym_kl",
    "match_components",
    "matched_linear_average",
    "kl_average_gmm",
]

COV_FLOOR = 1e-6


def floor_covariance(C, floor: float = COV_FLOOR) -> np.ndarray:
    """Symmetrise ``C`` and raise its eigenvalues to at least ``floor``.

    This is the exact maximiser of the Gaussian likelihood under the
    eigenvalue constraint, so EM stays monotone.
    """
    C = np.asarray(C, dtype=float)
    C = 0.5 * (C + C.T)
    w, V = np.linalg.eigh(C)
    if w.min() >= floor:
        return C
    w = np.maximum(w, floor)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True, eq=False)
class GmmParams:
    """Weights ``(K,)``, means ``(K, p)`` and covariances ``(K, p, p)``."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        mu = np.array(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        K, p = mu.shape
        cov = np.array(self.covariances, dtype=float).reshape(K, p, p)
        if w.shape != (K,):
            raise ValueError(f"expected {K} weights, got {w.shape[0]}")
        if np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        chols = np.empty_like(cov)
        for k in range(K):
            if not np.allclose(cov[k], cov[k].T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov[k]).max())):
                raise ValueError(f"covariance {k} is not symmetric")
            if np.linalg.eigvalsh(cov[k]).min() < COV_FLOOR * (1 - 1e-6):
                raise ValueError(f"covariance {k} has an eigenvalue below the floor {COV_FLOOR}")
            chols[k] = np.linalg.cholesky(cov[k])
        for name, arr in (("weights", w), ("means", mu), ("covariances", cov)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        chols.setflags(write=False)
        object.__setattr__(self, "_chols", chols)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def chols(self) -> np.ndarray:
        return self._chols

    def permuted(self, perm) -> "GmmParams":
        perm = np.asarray(perm)
        return GmmParams(self.weights[perm], self.means[perm], self.covariances[perm])


@dataclass(frozen=True)
class Matching:
    permutations: list
    total_cost: float


def _points(data) -> np.ndarray:
    if isinstance(data, SampleSet):
        return data.points
    X = np.asarray(data, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def gmm_log_density(model: GmmParams, data) -> np.ndarray:
    """Per-point mixture log-density (nats)."""
    X = _points(data)
    if X.shape[1] != model.dim:
        raise ValueError(f"data dimension {X.shape[1]} does not match model dimension {model.dim}")
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    return kernels.logsumexp_rows(kernels.mixture_log_density(X, model.means, model.chols, logw))


def gmm_loglik(model: GmmParams, data) -> float:
    """Mean log-likelihood per point (nats)."""
    return float(np.mean(gmm_log_density(model, data)))


def sample_gmm(model: GmmParams, m: int, rng: np.random.Generator, return_labels: bool = False):
    comp = rng.choice(model.K, size=int(m), p=model.weights)
    z = rng.standard_normal((int(m), model.dim))
    X = model.means[comp] + np.einsum("nij,nj->ni", model.chols[comp], z)
    return (X, comp) if return_labels else X


# ---------------------------------------------------------------------------
# EM


def _seed_means(X, K, rng):
    """K data points by D^2 weighting; distinct whenever the data allow it."""
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((X - X[idx[0]]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            j = int(rng.choice(n, p=d2 / total))
        else:
            j = int(rng.integers(n))
        idx.append(j)
        d2 = np.minimum(d2, np.sum((X - X[j]) ** 2, axis=1))
    return X[idx].copy()


def _em_run(X, K, rng, max_iters, tol, floor):
    n, p = X.shape
    warnings = []
    means = _seed_means(X, K, rng)
    if len(np.unique(means, axis=0)) < K:
        warnings.append("fewer distinct data points than components; some initial means coincide")
    raw = np.cov(X, rowvar=False, bias=True).reshape(p, p)
    pooled = floor_covariance(raw, floor)
    if not np.array_equal(pooled, 0.5 * (raw + raw.T)):
        warnings.append("covariance floor applied to the pooled initial covariance")
    covs = np.repeat(pooled[None], K, axis=0)
    weights = np.full(K, 1.0 / K)
    trace = []
    converged = False
    floored = False
    for it in range(max_iters):
        chols = np.linalg.cholesky(covs)
        with np.errstate(divide="ignore"):
            logw = np.log(weights)
        logp = kernels.mixture_log_density(X, means, chols, logw)
        ll_i = kernels.logsumexp_rows(logp)
        ll = float(np.mean(ll_i))
        if trace and ll - trace[-1] < tol:
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        resp = np.exp(logp - ll_i[:, None])
        Nk = resp.sum(axis=0)
        weights = Nk / n
        weights = weights / math.fsum(weights)
        for k in range(K):
            if Nk[k] <= 1e-300:
                continue  # empty component keeps its previous shape, weight 0
            means[k] = resp[:, k] @ X / Nk[k]
            diff = X - means[k]
            raw = (resp[:, k, None] * diff).T @ diff / Nk[k]
            covs[k] = floor_covariance(raw, floor)
            if np.linalg.eigvalsh(0.5 * (raw + raw.T)).min() < floor:
                floored = True
    if floored:
        warnings.append("covariance floor applied during EM")
    return weights, means, covs, trace, converged, warnings


def em_fit(
    data,
    K: int,
    seed=0,
    max_iters: int = 200,
    tol: float = 1e-8,
    n_init: int = 1,
    return_info: bool = False,
    floor: float = COV_FLOOR,
):
    """Maximum-likelihood mixture by EM.

    Initial means are ``K`` data points chosen by D^2 weighting from the seed,
    covariances start at the pooled sample covariance and weights are uniform.
    Iteration stops when the mean log-likelihood improves by less than
    ``tol`` or after ``max_iters`` E-steps. With ``n_init > 1`` the best of
    several seeded starts is kept.

    Returns
    -------
    GmmParams, or ``(GmmParams, info)`` with ``return_info``; ``info`` holds
    the log-likelihood trace, iteration count, convergence flag and warnings.
    """
    X = _points(data)
    n = X.shape[0]
    if K < 1:
        raise ValueError("K must be >= 1")
    if n < K:
        raise ValueError(f"need at least K={K} points, got {n}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contain non-finite values")
    best = None
    for r in range(max(1, int(n_init))):
        run = _em_run(X, K, substream(seed, r), max_iters, tol, floor)
        if best is None or run[3][-1] > best[3][-1]:
            best = run
    weights, means, covs, trace, converged, warnings = best
    try:
        params = GmmParams(weights, means, covs)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise FitError(f"EM produced an invalid mixture: {exc}") from exc
    if return_info:
        info = {
            "loglik_trace": trace,
            "iterations": len(trace),
            "converged": converged,
            "warnings": warnings,
        }
        return params, info
    return params


# ---------------------------------------------------------------------------
# matching and combination


def gaussian_sym_kl(c1, c2) -> float:
    """``KL(c1 || c2) + KL(c2 || c1)`` for Gaussians given as ``(mean, cov)``."""
    m1, S1 = np.atleast_1d(np.asarray(c1[0], dtype=float)), np.atleast_2d(np.asarray(c1[1], dtype=float))
    m2, S2 = np.atleast_1d(np.asarray(c2[0], dtype=float)), np.atleast_2d(np.asarray(c2[1], dtype=float))
    p = m1.shape[0]
    if S1.shape != (p, p) or S2.shape != (p, p) or m2.shape != (p,):
        raise ValueError("component shapes do not match")
    for S in (S1, S2):
        if not np.allclose(S, S.T) or np.linalg.eigvalsh(S).min() <= 0:
            raise ValueError("covariances must be symmetric positive definite")
    S1inv = np.linalg.inv(S1)
    S2inv = np.linalg.inv(S2)
    delta = m2 - m1
    val = 0.5 * (np.trace(S2inv @ S1) + np.trace(S1inv @ S2) + delta @ (S1inv + S2inv) @ delta) - p
    return max(float(val), 0.0)


def _cost_matrix(ref: GmmParams, other: GmmParams) -> np.ndarray:
    K = ref.K
    C = np.empty((K, K))
    for j in range(K):
        for l in range(K):
            C[j, l] = gaussian_sym_kl((ref.means[j], ref.covariances[j]), (other.means[l], other.covariances[l]))
    return C


def _check_shapes(models: Sequence[GmmParams]):
    if len(models) == 0:
        raise ValueError("no models given")
    shapes = {(m.K, m.dim) for m in models}
    if len(shapes) != 1:
        raise ValueError(f"models differ in (K, p): {sorted(shapes)}")


def match_components(models: Sequence[GmmParams], reference_index: int = 0) -> Matching:
    """Align every model's components to the reference model.

    ``permutations[k][j]`` is the component of model ``k`` matched to the
    reference's component ``j``, chosen to minimise the summed symmetric KL
    (an exact optimal assignment).
    """
    _check_shapes(models)
    ref = models[reference_index]
    perms = []
    total = 0.0
    for k, m in enumerate(models):
        if k == reference_index:
            perms.append(tuple(range(ref.K)))
            continue
        C = _cost_matrix(ref, m)
        rows, cols = linear_sum_assignment(C)
        perms.append(tuple(int(c) for c in cols[np.argsort(rows)]))
        total += float(C[rows, cols].sum())
    return Matching(perms, total)


def _average(models: Sequence[GmmParams]) -> GmmParams:
    d = len(models)
    w = np.sum([m.weights for m in models], axis=0) / d
    w = np.maximum(w, 0.0)
    w = w / math.fsum(w)
    means = np.sum([m.means for m in models], axis=0) / d
    covs = np.sum([m.covariances for m in models], axis=0) / d
    covs = np.stack([floor_covariance(c) for c in covs])
    return GmmParams(w, means, covs)


def matched_linear_average(models: Sequence[GmmParams], mode: str = "matched") -> GmmParams:
    """Parameter-wise mean of local mixtures, naively or after matching to model 0."""
    _check_shapes(models)
    if mode == "naive":
        return _average(models)
    if mode != "matched":
        raise ValueError(f"mode must be 'naive' or 'matched', got {mode!r}")
    match = match_components(models, 0)
    return _average([m.permuted(p) for m, p in zip(models, match.permutations)])


def kl_average_gmm(models: Sequence[GmmParams], m_per_local: int = 500, K: int | None = None, seed=0, **em_kwargs) -> GmmParams:
    """Monte-Carlo KL average: draw ``m_per_local`` points per local mixture, pool, refit by EM."""
    _check_shapes(models)
    K = models[0].K if K is None else int(K)
    if m_per_local < K:
        raise ValueError(f"m_per_local={m_per_local} is smaller than K={K}")
    fit_seed = substream_seq(seed, 1)

    def fitter(pool):
        return em_fit(pool, K, seed=fit_seed, **em_kwargs)

    sims = [(m, sample_gmm, k) for k, m in enumerate(models)]
    return kl_average_bootstrap(fitter, sims, m_per_local, substream_seq(seed, 0)).theta
