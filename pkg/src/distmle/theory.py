"""Asymptotic predictions for combined local MLEs.

For a one-parameter curved family with Fisher information ``I``, squared
statistical curvature ``gamma^2`` and a combiner-specific bias coefficient
``beta``, the combined estimate ``f`` built from ``d`` equal partitions of
``n`` points satisfies, to leading order::

    E[f - mle]       = (d - 1) beta / n
    E[(f - mle)^2]   = (d - 1) / n^2 * (gamma^2 / I + (d + 1) beta^2)
    MSE(f) - MSE(mle) = (d - 1) / n^2 * (gamma^2 / I + 2 beta^2)

KL averaging has ``beta = 0`` and attains the lower bound
``(d - 1) gamma^2 / (I n^2)``. Linear averaging has
``beta = I^-2 (eta_ddot' Sigma eta_dot + E[l'''] / 2)``.

Also here: the tangent-space projector ``P`` and its complement ``N``, and
closed-form Wishart trace moments with a Monte-Carlo check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .curved import CurvedModel
from .errors import RankDeficiencyError
from .rng import substream

__all__ = [
    "ProjectionPair",
    "AsymptoticPrediction",
    "WishartSpec",
    "projection_matrices",
    "beta_linear",
    "predict_asymptotics",
    "wishart_moments",
    "wishart_mc_estimate",
    "sample_wishart",
]


@dataclass(frozen=True)
class ProjectionPair:
    p_star: np.ndarray
    n_star: np.ndarray


@dataclass(frozen=True)
class AsymptoticPrediction:
    bias_vs_mle: float
    mse_vs_mle: float
    mse_excess_vs_true: float
    lower_bound: float
    n: int
    d: int
    theta_star: float | None = None

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "theta_star": self.theta_star,
            "bias_vs_mle": self.bias_vs_mle,
            "mse_vs_mle": self.mse_vs_mle,
            "mse_excess_vs_true": self.mse_excess_vs_true,
            "lower_bound": self.lower_bound,
        }


@dataclass(frozen=True)
class WishartSpec:
    sigma: np.ndarray
    dof: int

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("sigma must be a symmetric square matrix")
        if np.linalg.eigvalsh(S).min() <= 0:
            raise ValueError("sigma must be positive definite")
        if int(self.dof) < 1:
            raise ValueError("dof must be >= 1")
        object.__setattr__(self, "sigma", S)
        object.__setattr__(self, "dof", int(self.dof))


def projection_matrices(model: CurvedModel, theta) -> ProjectionPair:
    """Projector onto the tangent space of ``mu(theta)`` in moment space.

    ``P = Sigma eta_dot (eta_dot' Sigma eta_dot)^-1 eta_dot'``, ``N = 1 - P``.
    """
    t = model.check(theta)
    ed = model.eta_dot(t)
    if np.linalg.svd(ed, compute_uv=False).min() <= 1e-8:
        raise RankDeficiencyError(f"eta_dot is rank deficient at theta={t.tolist()}")
    S = model.sigma(t)
    I = ed.T @ S @ ed
    P = S @ ed @ np.linalg.solve(I, ed.T)
    return ProjectionPair(p_star=P, n_star=np.eye(model.stat_dim) - P)


def beta_linear(model: CurvedModel, theta_star, return_error: bool = False):
    """Bias coefficient of linear averaging at ``theta_star`` (``q = 1``).

    The expected third log-likelihood derivative is analytic when the model
    provides it and finite-differenced otherwise; ``return_error=True`` also
    returns the propagated error estimate of that step.
    """
    if model.param_dim != 1:
        raise ValueError("beta_linear supports q = 1 only")
    t = model.check(theta_star)
    ed = model.eta_dot(t)[:, 0]
    edd = model.eta_ddot(t)[0][:, 0]
    S = model.sigma(t)
    I = float(ed @ S @ ed)
    J, J_err = model.expected_third_derivative(t)
    if not math.isfinite(J):
        raise ArithmeticError("third-derivative expectation is not finite")
    beta = (float(edd @ S @ ed) + 0.5 * J) / I**2
    if return_error:
        return beta, 0.5 * J_err / I**2
    return beta


def predict_asymptotics(gamma_sq: float, fisher: float, beta: float, n: int, d: int,
                        theta_star: float | None = None) -> AsymptoticPrediction:
    """Leading-order bias and MSE of a combiner with bias coefficient ``beta``.

    ``mse_excess_vs_true`` is the additive term over the global MLE's MSE
    against the true parameter.
    """
    if not fisher > 0:
        raise ValueError("fisher information must be positive")
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    scale = (d - 1) / n**2
    base = gamma_sq / fisher
    return AsymptoticPrediction(
        bias_vs_mle=(d - 1) * beta / n,
        mse_vs_mle=scale * (base + (d + 1) * beta**2),
        mse_excess_vs_true=scale * (base + 2.0 * beta**2),
        lower_bound=scale * base,
        n=n,
        d=d,
        theta_star=theta_star,
    )


# ---------------------------------------------------------------------------
# Wishart


def _check_sym(M, m, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (m, m):
        raise ValueError(f"{name} must be {m}x{m}, got {M.shape}")
    return M


def wishart_moments(spec: WishartSpec, A, B=None):
    """Closed-form ``E tr(AW)``, ``E (tr AW)^2`` and ``E tr(AW) tr(BW)`` for ``W ~ Wishart(Sigma, dof)``."""
    m = spec.sigma.shape[0]
    A = _check_sym(A, m, "A")
    B = A if B is None else _check_sym(B, m, "B")
    d = spec.dof
    AS = A @ spec.sigma
    BS = B @ spec.sigma
    tr_as = float(np.trace(AS))
    tr_bs = float(np.trace(BS))
    e_tr = d * tr_as
    e_sq = 2 * d * float(np.trace(AS @ AS)) + d**2 * tr_as**2
    e_cross = 2 * d * float(np.trace(AS @ BS)) + d**2 * tr_as * tr_bs
    return e_tr, e_sq, e_cross


def sample_wishart(spec: WishartSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` draws of ``sum_k (z_k - zbar)(z_k - zbar)^T`` over ``dof + 1`` Gaussian vectors."""
    m = spec.sigma.shape[0]
    L = np.linalg.cholesky(spec.sigma)
    z = rng.standard_normal((size, spec.dof + 1, m)) @ L.T
    z -= z.mean(axis=1, keepdims=True)
    return np.einsum("ski,skj->sij", z, z)


def wishart_mc_estimate(spec: WishartSpec, A, samples: int, seed, chunk: int = 20000):
    """Monte-Carlo mean of ``tr(AW)`` and ``tr(AW)^2`` with standard errors.

    Draws are generated in chunks, each from its own substream keyed by the
    chunk index, so results do not depend on how the work is split.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    m = spec.sigma.shape[0]
    A = _check_sym(A, m, "A")
    tr = np.empty(samples)
    for c, start in enumerate(range(0, samples, chunk)):
        size = min(chunk, samples - start)
        W = sample_wishart(spec, size, substream(seed, c))
        tr[start:start + size] = np.einsum("ij,sji->s", A, W)
    sq = tr * tr
    se = (float(tr.std(ddof=1)) / math.sqrt(samples), float(sq.std(ddof=1)) / math.sqrt(samples))
    return float(tr.mean()), float(sq.mean()), se
