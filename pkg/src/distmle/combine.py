"""Combining local MLEs into a single estimate.

Four combiners are provided:

* :func:`linear_average` -- arithmetic mean in whatever chart the locals use;
* :func:`kl_average_full` -- exact KL averaging for full families, computed as
  ``mu^-1(mean_k mu(theta_k))``;
* :func:`kl_average_curved` -- KL averaging for one-parameter curved
  families, solved on the same grid + Newton scheme as the curved MLE;
* :func:`kl_average_bootstrap` -- Monte-Carlo KL averaging: sample from every
  local model, pool, refit.

Sums over locals use :func:`math.fsum`, which is correctly rounded and hence
independent of the order of the locals; every combiner is therefore
bit-for-bit symmetric in its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .curved import CurvedModel, maximize_expected_loglik
from .errors import DomainError, FitError
from .expfam import FullExpFamily, SampleSet, inverse_moment_map, kl_divergence, moment_map
from .rng import substream

__all__ = [
    "LocalFit",
    "CombinedEstimate",
    "linear_average",
    "kl_average_full",
    "kl_average_curved",
    "kl_average_bootstrap",
]


@dataclass(frozen=True, eq=False)
class LocalFit:
    """A local estimate ``theta_k`` and where it came from."""

    theta: np.ndarray
    parameterization: str = "natural"
    subsample_size: int = 1
    source_id: int = 0

    def __post_init__(self):
        t = np.atleast_1d(np.array(self.theta, dtype=float))
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)
        if int(self.subsample_size) < 1:
            raise ValueError("subsample_size must be >= 1")


@dataclass(frozen=True, eq=False)
class CombinedEstimate:
    theta: Any
    combiner: str
    diagnostics: dict = field(default_factory=dict)


def _stack(locals_: Sequence[LocalFit]) -> np.ndarray:
    if len(locals_) == 0:
        raise ValueError("no local fits to combine")
    dims = {lf.theta.shape for lf in locals_}
    if len(dims) != 1:
        raise ValueError(f"local fits have different dimensions: {sorted(dims)}")
    return np.stack([lf.theta for lf in locals_])


def _mean_rows(rows: np.ndarray, weights=None) -> np.ndarray:
    """Order-independent (weighted) mean over axis 0."""
    if rows.shape[0] > 0 and np.all(rows == rows[0]):
        return rows[0].copy()
    if weights is None:
        return np.array([math.fsum(col) / rows.shape[0] for col in rows.T])
    w = np.asarray(weights, dtype=float)
    total = math.fsum(w)
    return np.array([math.fsum(w * col) / total for col in rows.T])


def linear_average(locals_: Sequence[LocalFit]) -> CombinedEstimate:
    """``(1/d) sum_k theta_k`` in the locals' shared parameterization."""
    rows = _stack(locals_)
    labels = {lf.parameterization for lf in locals_}
    if len(labels) != 1:
        raise ValueError(f"cannot linearly average mixed parameterizations {sorted(labels)}")
    (label,) = labels
    return CombinedEstimate(
        _mean_rows(rows), "linear", {"parameterization": label, "d": len(locals_)}
    )


def kl_average_full(family: FullExpFamily, locals_: Sequence[LocalFit], weighted: bool = False) -> CombinedEstimate:
    """Exact KL average on a full exponential family.

    Locals may be given in any chart the family defines (they are mapped to
    natural parameters first); the result is returned in the chart of the
    first local, or ``"natural"`` if the charts differ. With ``weighted`` the
    moment average is weighted by subsample size, which is what recovers the
    pooled MLE when partitions are unequal.
    """
    _stack(locals_)
    naturals = []
    for lf in locals_:
        chart = family.parameterization(lf.parameterization)
        if chart.valid is not None and not chart.valid(lf.theta):
            raise DomainError(f"local {lf.source_id} is outside the {chart.label} range: {lf.theta.tolist()}")
        naturals.append(family.check_domain(chart.to_natural(lf.theta)))
    mus = np.stack([moment_map(family, t) for t in naturals])
    weights = [lf.subsample_size for lf in locals_] if weighted else None
    labels = {lf.parameterization for lf in locals_}
    out_label = locals_[0].parameterization if len(labels) == 1 else "natural"
    if len(labels) == 1 and all(np.array_equal(lf.theta, locals_[0].theta) for lf in locals_):
        # identical locals are returned unchanged (no round trip through mu)
        theta_nat, mu_bar, theta_out = naturals[0], mus[0], locals_[0].theta.copy()
    else:
        mu_bar = _mean_rows(mus, weights)
        theta_nat = inverse_moment_map(family, mu_bar)
        theta_out = np.atleast_1d(family.parameterization(out_label).from_natural(theta_nat))
    diag = {
        "parameterization": out_label,
        "natural": theta_nat,
        "mean_moment": mu_bar,
        "weighted": bool(weighted),
        "d": len(locals_),
    }
    return CombinedEstimate(np.asarray(theta_out, dtype=float), "kl_exact", diag)


def kl_average_curved(model: CurvedModel, locals_: Sequence[LocalFit], grid_size: int | None = None) -> CombinedEstimate:
    """KL average for a one-parameter curved family.

    ``sum_k KL(p_k || p_theta) = d (log Z(eta(theta)) - eta(theta) . mu_bar) + const``
    with ``mu_bar`` the mean of the local moment vectors, so the minimiser is
    the curved MLE evaluated at ``mu_bar``.
    """
    rows = _stack(locals_)
    if model.param_dim != 1:
        raise ValueError("kl_average_curved supports q = 1 only")
    thetas = [model.check(r) for r in rows]
    mus = np.stack([model.mean_stat(t) for t in thetas])
    mu_bar = _mean_rows(mus)
    kwargs = {} if grid_size is None else {"grid_size": grid_size}
    theta_hat, _ = maximize_expected_loglik(model, mu_bar, **kwargs)
    eta_hat = model.eta([theta_hat])
    objective = math.fsum(kl_divergence(model.base, model.eta(t), eta_hat) for t in thetas)
    diag = {"objective": objective, "mean_moment": mu_bar, "d": len(locals_)}
    return CombinedEstimate(np.array([theta_hat]), "kl_numeric", diag)


def _as_points(drawn) -> np.ndarray:
    if isinstance(drawn, SampleSet):
        return drawn.points
    pts = np.asarray(drawn, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def kl_average_bootstrap(
    fitter: Callable[[SampleSet], Any],
    simulators: Sequence[tuple],
    m_per_local: int,
    seed,
) -> CombinedEstimate:
    """Parametric-bootstrap KL average.

    Parameters
    ----------
    fitter : callable
        Maps a pooled :class:`SampleSet` to fitted parameters.
    simulators : sequence of tuples
        ``(params, sampler)`` or ``(params, sampler, source_id)``, where
        ``sampler(params, m, rng)`` returns ``m`` points (array or SampleSet).
        ``source_id`` defaults to the list position.
    m_per_local : int
        Points drawn from each local model.
    seed
        Master seed; local ``k`` draws from the substream ``(seed, source_id)``.

    Pooled points are concatenated in ``source_id`` order, so permuting the
    locals together with their ids leaves the result unchanged.
    """
    if m_per_local < 1:
        raise ValueError("m_per_local must be >= 1")
    if len(simulators) == 0:
        raise ValueError("no local models to combine")
    entries = []
    for pos, sim in enumerate(simulators):
        params, sampler = sim[0], sim[1]
        sid = int(sim[2]) if len(sim) > 2 else pos
        entries.append((sid, params, sampler))
    ids = [e[0] for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError("source ids must be unique")
    entries.sort(key=lambda e: e[0])
    parts = [_as_points(sampler(params, int(m_per_local), substream(seed, sid))) for sid, params, sampler in entries]
    pool = SampleSet(np.concatenate(parts, axis=0))
    try:
        theta = fitter(pool)
    except Exception as exc:
        raise FitError(
            f"bootstrap refit failed on a pool of {len(pool)} points from {len(entries)} local models: {exc}"
        ) from exc
    diag = {"m_per_local": int(m_per_local), "pool_size": len(pool), "d": len(entries)}
    return CombinedEstimate(theta, "kl_bootstrap", diag)
