"""Seeded Monte-Carlo experiments comparing combiners against the global MLE.

One trial draws ``n`` points from the truth, partitions them into ``d``
groups, fits a local MLE on each group, combines the local fits with every
requested combiner and also fits the global MLE on the pooled data. Every
random draw comes from a substream keyed by ``(master_seed, n, trial, stage)``,
so output does not depend on scheduling or on the number of workers.

Supported models:

``ellipse``
    Unit-covariance bivariate normal with mean on ``(a cos t, b sin t)``.
    Estimates are angles and errors use the wrapped angular difference. With
    ``misspecified`` set, data come from ``N(mean, I)`` instead and the
    reference value is the model's KL projection of that truth.
``variance``
    Zero-mean normal; estimates are reported in the chosen chart.
``gmm``
    Gaussian mixture. The scalar tracked per trial is the held-out mean
    log-likelihood of each fitted mixture.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import gmm as gmm_mod
from .combine import (
    LocalFit,
    kl_average_bootstrap,
    kl_average_curved,
    kl_average_full,
    linear_average,
)
from .curved import (
    ChartModel,
    EllipseModel,
    angular_difference,
    curvature_scalar,
    fisher_info,
    maximize_expected_loglik,
    mle_curved,
)
from .errors import ConfigError
from .expfam import SampleSet, mle_full, zero_mean_gaussian
from .rng import substream, substream_seq
from .theory import beta_linear, predict_asymptotics

__all__ = [
    "ExperimentConfig",
    "TrialRecord",
    "SUMMARY_FIELDS",
    "partition_data",
    "run_experiment",
    "aggregate",
    "predictions_for",
    "write_results",
    "synthetic_gmm",
]

SUMMARY_FIELDS = (
    "model", "combiner", "n", "d", "trials", "bias", "mse_vs_mle", "se_mse_vs_mle",
    "mse_vs_true", "se_mse_vs_true", "predicted_mse_vs_mle",
)

MODELS = ("ellipse", "variance", "gmm")
PARTITIONS = ("iid_random", "label_wise", "skewed")
COMBINERS = {
    "ellipse": ("linear", "kl", "kl_bootstrap"),
    "variance": ("linear", "kl", "kl_bootstrap"),
    "gmm": ("naive_linear", "matched_linear", "kl_bootstrap"),
}

# substream stages
_DATA, _PART, _COMBINE, _FIT, _TEST = range(5)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``antithetic`` pairs trials ``(2j, 2j + 1)``: the second reuses the first
    trial's noise reflected through the sampling mean (and its partition).
    Each trial still has the correct distribution, so averages stay unbiased,
    while odd-order noise terms cancel within a pair. Ellipse only.
    """

    model: str
    n_grid: tuple = (1000,)
    d: int = 10
    trials: int = 100
    combiners: tuple = ()
    partition: str = "iid_random"
    parameterization: str = "natural"
    master_seed: int = 0
    # ellipse
    a: float = 1.0
    b: float = 5.0
    theta_star: float = math.pi / 4
    misspecified: Optional[tuple] = None
    antithetic: bool = False
    # variance
    sigma2_star: float = 1.0
    # gmm
    K: int = 3
    dim: int = 2
    separation: float = 8.0
    gmm_seed: int = 0
    n_init: int = 1
    n_test: int = 2000
    skew: float = 0.8
    # bootstrap
    m_per_local: int = 500
    grid_size: int = 1024

    def __post_init__(self):
        n_grid = self.n_grid
        if isinstance(n_grid, (int, np.integer)):
            n_grid = (n_grid,)
        object.__setattr__(self, "n_grid", tuple(int(n) for n in n_grid))
        combiners = self.combiners
        if isinstance(combiners, str):
            combiners = tuple(c.strip() for c in combiners.split(",") if c.strip())
        if not combiners and self.model in COMBINERS:
            combiners = COMBINERS[self.model][:2]
        object.__setattr__(self, "combiners", tuple(combiners))
        if self.misspecified is not None:
            object.__setattr__(self, "misspecified", tuple(float(v) for v in self.misspecified))
        self.validate()

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODELS}")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        if int(self.d) < 1:
            raise ConfigError("d must be >= 1")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ConfigError("n_grid must be a nonempty list of positive sizes")
        if self.partition not in PARTITIONS:
            raise ConfigError(f"unknown partition {self.partition!r}; choose from {PARTITIONS}")
        bad = [c for c in self.combiners if c not in COMBINERS[self.model]]
        if bad:
            raise ConfigError(f"combiners {bad} are not available for model {self.model!r}")
        if self.partition in ("iid_random", "skewed"):
            for n in self.n_grid:
                if n % self.d:
                    raise ConfigError(f"n={n} is not divisible by d={self.d}")
        if self.model != "gmm" and self.partition != "iid_random":
            raise ConfigError(f"partition {self.partition!r} needs labelled data (gmm model)")
        if self.model == "gmm" and self.partition == "label_wise" and self.d != self.K:
            raise ConfigError("label_wise partitioning needs d equal to the number of labels K")
        if self.model == "ellipse":
            if not (self.a > 0 and self.b > 0):
                raise ConfigError("ellipse semi-axes must be positive")
            if self.misspecified is None and not (-math.pi < self.theta_star <= math.pi):
                raise ConfigError("theta_star must lie in (-pi, pi]")
            if self.misspecified is not None and len(self.misspecified) != 2:
                raise ConfigError("misspecified mean must have two coordinates")
            if self.parameterization != "natural":
                raise ConfigError("the ellipse model is only parameterised by its angle")
        elif self.antithetic:
            raise ConfigError("antithetic pairs are only defined for the ellipse model")
        if self.model != "ellipse" and self.misspecified is not None:
            raise ConfigError("misspecified truth is only supported for the ellipse model")
        if self.model == "variance":
            if not self.sigma2_star > 0:
                raise ConfigError("sigma2_star must be positive")
            if self.parameterization not in ("natural", "variance", "std", "precision"):
                raise ConfigError(f"unknown parameterization {self.parameterization!r}")
        if self.model == "gmm":
            if self.K < 1 or self.dim < 1:
                raise ConfigError("K and dim must be positive")
            if not 0.0 <= self.skew <= 1.0:
                raise ConfigError("skew must lie in [0, 1]")
            for n in self.n_grid:
                if n // self.d < self.K and self.partition != "label_wise":
                    raise ConfigError(f"partitions of size {n // self.d} cannot fit K={self.K} components")
        if "kl_bootstrap" in self.combiners and self.m_per_local < max(1, self.K if self.model == "gmm" else 1):
            raise ConfigError("m_per_local is too small")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        data = {k.replace("-", "_"): v for k, v in mapping.items()}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "model" not in data:
            raise ConfigError("config needs a model")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TrialRecord:
    model: str
    combiner: str
    n: int
    d: int
    trial: int
    seed: int
    theta_hat_f: float
    theta_hat_mle: float
    theta_star: float
    err_vs_mle: float
    err_vs_true: float
    bias: float
    flagged: bool = False
    message: str = ""


# ---------------------------------------------------------------------------
# partitioning


def partition_data(sample: SampleSet, d: int, scheme: str = "iid_random", seed=0, skew: float = 0.8) -> list:
    """Split ``sample`` into ``d`` groups.

    ``iid_random``
        seeded uniform shuffle, then ``d`` equal consecutive blocks.
    ``label_wise``
        one group per distinct label, in increasing label order.
    ``skewed``
        equal-sized groups where group ``j`` draws a ``skew`` share of its
        points from label ``j mod L`` and the rest at random from what is left.
    """
    n = len(sample)
    if d < 1:
        raise ValueError("d must be >= 1")
    if scheme == "iid_random":
        if n % d:
            raise ValueError(f"n={n} is not divisible by d={d}")
        perm = np.random.default_rng(seed).permutation(n)
        return [sample.subset(np.sort(block)) for block in np.split(perm, d)]
    if scheme in ("label_wise", "skewed") and sample.labels is None:
        raise ValueError(f"{scheme} partitioning needs labels")
    if scheme == "label_wise":
        values = np.unique(sample.labels)
        if values.size != d:
            raise ValueError(f"label_wise partitioning needs exactly d={d} labels, found {values.size}")
        return [sample.subset(np.flatnonzero(sample.labels == v)) for v in values]
    if scheme == "skewed":
        if n % d:
            raise ValueError(f"n={n} is not divisible by d={d}")
        rng = np.random.default_rng(seed)
        size = n // d
        values = np.unique(sample.labels)
        pools = {v: list(rng.permutation(np.flatnonzero(sample.labels == v))) for v in values}
        groups = []
        quota = int(round(skew * size))
        for j in range(d):
            pool = pools[values[j % values.size]]
            take = min(quota, len(pool))
            groups.append(pool[:take])
            del pool[:take]
        rest = rng.permutation(np.concatenate([np.asarray(p, dtype=np.int64) for p in pools.values()]))
        pos = 0
        for g in groups:
            need = size - len(g)
            g.extend(rest[pos:pos + need])
            pos += need
        return [sample.subset(np.sort(np.asarray(g, dtype=np.int64))) for g in groups]
    raise ValueError(f"unknown partition scheme {scheme!r}")


# ---------------------------------------------------------------------------
# per-model trial logic


def synthetic_gmm(K: int = 3, dim: int = 2, separation: float = 8.0, seed=0) -> gmm_mod.GmmParams:
    """Well-separated mixture: means evenly spaced on a circle of radius ``separation``.

    Covariances are random rotations of ``diag`` entries in ``[0.5, 1.5]``;
    weights are uniform. Extra dimensions beyond two carry zero means.
    """
    rng = substream(seed, 0)
    means = np.zeros((K, dim))
    ang = 2 * math.pi * np.arange(K) / K
    means[:, 0] = separation * np.cos(ang)
    if dim > 1:
        means[:, 1] = separation * np.sin(ang)
    covs = np.empty((K, dim, dim))
    for k in range(K):
        Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        covs[k] = (Q * rng.uniform(0.5, 1.5, dim)) @ Q.T
        covs[k] = 0.5 * (covs[k] + covs[k].T)
    return gmm_mod.GmmParams(np.full(K, 1.0 / K), means, covs)


@lru_cache(maxsize=16)
def _context(cfg: ExperimentConfig) -> dict:
    ctx: dict = {}
    if cfg.model == "ellipse":
        model = EllipseModel(cfg.a, cfg.b)
        ctx["model"] = model
        if cfg.misspecified is None:
            ctx["theta_star"] = float(cfg.theta_star)
            ctx["center"] = model.eta([cfg.theta_star])
        else:
            center = np.asarray(cfg.misspecified, dtype=float)
            ctx["center"] = center
            ctx["theta_star"] = maximize_expected_loglik(model, center, cfg.grid_size)[0]
    elif cfg.model == "variance":
        fam = zero_mean_gaussian()
        chart = fam.parameterization(cfg.parameterization)
        ctx["family"] = fam
        ctx["chart"] = chart
        ctx["theta_star"] = float(chart.from_natural(np.array([-0.5 / cfg.sigma2_star]))[0])
    else:
        ctx["truth"] = synthetic_gmm(cfg.K, cfg.dim, cfg.separation, cfg.gmm_seed)
    return ctx


def _ellipse_trial(cfg, ctx, n, trial):
    model = ctx["model"]
    base = trial - trial % 2 if cfg.antithetic else trial
    z = substream(cfg.master_seed, n, base, _DATA).standard_normal((n, 2))
    if cfg.antithetic and trial % 2:
        z = -z
    sample = SampleSet(ctx["center"] + z)
    parts = partition_data(sample, cfg.d, cfg.partition, substream_seq(cfg.master_seed, n, base, _PART))
    locals_ = [LocalFit([mle_curved(model, p, cfg.grid_size)], "natural", len(p), k) for k, p in enumerate(parts)]
    mle = mle_curved(model, sample, cfg.grid_size)
    out = {"mle": mle}
    for comb in cfg.combiners:
        if comb == "linear":
            out[comb] = float(linear_average(locals_).theta[0])
        elif comb == "kl":
            out[comb] = float(kl_average_curved(model, locals_, cfg.grid_size).theta[0])
        else:
            sims = [(model.eta(lf.theta), _unit_normal_sampler, lf.source_id) for lf in locals_]
            est = kl_average_bootstrap(lambda s: mle_curved(model, s, cfg.grid_size), sims, cfg.m_per_local,
                                       substream_seq(cfg.master_seed, n, trial, _COMBINE))
            out[comb] = float(est.theta)
    return out, mle, ctx["theta_star"], True


def _unit_normal_sampler(mean, m, rng):
    return mean + rng.standard_normal((m, mean.shape[0]))


def _normal_var_sampler(sigma2, m, rng):
    return rng.normal(0.0, math.sqrt(sigma2), size=(m, 1))


def _variance_trial(cfg, ctx, n, trial):
    fam, chart = ctx["family"], ctx["chart"]
    x = math.sqrt(cfg.sigma2_star) * substream(cfg.master_seed, n, trial, _DATA).standard_normal((n, 1))
    sample = SampleSet(x)
    parts = partition_data(sample, cfg.d, cfg.partition, substream_seq(cfg.master_seed, n, trial, _PART))

    def in_chart(nat):
        return float(np.atleast_1d(chart.from_natural(nat))[0])

    locals_ = [LocalFit([in_chart(mle_full(fam, p))], chart.label, len(p), k) for k, p in enumerate(parts)]
    mle = in_chart(mle_full(fam, sample))
    out = {"mle": mle}
    for comb in cfg.combiners:
        if comb == "linear":
            out[comb] = float(linear_average(locals_).theta[0])
        elif comb == "kl":
            out[comb] = float(kl_average_full(fam, locals_).theta[0])
        else:
            sims = [(-0.5 / float(chart.to_natural(lf.theta)[0]), _normal_var_sampler, lf.source_id) for lf in locals_]
            est = kl_average_bootstrap(lambda s: in_chart(mle_full(fam, s)), sims, cfg.m_per_local,
                                       substream_seq(cfg.master_seed, n, trial, _COMBINE))
            out[comb] = float(est.theta)
    return out, mle, ctx["theta_star"], False


def _gmm_trial(cfg, ctx, n, trial):
    truth = ctx["truth"]
    X, labels = gmm_mod.sample_gmm(truth, n, substream(cfg.master_seed, n, trial, _DATA), return_labels=True)
    X_test = gmm_mod.sample_gmm(truth, cfg.n_test, substream(cfg.master_seed, n, trial, _TEST))
    sample = SampleSet(X, labels)
    parts = partition_data(sample, cfg.d, cfg.partition, substream_seq(cfg.master_seed, n, trial, _PART), cfg.skew)
    fits = [
        gmm_mod.em_fit(p, cfg.K, seed=substream_seq(cfg.master_seed, n, trial, _FIT, k), n_init=cfg.n_init)
        for k, p in enumerate(parts)
    ]
    glob = gmm_mod.em_fit(sample, cfg.K, seed=substream_seq(cfg.master_seed, n, trial, _FIT, cfg.d), n_init=cfg.n_init)
    mle = gmm_mod.gmm_loglik(glob, X_test)
    out = {"mle": mle}
    for comb in cfg.combiners:
        if comb == "naive_linear":
            model = gmm_mod.matched_linear_average(fits, "naive")
        elif comb == "matched_linear":
            model = gmm_mod.matched_linear_average(fits, "matched")
        else:
            model = gmm_mod.kl_average_gmm(fits, cfg.m_per_local, cfg.K,
                                           seed=substream_seq(cfg.master_seed, n, trial, _COMBINE),
                                           n_init=cfg.n_init)
        out[comb] = gmm_mod.gmm_loglik(model, X_test)
    return out, mle, gmm_mod.gmm_loglik(truth, X_test), False


_TRIALS = {"ellipse": _ellipse_trial, "variance": _variance_trial, "gmm": _gmm_trial}


def _run_trial(cfg: ExperimentConfig, n: int, trial: int) -> list:
    names = ("mle",) + cfg.combiners
    try:
        est, mle, ref, angular = _TRIALS[cfg.model](cfg, _context(cfg), n, trial)
    except Exception as exc:  # recorded, not raised
        msg = f"{type(exc).__name__}: {exc}"
        nan = math.nan
        return [TrialRecord(cfg.model, c, n, cfg.d, trial, cfg.master_seed, nan, nan, nan, nan, nan, nan, True, msg)
                for c in names]
    diff = angular_difference if angular else (lambda x, y: x - y)
    recs = []
    for c in names:
        f = est[c]
        dm = float(diff(f, mle))
        dt = float(diff(f, ref))
        recs.append(TrialRecord(cfg.model, c, n, cfg.d, trial, cfg.master_seed, f, mle, ref, dm * dm, dt * dt, dm))
    return recs


def _run_chunk(args) -> list:
    cfg, tasks = args
    out = []
    for n, t in tasks:
        out.extend(_run_trial(cfg, n, t))
    return out


def run_experiment(config: ExperimentConfig, workers: int = 1, chunk: int = 64) -> list:
    """Run every ``(n, trial)`` of ``config``; records come back in ``(n, trial, combiner)`` order.

    ``workers > 1`` spreads trial chunks over a process pool. The output is
    identical for any worker count.
    """
    config.validate()
    tasks = [(n, t) for n in config.n_grid for t in range(config.trials)]
    chunks = [(config, tasks[i:i + chunk]) for i in range(0, len(tasks), chunk)]
    if workers is None or workers <= 1 or len(chunks) == 1:
        results = [_run_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, chunks))
    return [r for block in results for r in block]


# ---------------------------------------------------------------------------
# aggregation and output


def _mean_se(values):
    m = len(values)
    mean = math.fsum(values) / m
    if m < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in values) / (m - 1)
    return mean, math.sqrt(var / m)


def aggregate(records: Sequence[TrialRecord], predictions: Optional[dict] = None) -> list:
    """One summary row per ``(model, combiner, n, d)``.

    Flagged records are excluded; ``trials`` counts the rest. Standard errors
    are ``None`` with fewer than two trials. ``predictions`` maps the same key
    to a predicted ``mse_vs_mle``.
    """
    if len(records) == 0:
        raise ValueError("no records to aggregate")
    groups: dict = {}
    for r in records:
        groups.setdefault((r.model, r.combiner, r.n, r.d), []).append(r)
    rows = []
    for key in sorted(groups):
        good = [r for r in groups[key] if not r.flagged]
        row = dict(zip(("model", "combiner", "n", "d"), key))
        row["trials"] = len(good)
        if good:
            row["bias"] = math.fsum(r.bias for r in good) / len(good)
            row["mse_vs_mle"], row["se_mse_vs_mle"] = _mean_se([r.err_vs_mle for r in good])
            row["mse_vs_true"], row["se_mse_vs_true"] = _mean_se([r.err_vs_true for r in good])
        else:
            for k in ("bias", "mse_vs_mle", "se_mse_vs_mle", "mse_vs_true", "se_mse_vs_true"):
                row[k] = None
        row["predicted_mse_vs_mle"] = (predictions or {}).get(key)
        rows.append(row)
    return rows


def predictions_for(config: ExperimentConfig) -> dict:
    """Leading-order ``mse_vs_mle`` for the combiners the theory covers.

    Covers the well-specified ellipse and variance models (``mle``, ``linear``
    and ``kl``); other combinations are absent.
    """
    if config.model == "gmm" or config.misspecified is not None:
        return {}
    ctx = _context(config)
    if config.model == "ellipse":
        model, t = ctx["model"], [config.theta_star]
        gamma_sq = curvature_scalar(model, t) ** 2
    else:
        model = ChartModel(ctx["family"], ctx["chart"])
        t = [ctx["theta_star"]]
        gamma_sq = 0.0
    fisher = float(fisher_info(model, t)[0, 0])
    beta = beta_linear(model, t)
    out = {}
    for n in config.n_grid:
        key = (config.model, "mle", n, config.d)
        out[key] = 0.0
        for comb in config.combiners:
            if comb in ("linear", "kl"):
                b = beta if comb == "linear" else 0.0
                out[(config.model, comb, n, config.d)] = predict_asymptotics(gamma_sq, fisher, b, n, config.d).mse_vs_mle
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(rows, fields, path, fmt):
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields)
            for row in rows:
                w.writerow([_fmt(row[f]) for f in fields])
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump([{f: row[f] for f in fields} for row in rows], fh, indent=1, allow_nan=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def write_results(summary: Sequence[dict], records: Optional[Sequence[TrialRecord]], path, format: str = "csv"):
    """Write the summary table to ``path`` (CSV or JSON).

    Rows are sorted by ``(model, combiner, n, d)`` and floats use the shortest
    round-trip representation. When ``records`` is given, per-trial records go
    to a sibling file ``<path>.records.<format>``.
    """
    rows = sorted(summary, key=lambda r: (r["model"], r["combiner"], r["n"], r["d"]))
    _write_rows(rows, SUMMARY_FIELDS, path, format)
    if records is not None:
        fields = tuple(f.name for f in dataclasses.fields(TrialRecord))
        rec_rows = [dataclasses.asdict(r) for r in records]
        _write_rows(rec_rows, fields, f"{os.fspath(path)}.records.{format}", format)
