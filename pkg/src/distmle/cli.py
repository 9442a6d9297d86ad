"""Command-line entry point: ``distmle {simulate,curvature,predict,gmm-demo}``.

Exit status is 0 on success, 2 for usage or configuration errors and 1 for
failures while running.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .errors import ConfigError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so ``main`` owns exit codes."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _theta(text: str) -> float:
    """Angle in radians; accepts ``pi/4``-style fractions of pi."""
    t = text.strip().lower()
    if "pi" in t:
        num, _, den = t.partition("/")
        coef = num.replace("pi", "").replace("*", "").strip()
        val = math.pi * (float(coef) if coef not in ("", "+", "-") else (-1.0 if coef == "-" else 1.0))
        return val / float(den) if den else val
    return float(t)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="distmle", description="Distributed MLE combiners: simulation and theory.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="run a seeded Monte-Carlo experiment")
    s.add_argument("--config", help="JSON file with ExperimentConfig keys (flags override it)")
    s.add_argument("--model", choices=("ellipse", "variance", "gmm"))
    s.add_argument("--a", type=float)
    s.add_argument("--b", type=float)
    s.add_argument("--theta-star", type=_theta)
    s.add_argument("--sigma2-star", type=float)
    s.add_argument("--n", type=_ints, dest="n_grid", help="sample sizes, comma separated")
    s.add_argument("--d", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--combiners", help="comma-separated combiner names")
    s.add_argument("--partition", choices=("iid_random", "label_wise", "skewed"))
    s.add_argument("--parameterization", choices=("natural", "variance", "std", "precision"))
    s.add_argument("--seed", type=int, dest="master_seed")
    s.add_argument("--misspecified", type=_floats, help="mean of the N(mean, I) truth, e.g. 0,0.5")
    s.add_argument("--antithetic", action="store_true", default=None)
    s.add_argument("--m-per-local", type=int)
    s.add_argument("--K", type=int)
    s.add_argument("--n-init", type=int)
    s.add_argument("--skew", type=float)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", help="output path (default: CSV on stdout)")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--records", action="store_true", help="also write per-trial records next to --out")

    c = sub.add_parser("curvature", help="Fisher information and statistical curvature")
    c.add_argument("--model", choices=("ellipse",), default="ellipse")
    c.add_argument("--a", type=float, default=1.0)
    c.add_argument("--b", type=float, default=5.0)
    c.add_argument("--theta", type=_theta, required=True)

    r = sub.add_parser("predict", help="leading-order bias and MSE of a combiner")
    r.add_argument("--gamma-sq", type=float)
    r.add_argument("--fisher", type=float)
    r.add_argument("--beta", type=float)
    r.add_argument("--model", choices=("ellipse",), help="derive gamma^2, I and beta from a model")
    r.add_argument("--a", type=float, default=1.0)
    r.add_argument("--b", type=float, default=5.0)
    r.add_argument("--theta", type=_theta)
    r.add_argument("--combiner", choices=("kl", "linear"), default="kl")
    r.add_argument("--n", type=int, required=True)
    r.add_argument("--d", type=int, required=True)

    g = sub.add_parser("gmm-demo", help="fit local mixtures and compare the combiners")
    g.add_argument("--data", help="headerless numeric CSV; optional trailing integer label column")
    g.add_argument("--labels", action="store_true", help="treat the last CSV column as labels")
    g.add_argument("--K", type=int, default=3)
    g.add_argument("--d", type=int, default=10)
    g.add_argument("--n", type=int, default=500)
    g.add_argument("--partition", choices=("iid_random", "label_wise", "skewed"), default="skewed")
    g.add_argument("--skew", type=float, default=0.8)
    g.add_argument("--m-per-local", type=int, default=500)
    g.add_argument("--test-fraction", type=float, default=0.2)
    g.add_argument("--seed", type=int, default=0)
    return p


# ---------------------------------------------------------------------------


_SIM_KEYS = (
    "model", "a", "b", "theta_star", "sigma2_star", "n_grid", "d", "trials", "combiners", "partition",
    "parameterization", "master_seed", "misspecified", "antithetic", "m_per_local", "K", "n_init", "skew",
)


def _cmd_simulate(args) -> int:
    from .harness import ExperimentConfig, aggregate, predictions_for, run_experiment, write_results, SUMMARY_FIELDS

    mapping = {}
    if args.config:
        try:
            with open(args.config) as fh:
                mapping = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(mapping, dict):
            raise ConfigError("config file must hold a JSON object")
        if "n" in mapping:
            mapping["n_grid"] = mapping.pop("n")
        if "seed" in mapping:
            mapping["master_seed"] = mapping.pop("seed")
    for key in _SIM_KEYS:
        val = getattr(args, key)
        if val is not None:
            mapping[key] = val
    if "model" not in mapping:
        raise _UsageError("simulate: --model is required (or a config file with a model)")
    cfg = ExperimentConfig.from_mapping(mapping)
    records = run_experiment(cfg, workers=args.workers)
    summary = aggregate(records, predictions_for(cfg))
    flagged = sum(r.flagged for r in records)
    if flagged:
        print(f"warning: {flagged} trial records flagged as failed fits", file=sys.stderr)
    if args.out:
        write_results(summary, records if args.records else None, args.out, args.format)
    else:
        import csv
        import io

        from .harness import _fmt

        buf = io.StringIO()
        if args.format == "json":
            json.dump(summary, buf, indent=1)
            buf.write("\n")
        else:
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(SUMMARY_FIELDS)
            for row in summary:
                w.writerow([_fmt(row[f]) for f in SUMMARY_FIELDS])
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _cmd_curvature(args) -> int:
    from .curved import EllipseModel, curvature_general, curvature_scalar

    model = EllipseModel(args.a, args.b)
    rep = curvature_general(model, [args.theta])
    print(f"model      ellipse(a={args.a:g}, b={args.b:g})")
    print(f"theta      {args.theta:.10g}")
    print(f"fisher     {rep.fisher_info[0, 0]:.10g}")
    print(f"gamma      {curvature_scalar(model, [args.theta]):.10g}")
    print(f"gamma_sq   {rep.gamma_sq:.10g}")
    print(f"lambda     {rep.lambda_[0, 0]:.10g}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    from .theory import beta_linear, predict_asymptotics

    if args.model:
        from .curved import EllipseModel, curvature_scalar, fisher_info

        if args.theta is None:
            raise _UsageError("predict: --theta is required with --model")
        model = EllipseModel(args.a, args.b)
        gamma_sq = curvature_scalar(model, [args.theta]) ** 2
        fisher = float(fisher_info(model, [args.theta])[0, 0])
        beta = beta_linear(model, [args.theta]) if args.combiner == "linear" else 0.0
    else:
        if args.gamma_sq is None or args.fisher is None:
            raise _UsageError("predict: give --gamma-sq and --fisher, or --model and --theta")
        gamma_sq, fisher = args.gamma_sq, args.fisher
        beta = 0.0 if args.beta is None else args.beta
    if args.n < 1 or args.d < 1:
        raise ConfigError("n and d must be positive")
    try:
        pred = predict_asymptotics(gamma_sq, fisher, beta, args.n, args.d)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"gamma_sq            {gamma_sq:.10g}")
    print(f"fisher              {fisher:.10g}")
    print(f"beta                {beta:.10g}")
    print(f"bias_vs_mle         {pred.bias_vs_mle:.6g}")
    print(f"mse_vs_mle          {pred.mse_vs_mle:.6g}")
    print(f"mse_excess_vs_true  {pred.mse_excess_vs_true:.6g}")
    print(f"lower_bound         {pred.lower_bound:.6g}")
    return EXIT_OK


def _load_csv(path, labels: bool):
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read data {path}: {exc}") from None
    if labels:
        if arr.shape[1] < 2:
            raise ConfigError("a label column needs at least one data column")
        lab = arr[:, -1]
        if not np.all(lab == np.round(lab)):
            raise ConfigError("label column must hold integers")
        return arr[:, :-1], lab.astype(np.int64)
    return arr, None


def _cmd_gmm_demo(args) -> int:
    from . import gmm
    from .expfam import SampleSet
    from .harness import partition_data, synthetic_gmm
    from .rng import substream, substream_seq

    if args.data:
        X, labels = _load_csv(args.data, args.labels)
        rng = substream(args.seed, 0)
        perm = rng.permutation(X.shape[0])
        n_test = int(round(args.test_fraction * X.shape[0]))
        if not 0 < n_test < X.shape[0]:
            raise ConfigError("test fraction leaves an empty train or test set")
        test, train = perm[:n_test], perm[n_test:]
        n_train = (train.size // args.d) * args.d if args.partition != "label_wise" else train.size
        train = train[:n_train]
        X_train, X_test = X[train], X[test]
        lab_train = None if labels is None else labels[train]
    else:
        truth = synthetic_gmm(args.K, 2, seed=args.seed)
        X_train, lab_train = gmm.sample_gmm(truth, args.n, substream(args.seed, 1), return_labels=True)
        X_test = gmm.sample_gmm(truth, 2000, substream(args.seed, 2))
    if args.partition != "iid_random" and lab_train is None:
        raise ConfigError(f"{args.partition} partitioning needs labels (use --labels with a label column)")
    sample = SampleSet(X_train, lab_train)
    try:
        parts = partition_data(sample, args.d, args.partition, substream_seq(args.seed, 3), args.skew)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    fits = [gmm.em_fit(p, args.K, seed=substream_seq(args.seed, 4, k)) for k, p in enumerate(parts)]
    results = {
        "global_mle": gmm.em_fit(sample, args.K, seed=substream_seq(args.seed, 5)),
        "naive_linear": gmm.matched_linear_average(fits, "naive"),
        "matched_linear": gmm.matched_linear_average(fits, "matched"),
        "kl_bootstrap": gmm.kl_average_gmm(fits, args.m_per_local, args.K, seed=substream_seq(args.seed, 6)),
    }
    print(f"train points {len(sample)}  test points {X_test.shape[0]}  d={args.d}  K={args.K}")
    for name, model in results.items():
        print(f"{name:15s} train {gmm.gmm_loglik(model, X_train):.6f}  test {gmm.gmm_loglik(model, X_test):.6f}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "curvature": _cmd_curvature,
    "predict": _cmd_predict,
    "gmm-demo": _cmd_gmm_demo,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())
