"""Command-line entry point: ``collision-uq <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import contrastive, estimator, harness, mixture, posterior
from .errors import (
    ConfigError,
    NonConvergenceError,
    QuadratureError,
    SingularMatrixError,
    TrainingDivergenceError,
)
from .matrix_core import matrix_from_csv, matrix_from_json, matrix_to_csv, matrix_to_json
from .nn import TrainConfig

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
NUMERICAL_ERRORS = (SingularMatrixError, NonConvergenceError, TrainingDivergenceError, QuadratureError)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _mixture(args) -> mixture.GaussianMixture:
    if args.preset:
        return harness.preset(args.preset).mixture
    if args.config:
        return mixture.GaussianMixture.from_json(args.config)
    raise ConfigError("give --preset or --config <mixture.json>")


def _dataset(path, args) -> mixture.Dataset:
    return harness.load_csv_dataset(path, args.label_column, standardize=args.standardize)


def _load_matrix(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".json":
        obj = json.loads(path.read_text())
        if "G" in obj:
            return np.asarray(obj["G"], dtype=float)
        return matrix_from_json(obj)
    return matrix_from_csv(path)


def _hidden(text: str) -> list[int]:
    return [int(h) for h in text.split(",") if h]


def cmd_gen_data(args) -> int:
    gm = _mixture(args)
    data = mixture.sample(gm, args.n_per_class, args.seed)
    path = _out_dir(args) / "data.csv"
    data.to_csv(path)
    print(path)
    return 0


def cmd_true_s(args) -> int:
    gm = _mixture(args)
    S, se = mixture.true_collision_matrix(gm, args.mc_samples, args.seed)
    ber, ber_se = mixture.bayes_error_rate(gm, args.mc_samples, args.seed)
    out = _out_dir(args)
    matrix_to_csv(S, out / "s_true.csv")
    report = {
        "S": matrix_to_json(S),
        "stderr": matrix_to_json(se),
        "ber": ber,
        "ber_stderr": ber_se,
        "pber": mixture.pber_from_s(S, gm.priors),
    }
    (out / "s_true.json").write_text(json.dumps(report, indent=2))
    print(json.dumps({"ber": ber, "pber": report["pber"]}))
    return 0


def cmd_train_v(args) -> int:
    data = _dataset(args.data, args)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
        momentum=args.momentum,
    )
    model = contrastive.train_contrastive(data, cfg, hidden=_hidden(args.hidden))
    path = _out_dir(args) / "model_v.json"
    model.save(path)
    print(json.dumps({"model": str(path), "final_pair_risk": model.metadata["final_pair_risk"]}))
    return 0


def cmd_estimate_g(args) -> int:
    model = contrastive.ContrastiveModel.from_json(args.model)
    data = _dataset(args.data, args)
    gram = estimator.estimate_gramian(model.similarity_batch, data, args.m_per_cell, args.seed)
    out = _out_dir(args)
    (out / "gramian.json").write_text(json.dumps(gram.to_json(), indent=2))
    matrix_to_csv(gram.G, out / "gramian.csv")
    print(out / "gramian.json")
    return 0


def cmd_recover_s(args) -> int:
    G = _load_matrix(args.gramian)
    cfg = estimator.RecoveryConfig(
        learning_rate=args.eta, penalty=args.lam, tol=args.gamma, max_iter=args.max_iter
    )
    out = _out_dir(args)
    try:
        S, report = estimator.recover_collision_matrix(G, cfg)
    except NonConvergenceError as exc:
        if not args.allow_unconverged:
            (out / "recovery.json").write_text(json.dumps(exc.report.to_json(), indent=2))
            matrix_to_csv(exc.best, out / "s_hat_best.csv")
            raise
        print(f"warning: {exc}; keeping the best iterate", file=sys.stderr)
        S, report = exc.best, exc.report
    matrix_to_csv(S, out / "s_hat.csv")
    (out / "s_hat.json").write_text(json.dumps(matrix_to_json(S)))
    (out / "recovery.json").write_text(json.dumps(report.to_json(), indent=2))
    print(json.dumps(report.to_json()))
    return 0


def cmd_posterior(args) -> int:
    model = contrastive.ContrastiveModel.from_json(args.model)
    S = _load_matrix(args.s_hat)
    comparison = _dataset(args.comparison, args)
    sets = posterior.ComparisonSets.from_dataset(comparison, args.m, args.seed)
    if args.x is not None:
        x = np.array([float(v) for v in args.x.split(",")])
        est = posterior.estimate_posterior(model.similarity_batch, S, x, sets)
        print(json.dumps(est.to_json()))
        return 0
    if args.queries is None:
        raise ConfigError("give --x for a single query or --queries <csv> for a batch")
    X = np.loadtxt(args.queries, delimiter=",", skiprows=1, ndmin=2)
    ests = posterior.estimate_posterior(model.similarity_batch, S, X, sets)
    K = S.shape[0]
    lines = [",".join([f"y_{k + 1}" for k in range(K)] + ["projection_distance", "condition"])]
    for e in ests:
        lines.append(",".join([repr(float(v)) for v in e.y_hat] + [repr(e.projection_distance), repr(e.condition)]))
    path = _out_dir(args) / "posteriors.csv"
    path.write_text("\n".join(lines) + "\n")
    print(path)
    return 0


def cmd_run_scenario(args) -> int:
    if args.config:
        config = harness.ScenarioConfig.from_json(args.config)
    elif args.preset:
        config = harness.preset(args.preset)
    else:
        raise ConfigError("give --preset or --config <scenario.json>")
    if args.seeds:
        config.seeds = [int(s) for s in args.seeds.split(",")]
    elif args.seed is not None and args.seed_given:
        config.seeds = [args.seed]
    if args.methods:
        config.methods = args.methods.split(",")
    if args.n_per_class:
        config.n_per_class = args.n_per_class
    if args.epochs:
        config.train.epochs = args.epochs
    if args.hidden:
        config.hidden = _hidden(args.hidden)
    config.validate()
    report = harness.run_scenario(config)
    out = report.write(args.out)
    print(json.dumps(report.body["summary"], sort_keys=True))
    print(out / "report.json")
    return 0


def cmd_divergence_curve(args) -> int:
    grid = [float(v) for v in args.mu_grid.split(",")]
    text = harness.divergence_curve_csv(harness.divergence_curve(grid))
    path = _out_dir(args) / "divergence_curve.csv"
    path.write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--preset", choices=sorted(harness.PRESETS))
    common.add_argument("--label-column", default="label")
    common.add_argument("--standardize", action="store_true", help="standardise CSV feature columns")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="collision-uq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="sample a labelled dataset from a mixture")
    p.add_argument("--n-per-class", type=int, default=250)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("true-s", parents=[common], help="Monte Carlo collision matrix and BER")
    p.add_argument("--mc-samples", type=int, default=200_000)
    p.set_defaults(func=cmd_true_s)

    p = sub.add_parser("train-v", parents=[common], help="train the pairwise contrastive model")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--hidden", default="64,64,64")
    p.set_defaults(func=cmd_train_v)

    p = sub.add_parser("estimate-g", parents=[common], help="estimate the Gramian from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--m-per-cell", type=int, default=10_000)
    p.set_defaults(func=cmd_estimate_g)

    p = sub.add_parser("recover-s", parents=[common], help="recover the collision matrix from a Gramian")
    p.add_argument("--gramian", required=True, help="gramian.json or a CSV matrix")
    p.add_argument("--lam", type=float, default=10.0)
    p.add_argument("--eta", type=float, default=1e-2)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=50_000)
    p.add_argument(
        "--allow-unconverged",
        action="store_true",
        help="write the best iterate as s_hat.csv (exit 0) when a noisy Gramian has no exact root",
    )
    p.set_defaults(func=cmd_recover_s)

    p = sub.add_parser("posterior", parents=[common], help="estimate posteriors for query points")
    p.add_argument("--model", required=True)
    p.add_argument("--s-hat", required=True)
    p.add_argument("--comparison", required=True, help="labelled CSV of comparison points")
    p.add_argument("--m", type=int, default=posterior.DEFAULT_M)
    p.add_argument("--x", help="single query as comma-separated values")
    p.add_argument("--queries", help="CSV of query vectors (header row, features only)")
    p.set_defaults(func=cmd_posterior)

    p = sub.add_parser("run-scenario", parents=[common], help="run a full scenario comparison")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--methods", help="comma-separated subset of " + ",".join(harness.METHODS))
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden")
    p.set_defaults(func=cmd_run_scenario)

    p = sub.add_parser("divergence-curve", parents=[common], help="collision vs reference divergences")
    p.add_argument("--mu-grid", default=",".join(str(0.25 * i) for i in range(13)))
    p.set_defaults(func=cmd_divergence_curve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
