"""Experiment runner: scenario presets, CSV ingestion and run reports.

A run trains each requested method on every seed, estimates the collision
matrix, and (for synthetic mixtures) scores it against a Monte Carlo ground
truth. Reports are deterministic functions of the configuration; wall-clock
timings are kept apart from the report body so that reruns compare equal.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import baselines, contrastive, estimator, mixture, posterior
from .errors import ConfigError, NonConvergenceError
from .matrix_core import is_strictly_diag_dominant, matrix_to_csv, row_tvd
from .mixture import Dataset, GaussianMixture
from .nn import TrainConfig, trace_to_csv

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METHODS = ("gramian", "naive", "calibrated", "mc_dropout")
DEFAULT_HIDDEN = [128] * 6


@dataclass
class ScenarioConfig:
    name: str
    mixture: GaussianMixture | None = None
    csv_path: str | None = None
    label_column: str = "label"
    n_per_class: int = 250
    methods: list[str] = field(default_factory=lambda: ["gramian", "naive"])
    recovery: estimator.RecoveryConfig = field(default_factory=estimator.RecoveryConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=500, batch_size=32, learning_rate=1e-2, momentum=0.9))
    hidden: list[int] = field(default_factory=lambda: list(DEFAULT_HIDDEN))
    m_per_cell: int = 10_000
    m_comparison: int = posterior.DEFAULT_M
    seeds: list[int] = field(default_factory=lambda: [0])
    mc_samples: int = 200_000
    truth_seed: int = 0
    dropout_rate: float = 0.1
    dropout_passes: int = baselines.DEFAULT_DROPOUT_PASSES
    ece_bins: int = baselines.DEFAULT_BINS
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if (self.mixture is None) == (self.csv_path is None):
            raise ConfigError("exactly one of mixture or csv_path must be given")
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.n_per_class < 2 or self.m_per_cell < 1 or self.m_comparison < 1:
            raise ConfigError("n_per_class >= 2, m_per_cell >= 1 and m_comparison >= 1 are required")
        if "mc_dropout" in self.methods and not 0 < self.dropout_rate < 1:
            raise ConfigError("mc_dropout needs a dropout rate in (0, 1)")

    @property
    def synthetic(self) -> bool:
        return self.mixture is not None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "mixture": None if self.mixture is None else self.mixture.to_json(),
            "csv_path": self.csv_path,
            "label_column": self.label_column,
            "n_per_class": self.n_per_class,
            "methods": list(self.methods),
            "recovery": self.recovery.to_json(),
            "train": self.train.to_json(),
            "hidden": list(self.hidden),
            "m_per_cell": self.m_per_cell,
            "m_comparison": self.m_comparison,
            "seeds": list(self.seeds),
            "mc_samples": self.mc_samples,
            "truth_seed": self.truth_seed,
            "dropout_rate": self.dropout_rate,
            "dropout_passes": self.dropout_passes,
            "ece_bins": self.ece_bins,
            "split": list(self.split),
        }

    @classmethod
    def from_json(cls, obj) -> "ScenarioConfig":
        if isinstance(obj, (str, Path)):
            obj = json.loads(Path(obj).read_text())
        obj = dict(obj)
        try:
            if obj.get("mixture") is not None:
                obj["mixture"] = GaussianMixture.from_json(obj["mixture"])
            if "recovery" in obj:
                rec = dict(obj["recovery"])
                if rec.get("init") is not None:
                    rec["init"] = np.asarray(rec["init"], dtype=float)
                obj["recovery"] = estimator.RecoveryConfig(**rec)
            if "train" in obj:
                obj["train"] = TrainConfig(**obj["train"])
            if "split" in obj:
                obj["split"] = tuple(obj["split"])
            return cls(**obj)
        except (TypeError, KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid scenario config: {exc}") from exc


def _preset(name: str, gm: GaussianMixture, n_per_class: int) -> ScenarioConfig:
    return ScenarioConfig(name=name, mixture=gm, n_per_class=n_per_class, methods=list(METHODS))


PRESETS = {
    "A3": lambda: _preset("A3", mixture.scenario_a(3), 250),
    "A4": lambda: _preset("A4", mixture.scenario_a(4), 250),
    "A5": lambda: _preset("A5", mixture.scenario_a(5), 250),
    "B0.15": lambda: _preset("B0.15", mixture.scenario_b(0.15), 10_000),
    "B0.25": lambda: _preset("B0.25", mixture.scenario_b(0.25), 10_000),
    "B0.35": lambda: _preset("B0.35", mixture.scenario_b(0.35), 10_000),
    "C": lambda: _preset("C", mixture.scenario_c(), 10_000),
}


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- CSV ingestion ---------------------------------------------------------


def _parse_float(text: str):
    try:
        return float(text)
    except ValueError:
        return None


def load_csv_dataset(path, label_column: str = "label", standardize: bool = True) -> Dataset:
    """Read a labelled table, one-hot encode categorical columns, standardise.

    Labels are mapped to 0-based indices in sorted order (numerically when
    every label parses as a number). The class mapping, the categorical
    encodings and the scaler are stored in ``metadata``.
    """
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigError(f"{path}: file is empty") from None
    header = [h.strip() for h in header]
    if label_column not in header:
        raise ConfigError(f"{path}: no label column {label_column!r}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
        rows.append([c.strip() for c in row])
    if not rows:
        raise ConfigError(f"{path}: no data rows")

    li = header.index(label_column)
    raw_labels = [r[li] for r in rows]
    uniq = sorted(set(raw_labels))
    if all(_parse_float(u) is not None for u in uniq):
        uniq = sorted(uniq, key=float)
    if len(uniq) < 2:
        raise ConfigError(f"{path}: only one class present")
    class_index = {u: k for k, u in enumerate(uniq)}
    labels = np.array([class_index[v] for v in raw_labels])

    columns, names, categorical, warnings_ = [], [], {}, []
    for ci, name in enumerate(header):
        if ci == li:
            continue
        values = [r[ci] for r in rows]
        parsed = [_parse_float(v) for v in values]
        if all(p is not None for p in parsed):
            columns.append(np.array(parsed))
            names.append(name)
            continue
        levels = sorted(set(values))
        categorical[name] = levels
        for level in levels:
            columns.append(np.array([1.0 if v == level else 0.0 for v in values]))
            names.append(f"{name}={level}")
    features = np.column_stack(columns) if columns else np.zeros((len(rows), 0))

    scaler = None
    if standardize:
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        scale = np.where(std > 0, std, 1.0)
        for name, s in zip(names, std):
            if s == 0:
                msg = f"column {name!r} is constant; kept with scale 1"
                log.warning(msg)
                warnings_.append(msg)
        features = (features - mean) / scale
        scaler = {"mean": mean.tolist(), "scale": scale.tolist()}
    metadata = {
        "source": str(path),
        "feature_names": names,
        "class_labels": uniq,
        "categorical": categorical,
        "scaler": scaler,
        "warnings": warnings_,
    }
    return Dataset(features, labels, len(uniq), metadata)


# -- divergence table ------------------------------------------------------


def divergence_curve(mu_grid) -> list[dict]:
    rows = []
    for mu in mu_grid:
        mu = float(mu)
        if mu < 0:
            raise ValueError("mu values must be non-negative")
        tvd, hel, kl = mixture.reference_divergences(mu)
        rows.append(
            {
                "mu": mu,
                "collision": mixture.gaussian_collision_divergence(mu),
                "tvd": tvd,
                "hellinger": hel,
                "kl": kl,
            }
        )
    return rows


def divergence_curve_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["mu", "collision", "tvd", "hellinger", "kl"], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) for k, v in row.items()})
    return buf.getvalue()


# -- scenario runs ---------------------------------------------------------


def _nan_to_none(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


def _matrix_summary(S: np.ndarray, priors: np.ndarray, S_true: np.ndarray | None) -> dict:
    precision, recall = estimator.precision_recall_from_s(S, priors)
    out = {
        "S_hat": S.tolist(),
        "pber": mixture.pber_from_s(S, priors),
        "precision": [_nan_to_none(float(p)) for p in precision],
        "recall": recall.tolist(),
    }
    if S_true is not None:
        mx, avg = row_tvd(S, S_true)
        out["tvd_max"] = mx
        out["tvd_avg"] = avg
    return out


@dataclass
class RunReport:
    body: dict
    timings: dict = field(default_factory=dict)

    def to_json(self, include_timings: bool = False) -> str:
        body = dict(self.body)
        if include_timings:
            body["timings"] = self.timings
        return json.dumps(body, sort_keys=True, indent=2)

    def method_tvds(self, method: str) -> list[float]:
        return [s["methods"][method]["tvd_max"] for s in self.body["seeds"] if "tvd_max" in s["methods"].get(method, {})]

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "timings.json").write_text(json.dumps(self.timings, sort_keys=True, indent=2))
        rows = ["seed,method,tvd_max,tvd_avg,pber"]
        for s in self.body["seeds"]:
            for method, res in sorted(s["methods"].items()):
                if "S_hat" not in res:
                    continue
                matrix_to_csv(np.asarray(res["S_hat"]), out / f"s_hat_{method}_seed{s['seed']}.csv")
                rows.append(
                    f"{s['seed']},{method},{res.get('tvd_max', '')},{res.get('tvd_avg', '')},{res['pber']}"
                )
                if res.get("loss_trace"):
                    trace_to_csv(res["loss_trace"], out / f"loss_{method}_seed{s['seed']}.csv")
        (out / "summary.csv").write_text("\n".join(rows) + "\n")
        if self.body.get("truth"):
            matrix_to_csv(np.asarray(self.body["truth"]["S"]), out / "s_true.csv")
        return out


class _Timer:
    def __init__(self, sink: dict, key: str):
        self.sink, self.key = sink, key

    def __enter__(self):
        self.start = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.key] = self.sink.get(self.key, 0.0) + time.perf_counter() - self.start


def _load_data(config: ScenarioConfig, seed: int) -> Dataset:
    if config.synthetic:
        return mixture.sample(config.mixture, config.n_per_class, seed)
    return load_csv_dataset(config.csv_path, config.label_column)


def _run_seed(config, seed, priors, S_true, timings) -> dict:
    t = lambda stage: _Timer(timings, f"seed{seed}.{stage}")  # noqa: E731
    data = _load_data(config, seed)
    train_set, val_set, test_set = data.split(config.split, seed=seed)
    train_cfg = TrainConfig(**{**config.train.to_json(), "seed": seed})
    result: dict = {"seed": seed, "methods": {}, "stages": []}
    methods = result["methods"]
    gm = config.mixture
    y_true = mixture.true_posterior(gm, test_set.features) if config.synthetic and len(test_set) else None

    def posterior_tvd(Y):
        return float(np.mean(0.5 * np.abs(Y - y_true).sum(axis=1)))

    # unequal priors make S non-symmetric, so symmetrising would bias it
    recovery_cfg = config.recovery
    if not np.allclose(priors, 1.0 / len(priors), rtol=0, atol=1e-12):
        recovery_cfg = replace(config.recovery, enforce_symmetry=False)

    if "gramian" in config.methods:
        res: dict = {"warnings": []}
        methods["gramian"] = res
        stage = "train_v"
        try:
            with t("train_v"):
                result["stages"].append("train_v")
                model = contrastive.train_contrastive(train_set, train_cfg, hidden=config.hidden)
            res["loss_trace"] = model.metadata["loss_trace"]
            stage = "estimate_g"
            with t("estimate_g"):
                gram = estimator.estimate_gramian(model.similarity_batch, train_set, config.m_per_cell, seed)
            res["G_hat"] = gram.G.tolist()
            stage = "recover_s"
            with t("recover_s"):
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        S_hat, rep = estimator.recover_collision_matrix(gram.G, recovery_cfg)
                except NonConvergenceError as exc:
                    S_hat, rep = exc.best, exc.report
                    res["warnings"].append(f"recovery did not reach threshold ({rep.status})")
            res["recovery"] = rep.to_json()
            res["warnings"].extend(rep.warnings)
            res.update(_matrix_summary(S_hat, priors, S_true))
            stage = "posterior"
            if len(test_set) and len(val_set):
                with t("posterior"):
                    sets = posterior.ComparisonSets.from_dataset(val_set, config.m_comparison, seed)
                    ests = posterior.estimate_posterior(model.similarity_batch, S_hat, test_set.features, sets)
                Y = posterior.posterior_matrix(ests)
                res["mean_projection_distance"] = float(np.mean([e.projection_distance for e in ests]))
                if y_true is not None:
                    res["posterior_tvd"] = posterior_tvd(Y)
        except Exception as exc:  # attach and keep going with the other methods
            res["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}

    if {"naive", "calibrated"} & set(config.methods):
        try:
            with t("train_classifier"):
                result["stages"].append("train_classifier")
                net, trace = baselines.train_classifier(train_set, train_cfg, hidden=config.hidden)
            if "naive" in config.methods:
                S_hat = baselines.plug_in_collision_matrix(net.predict_proba, train_set)
                methods["naive"] = {"loss_trace": trace, **_matrix_summary(S_hat, priors, S_true)}
                if y_true is not None:
                    methods["naive"]["posterior_tvd"] = posterior_tvd(net.predict_proba(test_set.features))
            if "calibrated" in config.methods:
                cal = baselines.fit_temperature(net, val_set, bins=config.ece_bins)
                S_hat = baselines.plug_in_collision_matrix(cal.predict_proba, train_set)
                methods["calibrated"] = {"temperature": cal.temperature, **_matrix_summary(S_hat, priors, S_true)}
                if y_true is not None:
                    methods["calibrated"]["posterior_tvd"] = posterior_tvd(cal.predict_proba(test_set.features))
        except Exception as exc:
            for m in {"naive", "calibrated"} & set(config.methods):
                methods.setdefault(m, {})["error"] = {
                    "stage": "train_classifier",
                    "type": type(exc).__name__,
                    "message": str(exc),
                }

    if "mc_dropout" in config.methods:
        try:
            with t("train_dropout_classifier"):
                result["stages"].append("train_dropout_classifier")
                dnet, trace = baselines.train_classifier(
                    train_set, train_cfg, hidden=config.hidden, dropout=config.dropout_rate
                )

            def post(X):
                return baselines.mc_dropout_posterior(dnet, X, config.dropout_passes, seed)

            S_hat = baselines.plug_in_collision_matrix(post, train_set)
            methods["mc_dropout"] = {"loss_trace": trace, **_matrix_summary(S_hat, priors, S_true)}
            if y_true is not None:
                methods["mc_dropout"]["posterior_tvd"] = posterior_tvd(post(test_set.features))
        except Exception as exc:
            methods.setdefault("mc_dropout", {})["error"] = {
                "stage": "mc_dropout",
                "type": type(exc).__name__,
                "message": str(exc),
            }
    return result


def run_scenario(config: ScenarioConfig) -> RunReport:
    """Run every method on every seed and aggregate the comparison."""
    config.validate()
    timings: dict = {}
    body: dict = {"schema_version": SCHEMA_VERSION, "config": config.to_json(), "truth": None}
    S_true = None
    if config.synthetic:
        gm = config.mixture
        priors = gm.priors
        with _Timer(timings, "truth"):
            S_true, se = mixture.true_collision_matrix(gm, config.mc_samples, config.truth_seed)
            ber, ber_se = mixture.bayes_error_rate(gm, config.mc_samples, config.truth_seed)
        body["truth"] = {
            "S": S_true.tolist(),
            "stderr": se.tolist(),
            "ber": ber,
            "ber_stderr": ber_se,
            "pber": mixture.pber_from_s(S_true, priors),
            "diag_dominant": is_strictly_diag_dominant(S_true),
        }
    else:
        full = load_csv_dataset(config.csv_path, config.label_column)
        priors = full.class_counts() / len(full)
        body["dataset"] = {k: v for k, v in full.metadata.items()}
        body["dataset"]["class_counts"] = full.class_counts().tolist()

    body["seeds"] = [_run_seed(config, seed, priors, S_true, timings) for seed in config.seeds]

    summary = {}
    for method in config.methods:
        per_seed = [s["methods"].get(method, {}) for s in body["seeds"]]
        entry = {"errors": sum("error" in r for r in per_seed)}
        for key in ("tvd_max", "tvd_avg", "pber", "posterior_tvd"):
            vals = [r[key] for r in per_seed if key in r]
            if vals:
                entry[f"{key}_median"] = float(np.median(vals))
                entry[f"{key}_mean"] = float(np.mean(vals))
        summary[method] = entry
    body["summary"] = summary
    return RunReport(body, timings)
