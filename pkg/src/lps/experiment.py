"""Training pipelines, per-cohort evaluation and the ten-split experiment protocol."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cohort import (
    GeneratorConfig, SplitSpec, fit_concept_priors, generate_cohort, read_cohort, split_cohort,
)
from .errors import ConfigurationError, LPSError, MetricError, ParseError, TrainingError
from .metrics import (
    auc, bayes_oracle_scores, f1_thresholded_co, median_abs_error, median_half_iqr,
    r_squared, reconstruct_vitals, spearman, welch_t_test,
)
from .model import Architecture, BaselineModel, LPSModel, N_VITALS, fit_scaler, init_model
from .training import (
    TrainConfig, lps_q_inference, train_baseline, train_map_network,
    train_variational_em,
)
from .windkessel import CONCEPTS

METHODS = ("lps", "lps_q", "baseline", "oracle")
METRICS = (
    "auc", "thresholded_co_f1", "co_f1_all_low", "r2_hr", "r2_bp_sys", "r2_bp_dias",
    "mae_hr", "mae_bp_sys", "mae_bp_dias", "spearman_co", "spearman_r", "objective",
    "delta_median_co", "delta_median_r",
)
STAGE_COLUMNS = (
    "vem_selected_epoch", "vem_elbo_first", "vem_elbo_last", "map_selected_epoch",
    "baseline_selected_epoch", "mu_co_low", "mu_co_high", "mu_r_low", "mu_r_high",
)
PI_EPS = 1e-12
WELCH_PAIRS = (("lps", "baseline"), ("lps", "lps_q"), ("lps_q", "baseline"))


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Everything a single train/evaluate run needs besides the data."""

    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    hidden: tuple = (128, 64)
    eta: float = 0.5

    def to_dict(self):
        return {"train": self.train.to_dict(), "split": {"fractions": list(self.split.fractions),
                                                         "seed": self.split.seed},
                "hidden": list(self.hidden), "eta": self.eta}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"train", "split", "hidden", "eta"}
        if unknown:
            raise ConfigurationError(f"unknown run config fields: {sorted(unknown)}")
        split = d.get("split", {})
        return cls(
            train=TrainConfig.from_dict(d.get("train", {})),
            split=SplitSpec(tuple(split.get("fractions", (0.6, 0.2, 0.2))), split.get("seed", 0)),
            hidden=tuple(d.get("hidden", (128, 64))),
            eta=float(d.get("eta", 0.5)),
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(_read_json(path))

    def with_seed(self, seed):
        return replace(self, train=replace(self.train, seed=seed),
                       split=replace(self.split, seed=seed))


@dataclass(frozen=True)
class ExperimentPlan:
    """Ten (by default) independent splits of one cohort, each fully retrained."""

    n_runs: int = 10
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    run: RunConfig = field(default_factory=RunConfig)
    dataset: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigurationError("n_runs must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    def run_seeds(self):
        seeds = [self.seed * 1000 + k for k in range(self.n_runs)]
        if len(set(seeds)) != len(seeds):
            raise ConfigurationError("run seeds must be distinct")
        return seeds

    def to_dict(self):
        return {"n_runs": self.n_runs, "seed": self.seed, "generator": self.generator.to_dict(),
                "run": self.run.to_dict(), "dataset": self.dataset, "workers": self.workers}

    @classmethod
    def from_dict(cls, d, base_dir=None):
        unknown = set(d) - {"n_runs", "seed", "generator", "run", "dataset", "workers"}
        if unknown:
            raise ConfigurationError(f"unknown plan fields: {sorted(unknown)}")
        dataset = d.get("dataset")
        if dataset is not None and base_dir is not None and not Path(dataset).is_absolute():
            dataset = str(Path(base_dir) / dataset)
        return cls(
            n_runs=int(d.get("n_runs", 10)), seed=int(d.get("seed", 0)),
            generator=GeneratorConfig.from_dict(d.get("generator", {})),
            run=RunConfig.from_dict(d.get("run", {})),
            dataset=dataset, workers=int(d.get("workers", 1)),
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(_read_json(path), base_dir=Path(path).parent)

    def cohort(self):
        if self.dataset is not None:
            return read_cohort(self.dataset)
        return generate_cohort(self.generator)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from None


# ---------------------------------------------------------------------------
# training pipelines


def _xy(model, cohort):
    return model.standardize(cohort), np.array([p.y for p in cohort])


def fit_lps(train, val, rc: RunConfig):
    """Fit scaler and priors on ``train``, then run both learning stages."""
    scaler = fit_scaler(train)
    priors = fit_concept_priors(train)
    d_tab, d_wave = len(train[0].tabular), len(train[0].waveform)
    arch = Architecture(N_VITALS + d_tab + d_wave, d_tab, d_wave, hidden=tuple(rc.hidden))
    model = init_model(scaler, priors, d_tab, d_wave, seed=rc.train.seed, arch=arch)
    model.eta = rc.eta
    xs, y = _xy(model, train)
    xv, yv = _xy(model, val)
    model, stage1 = train_variational_em(model, xs, y, xv, yv, rc.train)
    model, stage2 = train_map_network(model, xs, y, xv, yv, rc.train)
    return model, stage1, stage2


def fit_baseline(train, val, rc: RunConfig, scaler=None):
    scaler = scaler or fit_scaler(train)
    xs, y = scaler.apply([p.features() for p in train]), np.array([p.y for p in train])
    xv, yv = scaler.apply([p.features() for p in val]), np.array([p.y for p in val])
    params, res = train_baseline(xs, y, xv, yv, rc.train, hidden=tuple(rc.hidden))
    return BaselineModel(scaler, params, tuple(rc.hidden)), res


# ---------------------------------------------------------------------------
# evaluation


def _concept_metrics(z_hat, pi_hat, cohort, vitals):
    """Evidence-quality metrics shared by LPS and LPS-q."""
    out = {}
    recon = reconstruct_vitals(z_hat)
    for i, name in enumerate(("hr", "bp_sys", "bp_dias")):
        out[f"r2_{name}"] = r_squared(vitals[:, i], recon[:, i])
        out[f"mae_{name}"] = median_abs_error(vitals[:, i], recon[:, i])
    obs = np.array([p.co_observed for p in cohort])
    if obs.any():
        co_true = np.array([p.co for p in cohort if p.co_observed])
        out["thresholded_co_f1"] = f1_thresholded_co(z_hat[obs, 4], co_true)
        out["co_f1_all_low"] = f1_thresholded_co(np.zeros(obs.sum()), co_true)
    true_z = np.array([p.true_z for p in cohort])
    if np.all(np.isfinite(true_z)):
        out["spearman_co"] = spearman(z_hat[:, 4], true_z[:, 4])
        out["spearman_r"] = spearman(z_hat[:, 0], true_z[:, 0])
    q1, q3 = np.quantile(pi_hat, [0.25, 0.75])
    top, bottom = pi_hat >= q3, pi_hat <= q1
    out["delta_median_co"] = float(np.median(z_hat[top, 4]) - np.median(z_hat[bottom, 4]))
    out["delta_median_r"] = float(np.median(z_hat[top, 0]) - np.median(z_hat[bottom, 0]))
    return out


def evaluate(cohort, lps: LPSModel | None = None, baseline: BaselineModel | None = None,
             generator: GeneratorConfig | None = None):
    """Metrics per method plus a per-patient prediction table.

    Returns ``(rows, table)`` where ``rows`` maps method name to a metric dict
    and ``table`` maps column name to an array aligned with ``cohort``.
    """
    if len(cohort) == 0:
        raise MetricError("cannot evaluate an empty cohort")
    y = np.array([p.y for p in cohort])
    vitals = np.array([p.vitals for p in cohort])
    rows, table = {}, {"id": np.array([p.id for p in cohort]), "y": y}
    for i, name in enumerate(("hr", "bp_sys", "bp_dias")):
        table[name] = vitals[:, i]
    table["co_observed"] = np.array([p.co_observed for p in cohort])
    table["co_measured"] = np.array([p.co if p.co_observed else np.nan for p in cohort])
    if lps is not None:
        xs = lps.standardize(cohort)
        pi_hat, z_hat = lps.map_estimate(xs)
        pi_q, z_q = lps_q_inference(lps, xs)
        for method, pi, z in (("lps", pi_hat, z_hat), ("lps_q", pi_q, z_q)):
            row = {"auc": auc(pi, y)}
            row.update(_concept_metrics(z, pi, cohort, vitals))
            # a posterior mode can sit exactly on 0 or 1 when the Beta clamp saturates
            lj = lps.log_joint(np.clip(pi, PI_EPS, 1.0 - PI_EPS), z, xs, y)
            row["objective"] = float(lj.total) / len(y)
            rows[method] = row
            table[f"pi_{method}"] = pi
            for k, c in enumerate(CONCEPTS):
                table[f"{c}_{method}"] = z[:, k]
        recon = reconstruct_vitals(z_hat)
        for i, name in enumerate(("hr", "bp_sys", "bp_dias")):
            table[f"{name}_recon"] = recon[:, i]
    if baseline is not None:
        p = baseline.predict_proba(baseline.standardize(cohort))
        rows["baseline"] = {"auc": auc(p, y)}
        table["p_baseline"] = p
    true_z = np.array([p.true_z for p in cohort])
    if generator is not None and np.all(np.isfinite(true_z)):
        scores = bayes_oracle_scores(true_z, generator)
        rows["oracle"] = {"auc": auc(scores, y)}
        table["p_oracle"] = scores
        for k, c in enumerate(CONCEPTS):
            table[f"{c}_true"] = true_z[:, k]
    return rows, table


def write_table(path, table):
    cols = list(table)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(table[cols[0]])):
            w.writerow([_fmt(table[c][i]) for c in cols])


def write_metric_rows(path, rows, prefix=()):
    """One row per method with the fixed metric column set."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([name for name, _ in prefix] + ["method"] + list(METRICS))
        for method in METHODS:
            if method in rows:
                w.writerow([_fmt(v) for _, v in prefix] + [method]
                           + [_fmt(rows[method].get(m)) for m in METRICS])


# ---------------------------------------------------------------------------
# the protocol


@dataclass
class RunOutcome:
    index: int
    seed: int
    rows: dict
    stages: dict
    table: dict
    traces: dict


def run_single(plan: ExperimentPlan, cohort, index: int) -> RunOutcome:
    seed = plan.run_seeds()[index]
    rc = plan.run.with_seed(seed)
    train, val, test = split_cohort(cohort, rc.split)
    try:
        model, s1, s2 = fit_lps(train, val, rc)
        baseline, s3 = fit_baseline(train, val, rc, scaler=model.scaler)
        generator = plan.generator if plan.dataset is None else None
        rows, table = evaluate(test, model, baseline, generator)
    except LPSError as e:
        raise TrainingError(f"run {index} (seed {seed}) failed: {e}") from e
    mu = model.params["phi/mu"]
    stages = {
        "vem_selected_epoch": s1.selected_epoch,
        "vem_elbo_first": s1.terms[0]["full"], "vem_elbo_last": s1.terms[-1]["full"],
        "map_selected_epoch": s2.selected_epoch, "baseline_selected_epoch": s3.selected_epoch,
        "mu_co_low": mu[4, 0], "mu_co_high": mu[4, 1], "mu_r_low": mu[0, 0], "mu_r_high": mu[0, 1],
    }
    return RunOutcome(index, seed, rows, stages, table, {"vem": s1, "map": s2, "baseline": s3})


def _run_worker(args):
    plan, cohort, index = args
    return run_single(plan, cohort, index)


@dataclass
class MetricsReport:
    """Per-run metric rows and their median/half-IQR aggregates."""

    runs: list                      # list of RunOutcome
    summary: dict                   # (method, metric) -> (median, half_iqr)
    welch: dict                     # (metric, a, b) -> (t, p)

    def values(self, method, metric):
        return np.array([r.rows.get(method, {}).get(metric, np.nan) for r in self.runs],
                        dtype=float)

    def stage_values(self, key):
        return np.array([r.stages[key] for r in self.runs], dtype=float)


def aggregate(runs) -> MetricsReport:
    summary, welch = {}, {}
    report = MetricsReport(runs, summary, welch)
    for method in METHODS:
        for metric in METRICS:
            v = report.values(method, metric)
            if np.all(np.isfinite(v)):
                summary[(method, metric)] = median_half_iqr(v)
    for metric in METRICS:
        for a, b in WELCH_PAIRS:
            va, vb = report.values(a, metric), report.values(b, metric)
            if np.all(np.isfinite(va)) and np.all(np.isfinite(vb)):
                try:
                    welch[(metric, a, b)] = welch_t_test(va, vb)
                except MetricError:
                    welch[(metric, a, b)] = (math.nan, math.nan)
    return report


def run_experiment(plan: ExperimentPlan, cohort=None, out_dir=None) -> MetricsReport:
    """Train and evaluate every run of ``plan``; optionally write the report files."""
    cohort = plan.cohort() if cohort is None else cohort
    jobs = [(plan, cohort, k) for k in range(plan.n_runs)]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            runs = list(pool.map(_run_worker, jobs))
    else:
        runs = [_run_worker(j) for j in jobs]
    runs.sort(key=lambda r: r.index)
    report = aggregate(runs)
    if out_dir is not None:
        write_report(report, plan, out_dir)
    return report


def write_report(report: MetricsReport, plan: ExperimentPlan, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seed", "method"] + list(METRICS))
        for method in METHODS:
            for r in report.runs:
                if method in r.rows:
                    w.writerow([r.index, r.seed, method]
                               + [_fmt(r.rows[method].get(m)) for m in METRICS])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "metric", "median", "half_iqr"])
        for (method, metric), (med, hiqr) in report.summary.items():
            w.writerow([method, metric, _fmt(med), _fmt(hiqr)])
    with open(out / "welch.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "method_a", "method_b", "t", "p"])
        for (metric, a, b), (t, p) in report.welch.items():
            w.writerow([metric, a, b, _fmt(t), _fmt(p)])
    with open(out / "stages.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seed"] + list(STAGE_COLUMNS))
        for r in report.runs:
            w.writerow([r.index, r.seed] + [_fmt(r.stages[k]) for k in STAGE_COLUMNS])
    for r in report.runs:
        run_dir = out / f"run_{r.index:02d}"
        run_dir.mkdir(exist_ok=True)
        write_table(run_dir / "predictions.csv", r.table)
        for name, res in r.traces.items():
            res.to_csv(run_dir / f"trace_{name}.csv")
