"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .cohort import GeneratorConfig, generate_cohort, read_cohort, split_cohort, write_cohort
from .errors import LPSError, ParseError, UsageError
from .experiment import (
    ExperimentPlan, RunConfig, evaluate, fit_baseline, fit_lps, run_experiment, write_metric_rows,
)
from .metrics import median_abs_error, reconstruct_vitals
from .model import BaselineModel, LPSModel, load_any
from .training import integrated_gradients
from .windkessel import CONCEPTS, ConceptVector, closed_form_waveform


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    cfg = GeneratorConfig.load(args.config) if args.config else GeneratorConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.n is not None:
        cfg = replace(cfg, n=args.n)
    cohort = generate_cohort(cfg)
    write_cohort(cohort, args.out)
    print(f"wrote {len(cohort)} patients to {args.out}")


def _run_config(args):
    rc = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    return rc


def cmd_train(args):
    rc = _run_config(args)
    train, val, _ = split_cohort(read_cohort(args.dataset), rc.split)
    model, s1, s2 = fit_lps(train, val, rc)
    out = Path(args.out)
    model.save(out, extra={"run": rc.to_dict(), "vem_selected_epoch": s1.selected_epoch,
                           "map_selected_epoch": s2.selected_epoch})
    s1.to_csv(out / "trace_vem.csv")
    s2.to_csv(out / "trace_map.csv")
    print(f"saved model to {out} (stage-one epoch {s1.selected_epoch}, "
          f"stage-two epoch {s2.selected_epoch})")


def cmd_train_baseline(args):
    rc = _run_config(args)
    train, val, _ = split_cohort(read_cohort(args.dataset), rc.split)
    model, res = fit_baseline(train, val, rc)
    out = Path(args.out)
    model.save(out)
    res.to_csv(out / "trace_baseline.csv")
    print(f"saved baseline to {out} (epoch {res.selected_epoch})")


def _find_models(directory):
    """A model directory itself, or its immediate subdirectories holding models."""
    d = Path(directory)
    if (d / "model.json").exists():
        candidates = [d]
    else:
        candidates = sorted(p for p in d.iterdir() if (p / "model.json").exists()) if d.is_dir() else []
    if not candidates:
        raise ParseError(f"no model found under {d}")
    lps = baseline = None
    for c in candidates:
        m = load_any(c)
        if isinstance(m, LPSModel) and lps is None:
            lps = m
        elif isinstance(m, BaselineModel) and baseline is None:
            baseline = m
    return lps, baseline


def cmd_eval(args):
    lps, baseline = _find_models(args.models)
    cohort = read_cohort(args.dataset)
    generator = GeneratorConfig.load(args.generator) if args.generator else None
    rows, table = evaluate(cohort, lps, baseline, generator)
    write_metric_rows(args.out, rows)
    print(f"wrote metrics for {', '.join(rows)} to {args.out}")


def cmd_experiment(args):
    plan = ExperimentPlan.load(args.plan)
    if args.seed is not None:
        plan = replace(plan, seed=args.seed)
    if args.workers is not None:
        plan = replace(plan, workers=args.workers)
    report = run_experiment(plan, out_dir=args.out)
    for (method, metric), (med, hiqr) in report.summary.items():
        if metric == "auc":
            print(f"{method:9s} AUC {med:.3f} +/- {hiqr:.3f}")
    print(f"report written to {args.out}")


def default_ranges(cfg: GeneratorConfig | None = None):
    """Normal ranges: CO at or above 4 L/min; others the lived-class central 90%."""
    cfg = cfg or GeneratorConfig()
    ranges = {}
    for k in CONCEPTS:
        mix = cfg.mixtures[k]
        mu, sd = float(np.log(mix.median_low)), mix.sigma_low
        ranges[k] = [float(np.exp(mu - 1.645 * sd)), float(np.exp(mu + 1.645 * sd))]
    ranges["CO"] = [4.0, None]
    return ranges


def _flag(v, lo, hi):
    if lo is not None and v < lo:
        return "low"
    if hi is not None and v > hi:
        return "high"
    return "normal"


def feature_names(d_tab, d_wave):
    return (["hr", "bp_sys", "bp_dias"] + [f"tab_{i}" for i in range(d_tab)]
            + [f"wave_{i}" for i in range(d_wave)])


def explain_patient(lps: LPSModel, patient, baseline: BaselineModel | None = None, ranges=None,
                    steps=256):
    """Evidence vector with range flags, the log-joint breakdown and baseline attributions."""
    ranges = ranges or default_ranges()
    xs = lps.standardize([patient])
    pi_hat, z_hat = lps.map_estimate(xs)
    lj = lps.log_joint(pi_hat, z_hat, xs, [patient.y])
    recon = reconstruct_vitals(z_hat)[0]
    evidence = {}
    for k, c in enumerate(CONCEPTS):
        lo, hi = ranges.get(c, [None, None])
        v = float(z_hat[0, k])
        evidence[c] = {"value": v, "normal_range": [lo, hi], "flag": _flag(v, lo, hi)}
    out = {
        "id": patient.id,
        "pi_hat": float(pi_hat[0]),
        "y_hat": int(pi_hat[0] >= lps.eta),
        "eta": lps.eta,
        "evidence": evidence,
        "log_joint_terms": {k: float(v[0]) for k, v in lj.breakdown().items()},
        "vitals": {"observed": patient.vitals.tolist(), "reconstructed": recon.tolist()},
    }
    if baseline is not None:
        xb = baseline.standardize([patient])[0]
        ref = np.zeros_like(xb)
        fn = lambda x: baseline.predict_proba(x)
        attr = integrated_gradients(fn, xb, ref, steps=steps)
        gap = float(dc.value(fn(xb[None]))[0] - dc.value(fn(ref[None]))[0])
        names = feature_names(len(patient.tabular), len(patient.waveform))
        out["integrated_gradients"] = {
            "baseline_output": float(dc.value(fn(xb[None]))[0]),
            "attributions": dict(zip(names, map(float, attr))),
            "completeness_gap": float(attr.sum() - gap),
        }
    return out


def cmd_explain(args):
    lps, baseline = _find_models(args.model)
    if args.baseline:
        baseline = BaselineModel.load(args.baseline)
    if lps is None:
        raise ParseError(f"{args.model} holds no LPS model")
    cohort = read_cohort(args.dataset)
    match = [p for p in cohort if p.id == args.patient]
    if not match:
        raise ParseError(f"patient {args.patient} not in {args.dataset}")
    ranges = None
    if args.ranges:
        ranges = json.loads(Path(args.ranges).read_text())
    result = explain_patient(lps, match[0], baseline, ranges)
    Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    print(f"wrote explanation for patient {args.patient} to {args.out}")


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ParseError(f"{path} is empty")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def build_report(in_dir, out_dir, n_bins=20):
    """Plot-ready CSVs: vitals reconstruction and risk-quartile concept summaries."""
    src, out = Path(in_dir), Path(out_dir)
    run_dirs = sorted(p for p in src.glob("run_*") if (p / "predictions.csv").exists())
    if not run_dirs:
        raise ParseError(f"no run_*/predictions.csv under {src}")
    out.mkdir(parents=True, exist_ok=True)
    tables = [(int(p.name.split("_")[1]), _read_csv(p / "predictions.csv")) for p in run_dirs]
    with open(out / "reconstruction.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "vital", "median_abs_err"])
        for run, t in tables:
            for v in ("hr", "bp_sys", "bp_dias"):
                w.writerow([run, v, repr(median_abs_error(t[v], t[f"{v}_recon"]))])
    with open(out / "reconstruction_points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "id", "hr", "hr_recon", "bp_sys", "bp_sys_recon", "bp_dias",
                    "bp_dias_recon"])
        for run, t in tables:
            for i in range(len(t["id"])):
                w.writerow([run, int(t["id"][i])] + [repr(float(t[c][i])) for c in
                           ("hr", "hr_recon", "bp_sys", "bp_sys_recon", "bp_dias", "bp_dias_recon")])
    groups = {}
    with open(out / "consistency.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "group", "median_co", "median_r"])
        for run, t in tables:
            q1, q3 = np.quantile(t["pi_lps"], [0.25, 0.75])
            for g, mask in (("top", t["pi_lps"] >= q3), ("bottom", t["pi_lps"] <= q1)):
                w.writerow([run, g, repr(float(np.median(t["CO_lps"][mask]))),
                            repr(float(np.median(t["R_lps"][mask])))])
                for c in ("CO", "R"):
                    groups.setdefault((c, g), []).append(t[f"{c}_lps"][mask])
    with open(out / "consistency_hist.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["concept", "group", "bin_lo", "bin_hi", "count"])
        for c in ("CO", "R"):
            pooled = np.concatenate(groups[(c, "top")] + groups[(c, "bottom")])
            edges = np.linspace(pooled.min(), pooled.max(), n_bins + 1)
            for g in ("top", "bottom"):
                counts, _ = np.histogram(np.concatenate(groups[(c, g)]), edges)
                for lo, hi, n in zip(edges[:-1], edges[1:], counts):
                    w.writerow([c, g, repr(float(lo)), repr(float(hi)), int(n)])
    return out


def cmd_waveform(args):
    z = ConceptVector(args.R, args.C, args.Ts, args.Td, args.CO).validate()
    t, p = closed_form_waveform(z, args.cycles, args.p0, args.points)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "P"])
        w.writerows([repr(float(a)), repr(float(b))] for a, b in zip(t, p))
    print(f"wrote {len(t)} samples to {args.out}")


def cmd_report(args):
    out = build_report(args.inp, args.out)
    print(f"wrote report tables to {out}")


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="lps", description="Risk prediction with supporting concept evidence.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic cohort")
    g.add_argument("--config", help="generator config (JSON); defaults when omitted")
    g.add_argument("--out", required=True, help="output dataset (JSON lines)")
    g.add_argument("--seed", type=int)
    g.add_argument("--n", type=int, help="override the cohort size")
    g.set_defaults(fn=cmd_gen)

    for name, fn, what in (("train", cmd_train, "variational EM then the MAP network"),
                           ("train-baseline", cmd_train_baseline, "the label-only baseline")):
        t = sub.add_parser(name, help=f"train {what}")
        t.add_argument("--dataset", required=True)
        t.add_argument("--config", help="run config (JSON)")
        t.add_argument("--out", required=True, help="model directory")
        t.add_argument("--seed", type=int)
        t.set_defaults(fn=fn)

    e = sub.add_parser("eval", help="evaluate saved models on a dataset")
    e.add_argument("--models", required=True, help="model directory or parent of model directories")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True, help="metrics CSV")
    e.add_argument("--generator", help="generator config enabling the oracle row")
    e.set_defaults(fn=cmd_eval)

    x = sub.add_parser("experiment", help="run the multi-split protocol")
    x.add_argument("--plan", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--seed", type=int)
    x.add_argument("--workers", type=int)
    x.set_defaults(fn=cmd_experiment)

    a = sub.add_parser("explain", help="evidence and attributions for one patient")
    a.add_argument("--model", required=True)
    a.add_argument("--dataset", required=True)
    a.add_argument("--patient", required=True, type=int)
    a.add_argument("--out", required=True)
    a.add_argument("--baseline", help="baseline model directory for attributions")
    a.add_argument("--ranges", help="JSON of normal ranges per concept")
    a.set_defaults(fn=cmd_explain)

    r = sub.add_parser("report", help="plot-ready tables from an experiment directory")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)

    v = sub.add_parser("waveform", help="dump a closed-form pressure waveform (t, P)")
    for name, default in (("R", 1000.0), ("C", 0.0015), ("Ts", 0.3), ("Td", 0.6), ("CO", 6.0)):
        v.add_argument(f"--{name}", type=float, default=default)
    v.add_argument("--cycles", type=int, default=10)
    v.add_argument("--p0", type=float, default=80.0)
    v.add_argument("--points", type=int, default=50, help="samples per phase")
    v.add_argument("--out", required=True)
    v.set_defaults(fn=cmd_waveform)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.fn(args)
    except LPSError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
