"""Evaluation metrics, the Welch test and a miniature multi-split protocol.

Run: python3 demos/05_metrics_and_protocol.py
"""

# %% Ranking, thresholding and spread statistics.
from pathlib import Path

from lps.experiment import ExperimentPlan, run_experiment
from lps.metrics import auc, f1_thresholded_co, median_half_iqr, r_squared, welch_t_test

print("AUC of (0.1, 0.4, 0.35, 0.8) vs (0, 0, 1, 1):", auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]))
print("low-CO F1:", f1_thresholded_co([3.0, 3.9, 5.0, 6.0, 3.2], [3.0, 5.0, 3.5, 6.0, 3.1]))
print("R2 of (1, 2, 4) against (1, 2, 3):", r_squared([1, 2, 3], [1, 2, 4]))
print("median and half-IQR of 1..5:", median_half_iqr([1, 2, 3, 4, 5]))
t, p = welch_t_test([1, 2, 3], [2, 3, 4])
print(f"Welch t = {t:.4f}, p = {p:.4f}")

# %% A two-run protocol on a small cohort (configs/plan_smoke.json).
plan = ExperimentPlan.load(Path(__file__).resolve().parents[1] / "configs" / "plan_smoke.json")
report = run_experiment(plan)
for (method, metric), (med, hiqr) in report.summary.items():
    if metric in ("auc", "r2_hr", "thresholded_co_f1"):
        print(f"{method:8s} {metric:18s} {med:.3f} +/- {hiqr:.3f}")
print("run seeds:", plan.run_seeds())
