"""Synthetic cohort: generation, calibration, risk quartiles and prior fitting.

Run: python3 demos/03_cohort.py
"""

# %% Draw a cohort from the default generator.
import numpy as np

from lps.cohort import GeneratorConfig, fit_concept_priors, generate_cohort, split_cohort

cfg = GeneratorConfig(n=20_000, seed=1)
cohort = generate_cohort(cfg)
y = np.array([p.y for p in cohort])
print(f"{len(cohort)} patients, positive rate {y.mean():.4f} "
      f"(prior mean alpha/(alpha+beta) = {cfg.alpha / (cfg.alpha + cfg.beta):.4f})")
print(f"CO measured for {np.mean([p.co_observed for p in cohort]):.1%}, "
      f"R for {np.mean([p.r_observed for p in cohort]):.1%}")

# %% The highest-risk quartile has lower output and higher resistance.
pi = np.array([p.true_pi for p in cohort])
z = np.array([p.true_z for p in cohort])
q1, q3 = np.quantile(pi, [0.25, 0.75])
for name, k in (("CO", 4), ("R", 0)):
    top, bottom = np.median(z[pi >= q3, k]), np.median(z[pi <= q1, k])
    print(f"median {name}: top quartile {top:8.3f}, bottom quartile {bottom:8.3f}")

# %% Class-conditional priors from the observed measurements only.
train, val, test = split_cohort(cohort)
fit = fit_concept_priors(train)
target = cfg.class_log_means()
for m, name in enumerate(("R", "C", "Ts", "Td", "CO")):
    print(f"{name:>2}: fitted log-means {np.round(fit.mu[m], 3)}, generating {np.round(target[m], 3)}")
