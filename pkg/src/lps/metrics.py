"""Evaluation metrics and significance tests."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.special import roots_jacobi
from scipy.stats import rankdata, spearmanr

from .diffcore.special import student_t_sf2
from .errors import MetricError
from .windkessel import ConceptVector, simulate_vitals

CO_CUTOFF = 4.0


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counting 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auc needs both classes present")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1_score(pred, truth):
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    if tp == 0:
        if fp == 0 and fn == 0:
            warnings.warn("F1 undefined without positives in truth or prediction; reporting 0")
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def f1_thresholded_co(inferred, true, cutoff=CO_CUTOFF) -> float:
    """F1 for detecting low cardiac output (below ``cutoff`` L/min)."""
    inferred = np.asarray(inferred, dtype=float)
    true = np.asarray(true, dtype=float)
    if inferred.shape != true.shape:
        raise MetricError("inferred and true CO lists must be aligned")
    return f1_score(inferred < cutoff, true < cutoff)


def r_squared(true, pred) -> float:
    true = np.asarray(true, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if true.size < 2:
        raise MetricError("r_squared needs at least two values")
    ss_tot = float(np.sum((true - true.mean()) ** 2))
    if ss_tot == 0:
        raise MetricError("r_squared undefined for constant truth")
    return 1.0 - float(np.sum((true - pred) ** 2)) / ss_tot


def median_abs_error(true, pred) -> float:
    return float(np.median(np.abs(np.asarray(true, dtype=float) - np.asarray(pred, dtype=float))))


def tukey_hinges(values):
    """Lower and upper hinges; for odd n both halves include the median."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    half = (n + 1) // 2
    return float(np.median(v[:half])), float(np.median(v[n - half:]))


def median_half_iqr(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise MetricError("median_half_iqr needs at least one value")
    q1, q3 = tukey_hinges(v)
    return float(np.median(v)), (q3 - q1) / 2.0


def welch_t_test(a, b):
    """Two-sided Welch t-test; returns (t, p)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise MetricError("welch_t_test needs at least two values per sample")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    if va == 0 or vb == 0:
        raise MetricError("welch_t_test needs nonzero variance in both samples")
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return float(t), float(student_t_sf2(t, df))


def bayes_oracle_scores(true_z, cfg, n_nodes=512):
    """P(y=1 | z) under the generating model, by quadrature over the risk pi.

    Integrates the Beta(alpha, beta) prior times the product of per-concept
    two-component log-normal mixtures against pi.  Gauss-Jacobi nodes carry
    the Beta weight exactly, so the remaining integrand is smooth.
    """
    z = np.atleast_2d(np.asarray(true_z, dtype=float))
    nodes, weights = roots_jacobi(n_nodes, cfg.beta - 1.0, cfg.alpha - 1.0)
    pi = 0.5 * (nodes + 1.0)
    log_w = np.log(weights)
    mu, var = cfg.component_mu(), cfg.component_var()        # (5, 2): (low, high)
    lz = np.log(z)[:, :, None]
    comp = -lz - 0.5 * np.log(2 * np.pi * var) - (lz - mu) ** 2 / (2 * var)  # (n, 5, 2)
    low, high = comp[..., 0][..., None], comp[..., 1][..., None]
    mix = np.logaddexp(np.log(pi) + high, np.log1p(-pi) + low).sum(axis=1)  # (n, nodes)
    log_joint = log_w + mix
    return np.exp(np.logaddexp.reduce(log_joint + np.log(pi), axis=1)
                  - np.logaddexp.reduce(log_joint, axis=1))


def spearman(a, b) -> float:
    return float(spearmanr(a, b)[0])


def reconstruct_vitals(z_hat, cfg=None):
    """Vitals implied by concept estimates, columns (HR, BP_sys, BP_dias) in natural units."""
    return simulate_vitals(ConceptVector.from_array(np.asarray(z_hat, dtype=float)), cfg).to_array()
