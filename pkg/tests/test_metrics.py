import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from lps.cohort import GeneratorConfig, generate_cohort
from lps.errors import MetricError
from lps.metrics import (
    auc, bayes_oracle_scores, f1_score, f1_thresholded_co, median_abs_error, median_half_iqr,
    r_squared, reconstruct_vitals, spearman, tukey_hinges, welch_t_test,
)


# -- AUC ---------------------------------------------------------------------------------


def test_auc_examples():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(MetricError):
        auc([0.1, 0.2], [1, 1])


def _pairwise_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    diff = pos[:, None] - neg[None, :]
    return float(np.mean((diff > 0) + 0.5 * (diff == 0)))


@settings(max_examples=50)
@given(st.integers(0, 10 ** 6))
def test_auc_matches_pairwise_count_and_is_rank_invariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 60))
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    s = np.round(rng.normal(size=n), 1)   # rounding creates ties
    a = auc(s, y)
    assert a == pytest.approx(_pairwise_auc(s, y), abs=1e-12)
    assert auc(np.exp(3 * s) + s, y) == pytest.approx(a, abs=1e-12)
    perm = rng.permutation(n)
    assert auc(s[perm], y[perm]) == pytest.approx(a, abs=1e-12)


# -- F1 ------------------------------------------------------------------------------------


def test_f1_examples():
    truth = np.array([3.0, 5.0, 3.5, 6.0, 4.5])
    assert f1_thresholded_co(truth, truth) == 1.0
    # TP=2, FP=1, FN=1
    inferred = np.array([3.0, 3.9, 5.0, 6.0, 3.2])
    true = np.array([3.0, 5.0, 3.5, 6.0, 3.1])
    assert f1_thresholded_co(inferred, true) == pytest.approx(2 / 3)
    assert f1_thresholded_co(8.0 - true, true) == 0.0


def test_f1_no_positives_warns_and_returns_zero():
    with pytest.warns(UserWarning):
        assert f1_thresholded_co([5.0, 6.0], [5.5, 7.0]) == 0.0


def test_f1_cutoff_is_strict_low_output():
    assert f1_score([True, False], [True, False]) == 1.0
    # exactly at the cutoff counts as normal output
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert f1_thresholded_co([4.0], [4.0]) == 0.0


@given(st.lists(st.tuples(st.floats(1, 8), st.floats(1, 8)), min_size=2, max_size=30),
       st.integers(0, 1000))
def test_f1_and_r2_paired_permutation_invariant(pairs, seed):
    a, b = np.array(pairs).T
    perm = np.random.default_rng(seed).permutation(len(a))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert f1_thresholded_co(a[perm], b[perm]) == f1_thresholded_co(a, b)
    if np.ptp(b) > 0:
        assert r_squared(b[perm], a[perm]) == pytest.approx(r_squared(b, a), rel=1e-9, abs=1e-9)


# -- R^2 / errors -----------------------------------------------------------------------------


def test_r_squared_examples():
    t = np.array([1.0, 2.0, 3.0])
    assert r_squared(t, t) == 1.0
    assert r_squared(t, np.full(3, 2.0)) == 0.0
    assert r_squared(t, [1.0, 2.0, 4.0]) == 0.5
    with pytest.raises(MetricError):
        r_squared([2.0, 2.0], [1.0, 3.0])
    with pytest.raises(MetricError):
        r_squared([2.0], [1.0])


def test_median_abs_error_hand_case():
    true = np.array([[70.0, 120.0, 80.0], [80.0, 110.0, 70.0], [60.0, 130.0, 85.0]])
    pred = np.array([[72.0, 118.0, 80.5], [79.0, 113.0, 69.0], [65.0, 129.0, 88.0]])
    # per column: |d| = (2,1,5), (2,3,1), (0.5,1,3)
    assert [median_abs_error(true[:, j], pred[:, j]) for j in range(3)] == [2.0, 2.0, 1.0]


def test_reconstruction_uses_forward_model():
    cfg = GeneratorConfig(hr_noise=0.0, bp_noise=0.0, n=30, seed=2)
    c = generate_cohort(cfg)
    z = np.array([p.true_z for p in c])
    rec = reconstruct_vitals(z)
    np.testing.assert_array_equal(rec, np.array([p.vitals for p in c]))
    z2 = z.copy()
    z2[:, [0, 1, 4]] *= 1.3
    np.testing.assert_array_equal(reconstruct_vitals(z2)[:, 0], rec[:, 0])


# -- spread and tests -----------------------------------------------------------------------------


def test_median_half_iqr_examples():
    assert median_half_iqr([1, 2, 3, 4, 5]) == (3.0, 1.0)
    assert tukey_hinges([1, 2, 3, 4, 5]) == (2.0, 4.0)
    assert median_half_iqr([2.5] * 7) == (2.5, 0.0)
    assert median_half_iqr([4.2]) == (4.2, 0.0)
    assert tukey_hinges([1, 2, 3, 4]) == (1.5, 3.5)
    with pytest.raises(MetricError):
        median_half_iqr([])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=25), st.integers(0, 1000))
def test_median_half_iqr_permutation_invariant(vals, seed):
    v = np.array(vals)
    perm = np.random.default_rng(seed).permutation(v.size)
    assert median_half_iqr(v[perm]) == median_half_iqr(v)


def test_welch_examples():
    a = np.array([1.0, 2.0, 3.0])
    b = a + np.array([0.5, -0.5, 1.0])
    t, p = welch_t_test(a, a)
    assert t == 0.0 and p == pytest.approx(1.0, abs=1e-15)
    t1, p1 = welch_t_test(a, b)
    t2, p2 = welch_t_test(b, a)
    assert t1 == -t2 and p1 == p2
    # a=(1,2,3), b=(2,3,4): both variances 1, so t = -1/sqrt(2/3) and df = 4
    t, p = welch_t_test([1, 2, 3], [2, 3, 4])
    assert t == pytest.approx(-math.sqrt(1.5), abs=1e-14)
    # two-sided tail of t with 4 df in closed form: 1 - s (3 - s^2) / 2, s = |t| / sqrt(t^2 + 4)
    s = math.sqrt(1.5 / 5.5)
    p_exact = 1 - s * (3 - s * s) / 2
    assert p == pytest.approx(p_exact, abs=1e-14)
    with pytest.raises(MetricError):
        welch_t_test([1, 1, 1], [1, 2, 3])


@settings(max_examples=40)
@given(st.integers(0, 10 ** 6))
def test_welch_matches_reference(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, rng.uniform(0.5, 3), int(rng.integers(2, 15)))
    b = rng.normal(0.5, rng.uniform(0.5, 3), int(rng.integers(2, 15)))
    t, p = welch_t_test(a, b)
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert t == pytest.approx(ref.statistic, rel=1e-10)
    assert p == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-14)


# -- oracle ---------------------------------------------------------------------------------------


def test_bayes_oracle_against_adaptive_quadrature():
    cfg = GeneratorConfig()
    z = np.array([p.true_z for p in generate_cohort(GeneratorConfig(n=6, seed=3))])
    got = bayes_oracle_scores(z, cfg)
    mu, var = cfg.component_mu(), cfg.component_var()
    for i in range(len(z)):
        lz = np.log(z[i])
        lo = stats.norm.pdf(lz, mu[:, 0], np.sqrt(var[:, 0]))
        hi = stats.norm.pdf(lz, mu[:, 1], np.sqrt(var[:, 1]))

        def dens(p):
            return stats.beta.pdf(p, cfg.alpha, cfg.beta) * np.prod(p * hi + (1 - p) * lo)
        num = integrate.quad(lambda p: p * dens(p), 0, 1, limit=200, epsrel=1e-11)[0]
        den = integrate.quad(dens, 0, 1, limit=200, epsrel=1e-11)[0]
        assert got[i] == pytest.approx(num / den, rel=1e-7)


def test_bayes_oracle_monotone_in_high_component_evidence():
    cfg = GeneratorConfig()
    mu = cfg.component_mu()
    t = np.linspace(0, 1, 11)[:, None]
    z = np.exp((1 - t) * mu[:, 0] + t * mu[:, 1])
    assert np.all(np.diff(bayes_oracle_scores(z, cfg)) > 0)


def test_spearman():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    assert spearman(a, a ** 3) == pytest.approx(1.0)
    assert spearman(a, -a) == pytest.approx(-1.0)
