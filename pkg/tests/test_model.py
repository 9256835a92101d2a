import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lps import diffcore as dc
from lps.cohort import GeneratorConfig, fit_concept_priors, generate_cohort
from lps.diffcore.gradcheck import analytic_gradient, numeric_gradient
from lps.distributions import (
    BetaParams, GaussianParams, LogNormalParams, RiskMixtureParams, bernoulli_logpmf,
    beta_logpdf, gaussian_logpdf, mixture_logpdf,
)
from lps.errors import ParseError
from lps.model import (
    Architecture, BaselineModel, LPSModel, classify, feature_matrix, fit_scaler, init_baseline,
    init_model, load_any, map_forward, posterior_forward,
)
from lps.windkessel import ConceptVector, simulate_vitals


@pytest.fixture(scope="module")
def cohort():
    return generate_cohort(GeneratorConfig(n=400, seed=21, d_wave=8))


@pytest.fixture(scope="module")
def model(cohort):
    scaler = fit_scaler(cohort)
    arch = Architecture(3 + 4 + 8, 4, 8, hidden=(16, 8), f_hidden=(8, 8))
    m = init_model(scaler, fit_concept_priors(cohort), 4, 8, seed=3, arch=arch)
    # move the networks away from their near-constant initialization
    rng = np.random.default_rng(0)
    bumped = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in m.params.items()
              if k.startswith(("f/", "q/", "n/"))}
    m.params = m.params.updated(bumped)
    return m


def _scaled_numeric_gradient(fn, point, rel=1e-6):
    """Central differences with a step proportional to each coordinate's magnitude."""
    grad = np.zeros_like(point)
    for i in range(point.size):
        h = rel * max(abs(point[i]), 1e-2)
        up, dn = point.copy(), point.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (float(dc.value(fn(up))) - float(dc.value(fn(dn)))) / (2 * h)
    return grad


def _blockwise_rel_error(fn, point, blocks):
    a = analytic_gradient(fn, point)
    n = _scaled_numeric_gradient(fn, point)
    worst = 0.0
    for sl in blocks:
        scale = np.max(np.abs(n[sl]))
        if scale > 0:
            worst = max(worst, np.max(np.abs(a[sl] - n[sl])) / scale)
    return worst


# -- scaler ------------------------------------------------------------------------


def test_scaler_standardizes_training_set(cohort):
    s = fit_scaler(cohort)
    xs = s.apply(feature_matrix(cohort))
    assert np.abs(xs.mean(axis=0)).max() < 1e-9
    assert np.abs(xs.std(axis=0) - 1).max() < 1e-9
    x = feature_matrix(cohort)
    assert np.abs(s.invert(s.apply(x)) - x).max() < 1e-12 * np.abs(x).max()


def test_scaler_constant_feature(cohort):
    c = generate_cohort(GeneratorConfig(n=20, seed=1))
    for p in c:
        p.tabular[0] = 3.0
    s = fit_scaler(c)
    assert s.std[3] == 1e-6
    assert np.all(s.apply(feature_matrix(c))[:, 3] == 0)


# -- networks ------------------------------------------------------------------------


def test_posterior_ranges_for_extreme_inputs(model):
    for v in (1e6, -1e6, 0.0):
        x = np.full((3, model.arch.d_in), v)
        x[1] *= -1
        with np.errstate(over="ignore"):
            q = posterior_forward(x, model.params, model.n_layers)
        assert np.all((q.a >= 1) & (q.a <= 11) & (q.b >= 1) & (q.b <= 11))
        assert np.all(q.var > 0)


def test_posterior_deterministic(model, cohort):
    xs = model.standardize(cohort[:5])
    a, b = model.posterior(xs), model.posterior(xs)
    np.testing.assert_array_equal(a.mu, b.mu)
    np.testing.assert_array_equal(a.a, b.a)


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.integers(0, 1000))
def test_map_ranges(model, scale, seed):
    x = scale * np.random.default_rng(seed).standard_normal((4, model.arch.d_in))
    pi, z = map_forward(x, model.params, model.n_layers)
    assert np.all((pi > 0) & (pi < 1)) and np.all(z > 0)
    pi2, z2 = map_forward(x, model.params, model.n_layers)
    np.testing.assert_array_equal(pi, pi2)
    np.testing.assert_array_equal(z, z2)


def test_map_pi_gradient_matches_finite_differences(model, cohort):
    xs = model.standardize(cohort[:3])
    names = [k for k in model.params.names() if k.startswith("n/")]
    shapes = [model.params[k].shape for k in names]
    sizes = [int(np.prod(s)) for s in shapes]
    flat = np.concatenate([np.ravel(model.params[k]) for k in names])

    def fn(v):
        params, i = {}, 0
        for k, s, n in zip(names, shapes, sizes):
            params[k] = dc.reshape(v[i:i + n], s)
            i += n
        pi, _ = map_forward(xs, params, model.n_layers)
        return dc.sum(pi)
    a = analytic_gradient(fn, flat)
    n = numeric_gradient(fn, flat, h=1e-6)
    assert np.max(np.abs(a - n)) / np.max(np.abs(n)) < 1e-5


# -- log joint -------------------------------------------------------------------------


def _numpy_f(model, z):
    u = (np.log(z) - model.concept_center) / model.concept_scale
    p = model.params
    h = np.tanh(u @ p["f/W0"] + p["f/b0"])
    h = np.tanh(h @ p["f/W1"] + p["f/b1"])
    return h @ p["f/W2"] + p["f/b2"]


def test_log_joint_decomposition_oracle(model, cohort):
    xs = model.standardize(cohort[:6])
    y = np.array([p.y for p in cohort[:6]])
    rng = np.random.default_rng(1)
    pi = rng.uniform(0.05, 0.95, 6)
    z = np.array([p.true_z for p in cohort[:6]]) * rng.uniform(0.9, 1.1, (6, 5))
    lj = model.log_joint(pi, z, xs, y)
    phi = model.params["phi/mu"]
    var = model.priors.var
    for i in range(6):
        total = float(beta_logpdf(pi[i], BetaParams(1.0, 1.0)))
        total += float(bernoulli_logpmf(y[i], pi[i]))
        for m in range(5):
            mix = RiskMixtureParams(LogNormalParams(phi[m, 1], var[m, 1]),
                                    LogNormalParams(phi[m, 0], var[m, 0]))
            total += float(mixture_logpdf(z[i, m], pi[i], mix))
        v = simulate_vitals(ConceptVector(*z[i]))
        g = (np.array([v.hr, v.bp_sys, v.bp_dias]) - model.scaler.mean[:3]) / model.scaler.std[:3]
        total += float(gaussian_logpdf(xs[i, :3], GaussianParams(g, 0.1)))
        sig = np.r_[np.full(4, 0.5), np.full(8, 5.0)]
        total += float(gaussian_logpdf(xs[i, 3:], GaussianParams(_numpy_f(model, z[i:i + 1])[0], sig)))
        parts = {k: v[i] for k, v in lj.breakdown().items()}
        assert parts["log_p_pi"] == 0.0
        assert sum(parts.values()) == pytest.approx(total, rel=1e-12, abs=1e-9)
    assert float(lj.total) == pytest.approx(sum(np.sum(v) for v in lj.breakdown().values()))


def test_log_joint_monotone_in_pi_for_positive_outcome(model, cohort):
    xs = model.standardize(cohort[:1])
    z = cohort[0].true_z[None, :]
    flat_phi = model.params["phi/mu"].copy()
    flat_phi[:, 1] = flat_phi[:, 0]
    m = LPSModel(model.arch, model.scaler, model.priors, model.params.updated({"phi/mu": flat_phi}))
    vals = [float(m.log_joint(np.array([p]), z, xs, [1]).total) for p in np.linspace(0.05, 0.95, 19)]
    assert np.all(np.diff(vals) > 0)


def test_log_joint_gradients_match_finite_differences(model, cohort):
    names = ["phi/mu"] + [k for k in model.params.names() if k.startswith("f/")]
    shapes = [model.params[k].shape for k in names]
    sizes = [int(np.prod(s)) for s in shapes]
    rng = np.random.default_rng(2)
    for trial in range(20):
        idx = rng.choice(len(cohort), 2, replace=False)
        xs = model.standardize([cohort[i] for i in idx])
        y = np.array([cohort[i].y for i in idx])
        pi = rng.uniform(0.1, 0.9, 2)
        z = np.array([cohort[i].true_z for i in idx]) * rng.uniform(0.95, 1.05, (2, 5))
        theta = np.concatenate([np.ravel(model.params[k]) for k in names])
        point = np.concatenate([pi, np.ravel(z), theta])

        def fn(v):
            params, i = {}, 12
            for k, s, n in zip(names, shapes, sizes):
                params[k] = dc.reshape(v[i:i + n], s)
                i += n
            return model.log_joint(v[:2], dc.reshape(v[2:12], (2, 5)), xs, y, params).total
        blocks = [slice(0, 2)] + [slice(2 + j, 12, 5) for j in range(5)] + [slice(12, 22)]
        start = 22
        for n in sizes[1:]:
            blocks.append(slice(start, start + n))
            start += n
        assert _blockwise_rel_error(fn, point, blocks) < 1e-5, trial


def test_evidence_moves_pi_toward_high_risk(model, cohort):
    xs = model.standardize(cohort[:1])
    phi = model.params["phi/mu"].copy()
    phi[:, 1] = phi[:, 0] + 6 * np.sqrt(model.priors.var.max(axis=1))  # well separated
    m = LPSModel(model.arch, model.scaler, model.priors, model.params.updated({"phi/mu": phi}))
    grid = np.linspace(0.001, 0.999, 999)

    def best_pi(z):
        zz = np.repeat(z[None, :], grid.size, axis=0)
        xx = np.repeat(xs, grid.size, axis=0)
        lj = m.log_joint(grid, zz, xx, np.zeros(grid.size))
        per = sum(lj.breakdown().values())
        return grid[np.argmax(per)]
    low, high = best_pi(np.exp(phi[:, 0])), best_pi(np.exp(phi[:, 1]))
    assert high > low and high > 0.5 > low


# -- classify --------------------------------------------------------------------------


def test_classify_examples():
    assert classify(0.3, 0.3) == 1
    assert np.all(classify(np.array([0.0, 0.2, 1.0]), 0.0) == 1)
    assert classify(0.999, 1.0) == 0


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=20), st.integers(0, 1000))
def test_classify_invariant_under_increasing_transform(pis, eta):
    # a 1e-3 grid keeps the transform strictly increasing in floating point
    pis, eta = np.array(pis) / 1000, eta / 1000
    f = lambda p: np.exp(3 * p) + p ** 3
    np.testing.assert_array_equal(classify(pis, eta), classify(f(pis), f(eta)))


# -- persistence ------------------------------------------------------------------------


def test_save_load_round_trip(model, cohort, tmp_path):
    model.save(tmp_path / "m", extra={"note": 1})
    back = LPSModel.load(tmp_path / "m")
    assert back.params.equals(model.params)
    assert back.arch == model.arch
    xs = model.standardize(cohort[:4])
    np.testing.assert_array_equal(back.map_estimate(xs)[0], model.map_estimate(xs)[0])
    assert isinstance(load_any(tmp_path / "m"), LPSModel)


def test_baseline_round_trip(model, cohort, tmp_path):
    b = BaselineModel(model.scaler, init_baseline(model.arch.d_in, seed=1, hidden=(8,)), (8,))
    b.save(tmp_path / "b")
    back = load_any(tmp_path / "b")
    xs = b.standardize(cohort[:4])
    np.testing.assert_array_equal(back.predict_proba(xs), b.predict_proba(xs))


def test_load_rejects_wrong_format(model, tmp_path):
    model.save(tmp_path / "m")
    p = tmp_path / "m" / "model.json"
    p.write_text(p.read_text().replace("lps-model/1", "lps-model/9"))
    with pytest.raises(ParseError):
        LPSModel.load(tmp_path / "m")
    with pytest.raises(ParseError):
        load_any(tmp_path / "missing")


def test_map_pi_stays_inside_unit_interval_when_saturated(model):
    x = np.zeros((2, model.arch.d_in))
    bias = model.params["n/b2"].copy()
    bias[0] = 1e3
    params = model.params.updated({"n/W2": model.params["n/W2"] * 0.0, "n/b2": bias})
    pi, _ = map_forward(x, params, model.n_layers)
    assert np.all(pi < 1.0) and np.all(np.isfinite(np.log1p(-pi)))
