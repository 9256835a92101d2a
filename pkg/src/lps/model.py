"""The LPS probabilistic model and its networks.

Parameter groups live in a single :class:`~lps.diffcore.ParamStore` under
prefixes: ``phi/mu`` (trainable mixture means), ``f/*`` (learned forward
model, psi), ``q/*`` (variational posterior network) and ``n/*`` (MAP
network).  Feature vectors are ordered (HR, BP_sys, BP_dias, tabular...,
waveform...) and standardized with a :class:`FeatureScaler` fitted on the
training split.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .cohort import PriorFit
from .diffcore import ParamStore
from .distributions import (
    BetaParams, GaussianParams, LogNormalParams, RiskMixtureParams, bernoulli_logpmf,
    beta_logpdf, gaussian_logpdf, mixture_logpdf,
)
from .errors import InferenceError, ParseError, UsageError
from .windkessel import ConceptVector, WindkesselConfig, simulate_vitals

FORMAT_TAG = "lps-model/1"
HYPERPRIOR_SIGMA = 0.01
N_VITALS = 3
SCALE_FLOOR = 1e-6
PI_FLOOR = 1e-12
LOG_VAR_BOUND = 40.0  # soft bound keeping exp(log-variance) finite and positive


# ---------------------------------------------------------------------------
# feature scaling


@dataclass
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def invert(self, xs):
        return np.asarray(xs, dtype=float) * self.std + self.mean

    def scale_vitals(self, v):
        """Standardize (HR, BP_sys, BP_dias) columns; differentiable in ``v``."""
        return (v - self.mean[:N_VITALS]) / self.std[:N_VITALS]

    def unscale_vitals(self, v):
        return np.asarray(v) * self.std[:N_VITALS] + self.mean[:N_VITALS]

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def feature_matrix(cohort):
    return np.array([p.features() for p in cohort], dtype=float)


def fit_scaler(cohort) -> FeatureScaler:
    if len(cohort) == 0:
        raise UsageError("cannot fit a scaler on an empty cohort")
    x = feature_matrix(cohort)
    return FeatureScaler(x.mean(axis=0), np.maximum(x.std(axis=0), SCALE_FLOOR))


# ---------------------------------------------------------------------------
# dense networks


@dataclass(frozen=True)
class Architecture:
    d_in: int
    d_tab: int
    d_wave: int
    hidden: tuple = (128, 64)
    f_hidden: tuple = (64, 64)
    vitals_sigma: float = 0.1
    tabular_sigma: float = 0.5
    waveform_sigma: float = 5.0

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        d["f_hidden"] = tuple(d["f_hidden"])
        return cls(**d)

    @property
    def rest_sigma(self):
        return np.concatenate([np.full(self.d_tab, self.tabular_sigma),
                               np.full(self.d_wave, self.waveform_sigma)])


def init_mlp(rng, prefix, sizes, out_bias=None, out_scale=1.0):
    params = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        scale = math.sqrt(2.0 / a) * (out_scale if last else 1.0)
        params[f"{prefix}/W{i}"] = scale * rng.standard_normal((a, b))
        bias = np.zeros(b)
        if last and out_bias is not None:
            bias = np.asarray(out_bias, dtype=float)
        params[f"{prefix}/b{i}"] = bias
    return params


def mlp(params, prefix, x, n_layers, act=dc.relu):
    h = x
    for i in range(n_layers):
        h = dc.affine(h, params[f"{prefix}/W{i}"], params[f"{prefix}/b{i}"])
        if i < n_layers - 1:
            h = act(h)
    return h


def _check_finite(v, what):
    if not np.all(np.isfinite(dc.value(v))):
        raise InferenceError(f"non-finite activation in {what}")


@dataclass
class PosteriorParams:
    """Per-patient log-normal (mu, var) for each concept and Beta (a, b) for pi."""

    mu: object   # (n, 5)
    var: object  # (n, 5)
    a: object    # (n,)
    b: object    # (n,)

    def lognormal(self):
        return LogNormalParams(self.mu, self.var)

    def beta(self):
        return BetaParams(self.a, self.b)


def posterior_forward(x, params, n_layers=3) -> PosteriorParams:
    out = mlp(params, "q", x, n_layers)
    _check_finite(out, "posterior network")
    mu = out[:, 0:5]
    var = dc.exp(LOG_VAR_BOUND * dc.tanh(out[:, 5:10] / LOG_VAR_BOUND))
    a = 1.0 + 10.0 * dc.sigmoid(out[:, 10])
    b = 1.0 + 10.0 * dc.sigmoid(out[:, 11])
    return PosteriorParams(mu, var, a, b)


def map_forward(x, params, n_layers=3):
    """MAP network: returns (pi_hat (n,), z_hat (n, 5)).

    pi_hat is squeezed into [PI_FLOOR, 1 - PI_FLOOR] so a saturated logit
    still gives finite Bernoulli log-probabilities.
    """
    out = mlp(params, "n", x, n_layers)
    _check_finite(out, "MAP network")
    return PI_FLOOR + (1.0 - 2.0 * PI_FLOOR) * dc.sigmoid(out[:, 0]), dc.exp(out[:, 1:6])


def baseline_logits(x, params, n_layers=3):
    out = mlp(params, "b", x, n_layers)
    _check_finite(out, "baseline network")
    return out[:, 0]


def baseline_forward(x, params, n_layers=3):
    return dc.sigmoid(baseline_logits(x, params, n_layers))


def classify(pi_hat, eta):
    """y_hat = 1[pi_hat >= eta]."""
    return (np.asarray(pi_hat) >= eta).astype(int)


# ---------------------------------------------------------------------------
# the model


@dataclass
class LogJoint:
    """Per-patient terms of log p(pi) + log p(y|pi) + log p(z|pi, phi) + log p(x|z, psi)."""

    log_p_pi: object
    log_p_y: object
    log_p_z: object
    log_p_x: object
    total: object = None

    def breakdown(self):
        """Per-patient term values as plain arrays."""
        return {k: np.asarray(dc.value(getattr(self, k)))
                for k in ("log_p_pi", "log_p_y", "log_p_z", "log_p_x")}


@dataclass
class LPSModel:
    """Everything needed to evaluate the joint density and the networks."""

    arch: Architecture
    scaler: FeatureScaler
    priors: PriorFit
    params: ParamStore
    wk: WindkesselConfig = field(default_factory=WindkesselConfig)
    eta: float = 0.5

    @property
    def n_layers(self):
        return len(self.arch.hidden) + 1

    @property
    def f_layers(self):
        return len(self.arch.f_hidden) + 1

    @property
    def concept_center(self):
        return self.priors.mu.mean(axis=1)

    @property
    def concept_scale(self):
        return np.sqrt(self.priors.var.mean(axis=1))

    # -- components -------------------------------------------------------

    def forward_model(self, z, params=None):
        """Learned f(z; psi) on the standardized scale of the non-vitals features."""
        p = params if params is not None else self.params
        u = (dc.log(z) - self.concept_center) / self.concept_scale
        return mlp(p, "f", u, self.f_layers, act=dc.tanh)

    def known_vitals(self, z):
        """g(z) in natural units, columns (HR, BP_sys, BP_dias)."""
        v = simulate_vitals(ConceptVector.from_array(z), self.wk)
        return dc.stack([v.hr, v.bp_sys, v.bp_dias], axis=-1)

    def mixture(self, phi_mu):
        var = self.priors.var
        high = LogNormalParams(phi_mu[:, 1], var[:, 1])
        low = LogNormalParams(phi_mu[:, 0], var[:, 0])
        return RiskMixtureParams(high, low)

    def log_p_phi(self, phi_mu):
        """Normal hyperprior on the mixture means; variances are pinned (delta prior)."""
        return gaussian_logpdf(dc.reshape(phi_mu, (-1,)) if isinstance(phi_mu, dc.Var)
                               else np.ravel(phi_mu),
                               GaussianParams(np.ravel(self.priors.mu), HYPERPRIOR_SIGMA))

    def log_joint(self, pi, z, x, y, params=None, include_likelihood=True) -> LogJoint:
        """Evaluate the log joint for a batch; differentiable in pi, z, phi and psi.

        ``x`` is standardized, ``z`` has shape (n, 5) in natural units and
        ``pi`` shape (n,).  ``params`` supplies ``phi/mu`` and ``f/*`` (tape
        leaves during training).
        """
        p = params if params is not None else self.params
        phi_mu = p["phi/mu"]
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        log_p_pi = beta_logpdf(pi, BetaParams(1.0, 1.0))
        log_p_y = bernoulli_logpmf(y, pi)
        pi_col = dc.reshape(pi, (-1, 1)) if isinstance(pi, dc.Var) else np.reshape(pi, (-1, 1))
        log_p_z = dc.sum(mixture_logpdf(z, pi_col, self.mixture(phi_mu)), axis=1)
        if include_likelihood:
            g = self.scaler.scale_vitals(self.known_vitals(z))
            lv = gaussian_logpdf(x[:, :N_VITALS], GaussianParams(g, self.arch.vitals_sigma))
            fx = self.forward_model(z, p)
            lr = gaussian_logpdf(x[:, N_VITALS:], GaussianParams(fx, self.arch.rest_sigma))
            log_p_x = lv + lr
        else:
            log_p_x = np.zeros(len(y))
        total = dc.sum(log_p_pi + log_p_y + log_p_z + log_p_x)
        return LogJoint(log_p_pi, log_p_y, log_p_z, log_p_x, total)

    # -- inference --------------------------------------------------------

    def standardize(self, cohort_or_x):
        if isinstance(cohort_or_x, np.ndarray):
            return self.scaler.apply(cohort_or_x)
        return self.scaler.apply(feature_matrix(cohort_or_x))

    def posterior(self, xs, params=None) -> PosteriorParams:
        return posterior_forward(xs, params if params is not None else self.params, self.n_layers)

    def map_estimate(self, xs, params=None):
        return map_forward(xs, params if params is not None else self.params, self.n_layers)

    def predict(self, xs):
        """MAP predictions with per-patient log-joint terms (the evidence breakdown)."""
        pi_hat, z_hat = self.map_estimate(xs)
        return pi_hat, z_hat, classify(pi_hat, self.eta)

    # -- persistence --------------------------------------------------------

    def save(self, directory, extra=None):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        header = {
            "format": FORMAT_TAG,
            "architecture": self.arch.to_dict(),
            "scaler": self.scaler.to_dict(),
            "priors": self.priors.to_dict(),
            "hyperprior_sigma": HYPERPRIOR_SIGMA,
            "windkessel": self.wk.__dict__,
            "eta": self.eta,
            "groups": {k: list(v.shape) for k, v in self.params.items()},
        }
        if extra:
            header["extra"] = extra
        (d / "model.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
        np.savez(d / "params.npz", **{k: np.asarray(v) for k, v in self.params.items()})

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        try:
            header = json.loads((d / "model.json").read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ParseError(f"{d}: cannot read model header: {e}") from None
        if header.get("format") != FORMAT_TAG:
            raise ParseError(f"{d}: unsupported model format {header.get('format')!r}")
        with np.load(d / "params.npz") as npz:
            params = ParamStore({k: npz[k] for k in header["groups"]})
        return cls(
            arch=Architecture.from_dict(header["architecture"]),
            scaler=FeatureScaler.from_dict(header["scaler"]),
            priors=PriorFit.from_dict(header["priors"]),
            params=params,
            wk=WindkesselConfig(**header["windkessel"]),
            eta=header.get("eta", 0.5),
        )


def init_model(scaler: FeatureScaler, priors: PriorFit, d_tab: int, d_wave: int, seed: int = 0,
               arch: Architecture | None = None, with_map=True) -> LPSModel:
    """Fresh parameters: phi at the hyperprior centres, networks near the prior."""
    arch = arch or Architecture(N_VITALS + d_tab + d_wave, d_tab, d_wave)
    rng = np.random.default_rng([seed, 0x1F5])
    center = priors.mu.mean(axis=1)
    log_var = LOG_VAR_BOUND * np.arctanh(np.log(priors.var.mean(axis=1)) / LOG_VAR_BOUND)
    sizes = (arch.d_in,) + tuple(arch.hidden)
    params = {"phi/mu": priors.mu.copy()}
    params.update(init_mlp(rng, "f", (5,) + tuple(arch.f_hidden) + (d_tab + d_wave,)))
    params.update(init_mlp(rng, "q", sizes + (12,),
                           out_bias=np.concatenate([center, log_var, [0.0, 0.0]]), out_scale=0.1))
    if with_map:
        params.update(init_mlp(rng, "n", sizes + (6,),
                               out_bias=np.concatenate([[math.log(0.1 / 0.9)], center]),
                               out_scale=0.1))
    return LPSModel(arch, scaler, priors, ParamStore(params))


def init_baseline(d_in: int, seed: int = 0, hidden=(128, 64)):
    rng = np.random.default_rng([seed, 0xBA5E])
    return ParamStore(init_mlp(rng, "b", (d_in,) + tuple(hidden) + (1,),
                               out_bias=[math.log(0.1 / 0.9)], out_scale=0.1))


BASELINE_FORMAT_TAG = "lps-baseline/1"


@dataclass
class BaselineModel:
    """Label-only classifier sharing the MAP network's backbone."""

    scaler: FeatureScaler
    params: ParamStore
    hidden: tuple = (128, 64)

    @property
    def n_layers(self):
        return len(self.hidden) + 1

    def standardize(self, cohort_or_x):
        if isinstance(cohort_or_x, np.ndarray):
            return self.scaler.apply(cohort_or_x)
        return self.scaler.apply(feature_matrix(cohort_or_x))

    def predict_proba(self, xs, params=None):
        return baseline_forward(xs, params if params is not None else self.params, self.n_layers)

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        header = {"format": BASELINE_FORMAT_TAG, "hidden": list(self.hidden),
                  "scaler": self.scaler.to_dict(),
                  "groups": {k: list(v.shape) for k, v in self.params.items()}}
        (d / "model.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
        np.savez(d / "params.npz", **{k: np.asarray(v) for k, v in self.params.items()})

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        try:
            header = json.loads((d / "model.json").read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ParseError(f"{d}: cannot read model header: {e}") from None
        if header.get("format") != BASELINE_FORMAT_TAG:
            raise ParseError(f"{d}: unsupported model format {header.get('format')!r}")
        with np.load(d / "params.npz") as npz:
            params = ParamStore({k: npz[k] for k in header["groups"]})
        return cls(FeatureScaler.from_dict(header["scaler"]), params, tuple(header["hidden"]))


def load_any(directory):
    """Load whichever model kind ``directory`` holds."""
    d = Path(directory)
    try:
        tag = json.loads((d / "model.json").read_text()).get("format")
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"{d}: cannot read model header: {e}") from None
    if tag == FORMAT_TAG:
        return LPSModel.load(d)
    if tag == BASELINE_FORMAT_TAG:
        return BaselineModel.load(d)
    raise ParseError(f"{d}: unsupported model format {tag!r}")
