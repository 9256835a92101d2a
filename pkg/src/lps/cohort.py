"""Synthetic cohorts sampled from the generative model, plus prior fitting.

Each patient draws a risk pi ~ Beta(alpha, beta), an outcome y ~ Bernoulli(pi),
and each concept from a two-component log-normal mixture weighted by pi.
Vitals come from the Windkessel forward model, the remaining features from a
fixed random "teacher" network, all with additive Gaussian noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .distributions import lognormal_fit
from .errors import ConfigurationError, ParseError, UsageError
from .windkessel import CONCEPTS, ConceptVector, WindkesselConfig, estimate_tau, simulate_vitals

CLASSES = (0, 1)  # 0 = lived / low-risk component, 1 = died / high-risk component


@dataclass(frozen=True)
class ConceptMixture:
    """Generating log-normal components for one concept, given as medians and log-sigmas."""

    median_low: float
    median_high: float
    sigma_low: float
    sigma_high: float

    @property
    def mu(self):
        return np.array([math.log(self.median_low), math.log(self.median_high)])

    @property
    def var(self):
        return np.array([self.sigma_low ** 2, self.sigma_high ** 2])


def _default_mixtures():
    return {
        "R": ConceptMixture(1000.0, 1400.0, 0.15, 0.15),
        "C": ConceptMixture(0.0015, 0.0010, 0.15, 0.15),
        "Ts": ConceptMixture(0.27, 0.25, 0.08, 0.08),
        "Td": ConceptMixture(0.53, 0.45, 0.12, 0.12),
        "CO": ConceptMixture(5.5, 3.8, 0.15, 0.20),
    }


@dataclass(frozen=True)
class GeneratorConfig:
    alpha: float = 1.2
    beta: float = 11.2
    mixtures: dict = field(default_factory=_default_mixtures)
    hr_noise: float = 1.5
    bp_noise: float = 2.0
    tabular_noise: float = 0.25
    waveform_noise: float = 0.5
    d_tab: int = 4
    d_wave: int = 64
    teacher_seed: int = 7
    co_rate: float = 0.8
    r_rate: float = 0.2
    n: int = 3728
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigurationError("alpha and beta must be > 0")
        for name in ("hr_noise", "bp_noise", "tabular_noise", "waveform_noise"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        for name in ("co_rate", "r_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.n < 0:
            raise ConfigurationError("cohort size must be >= 0")
        if set(self.mixtures) != set(CONCEPTS):
            raise ConfigurationError(f"mixtures must cover exactly {CONCEPTS}")

    @classmethod
    def low_noise(cls, **kw):
        base = dict(hr_noise=0.3, bp_noise=0.5, tabular_noise=0.05, waveform_noise=0.1)
        base.update(kw)
        return cls(**base)

    def component_mu(self):
        """(5, 2) array of generating log-scale means, columns (low, high)."""
        return np.stack([self.mixtures[k].mu for k in CONCEPTS])

    def component_var(self):
        return np.stack([self.mixtures[k].var for k in CONCEPTS])

    def class_log_means(self):
        """E[log z_m | y = i] implied by the generating parameters, shape (5, 2).

        Given y, pi ~ Beta(alpha + y, beta + 1 - y), and each concept picks
        the high-risk component with probability pi.
        """
        s = self.alpha + self.beta + 1.0
        w = np.array([self.alpha / s, (self.alpha + 1.0) / s])
        mu = self.component_mu()
        return w * mu[:, 1:2] + (1.0 - w) * mu[:, 0:1]

    def to_dict(self):
        d = asdict(self)
        d["mixtures"] = {k: asdict(v) for k, v in self.mixtures.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown generator config fields: {sorted(unknown)}")
        if "mixtures" in d:
            mix = _default_mixtures()
            for k, v in d["mixtures"].items():
                if k not in mix:
                    raise ConfigurationError(f"unknown concept {k!r}")
                mix[k] = ConceptMixture(**v)
            d["mixtures"] = mix
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}") from None


# reference point for the teacher's input standardization
_TEACHER_CENTER = np.log([1000.0, 0.0015, 0.27, 0.53, 5.5])
_TEACHER_SCALE = 0.2
_TEACHER_HIDDEN = 16
WAVE_WINDOW = 2.0  # seconds spanned by the synthetic waveform


class TeacherMap:
    """Fixed two-layer dense map from log z to tabular + waveform features."""

    def __init__(self, seed: int, d_tab: int = 4, d_wave: int = 64):
        rng = np.random.default_rng([seed, 0x7EAC])
        self.d_tab, self.d_wave = d_tab, d_wave
        d_out = d_tab + d_wave
        self.w1 = rng.standard_normal((5, _TEACHER_HIDDEN))
        self.b1 = 0.5 * rng.standard_normal(_TEACHER_HIDDEN)
        self.w2 = rng.standard_normal((_TEACHER_HIDDEN, d_out)) / math.sqrt(_TEACHER_HIDDEN)
        self.b2 = 0.5 * rng.standard_normal(d_out)
        self.t_grid = np.arange(d_wave) * (WAVE_WINDOW / max(d_wave, 1))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        u = (np.log(z) - _TEACHER_CENTER) / _TEACHER_SCALE
        out = np.tanh(u @ self.w1 + self.b1) @ self.w2 + self.b2
        tab, wave = out[..., :self.d_tab], out[..., self.d_tab:]
        ts, td = z[..., 2:3], z[..., 3:4]
        phase = np.mod(self.t_grid, ts + td)
        pulse = np.where(phase < ts, np.sin(np.pi * np.minimum(phase, ts) / ts), 0.0)
        return np.concatenate([tab, wave + 2.0 * pulse], axis=-1)


def teacher_map(z, seed: int, d_tab: int = 4, d_wave: int = 64):
    return TeacherMap(seed, d_tab, d_wave)(z)


@dataclass
class PatientRecord:
    id: int
    hr: float
    bp_sys: float
    bp_dias: float
    tabular: np.ndarray
    waveform: np.ndarray
    y: int
    co_observed: bool
    co: float | None
    r_observed: bool
    r: float | None
    true_z: np.ndarray
    true_pi: float

    @property
    def vitals(self):
        return np.array([self.hr, self.bp_sys, self.bp_dias])

    def features(self):
        """Model inputs (vitals, tabular, waveform); never includes ground truth."""
        return np.concatenate([self.vitals, self.tabular, self.waveform])

    def to_json(self):
        return {
            "id": self.id, "hr": self.hr, "bp_sys": self.bp_sys, "bp_dias": self.bp_dias,
            "tabular": [float(v) for v in self.tabular],
            "waveform": [float(v) for v in self.waveform],
            "y": self.y,
            "co_observed": self.co_observed, "co": self.co,
            "r_observed": self.r_observed, "r": self.r,
            "true_z": [float(v) for v in self.true_z], "true_pi": self.true_pi,
        }

    @classmethod
    def from_json(cls, d):
        rec = cls(
            id=int(d["id"]), hr=float(d["hr"]), bp_sys=float(d["bp_sys"]),
            bp_dias=float(d["bp_dias"]),
            tabular=np.asarray(d["tabular"], dtype=float),
            waveform=np.asarray(d["waveform"], dtype=float),
            y=int(d["y"]),
            co_observed=bool(d["co_observed"]),
            co=None if d["co"] is None else float(d["co"]),
            r_observed=bool(d["r_observed"]),
            r=None if d["r"] is None else float(d["r"]),
            true_z=np.asarray(d["true_z"], dtype=float), true_pi=float(d["true_pi"]),
        )
        if rec.y not in (0, 1):
            raise ParseError(f"outcome must be 0 or 1, got {rec.y}")
        if rec.co_observed != (rec.co is not None) or rec.r_observed != (rec.r is not None):
            raise ParseError("observed flag does not match presence of value")
        return rec

    def __eq__(self, other):
        if not isinstance(other, PatientRecord):
            return NotImplemented
        a, b = self.to_json(), other.to_json()
        return a == b


def _sample_batch(rng, cfg: GeneratorConfig, teacher: TeacherMap, n: int, first_id: int = 0):
    pi = rng.beta(cfg.alpha, cfg.beta, size=n)
    y = (rng.random(n) < pi).astype(int)
    mu, var = cfg.component_mu(), cfg.component_var()
    high = rng.random((n, 5)) < pi[:, None]
    loc = np.where(high, mu[:, 1], mu[:, 0])
    scale = np.sqrt(np.where(high, var[:, 1], var[:, 0]))
    z = np.exp(loc + scale * rng.standard_normal((n, 5)))
    vit = simulate_vitals(ConceptVector.from_array(z), WindkesselConfig())
    hr = vit.hr + cfg.hr_noise * rng.standard_normal(n)
    sys = vit.bp_sys + cfg.bp_noise * rng.standard_normal(n)
    dias = vit.bp_dias + cfg.bp_noise * rng.standard_normal(n)
    rest = teacher(z)
    tab = rest[:, :cfg.d_tab] + cfg.tabular_noise * rng.standard_normal((n, cfg.d_tab))
    wave = rest[:, cfg.d_tab:] + cfg.waveform_noise * rng.standard_normal((n, cfg.d_wave))
    co_obs = rng.random(n) < cfg.co_rate
    r_obs = rng.random(n) < cfg.r_rate
    return [
        PatientRecord(
            id=first_id + i, hr=float(hr[i]), bp_sys=float(sys[i]), bp_dias=float(dias[i]),
            tabular=tab[i].copy(), waveform=wave[i].copy(), y=int(y[i]),
            co_observed=bool(co_obs[i]), co=float(z[i, 4]) if co_obs[i] else None,
            r_observed=bool(r_obs[i]), r=float(z[i, 0]) if r_obs[i] else None,
            true_z=z[i].copy(), true_pi=float(pi[i]),
        )
        for i in range(n)
    ]


def sample_patient(rng, cfg: GeneratorConfig, teacher: TeacherMap | None = None, id: int = 0):
    teacher = teacher or TeacherMap(cfg.teacher_seed, cfg.d_tab, cfg.d_wave)
    return _sample_batch(rng, cfg, teacher, 1, id)[0]


def generate_cohort(cfg: GeneratorConfig, shard_size: int = 1024):
    """``cfg.n`` independent patients with ids 0..n-1.

    Shard k draws from the stream seeded by (cfg.seed, k), so shards can be
    produced independently without changing the result.
    """
    teacher = TeacherMap(cfg.teacher_seed, cfg.d_tab, cfg.d_wave)
    out = []
    for k, start in enumerate(range(0, cfg.n, shard_size)):
        rng = np.random.default_rng([cfg.seed, k])
        out.extend(_sample_batch(rng, cfg, teacher, min(shard_size, cfg.n - start), start))
    return out


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise UsageError(f"split fractions must be three values summing to 1, got {self.fractions}")


def split_cohort(cohort, spec: SplitSpec = SplitSpec()):
    n = len(cohort)
    perm = np.random.default_rng([spec.seed, 0x5917]).permutation(n)
    n_train = int(math.floor(spec.fractions[0] * n + 1e-9))
    n_val = int(math.floor(spec.fractions[1] * n + 1e-9))
    pick = lambda idx: [cohort[i] for i in idx]
    return (pick(perm[:n_train]), pick(perm[n_train:n_train + n_val]),
            pick(perm[n_train + n_val:]))


@dataclass
class PriorFit:
    """Per-concept, per-class hyperprior centres and fixed variances, shape (5, 2)."""

    mu: np.ndarray
    var: np.ndarray

    def to_dict(self):
        return {"mu": self.mu.tolist(), "var": self.var.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mu"], dtype=float), np.asarray(d["var"], dtype=float))


def concept_samples(cohort):
    """Approximate concept values available for prior fitting, keyed by concept then class."""
    out = {k: {c: [] for c in CLASSES} for k in CONCEPTS}
    for p in cohort:
        beat = 60.0 / p.hr
        td = 2.0 * beat / 3.0
        out["Ts"][p.y].append(beat / 3.0)
        out["Td"][p.y].append(td)
        if p.co_observed:
            out["CO"][p.y].append(p.co)
        if p.r_observed:
            out["R"][p.y].append(p.r)
            tau = float(estimate_tau(p.bp_sys, p.bp_dias, td))
            out["C"][p.y].append(tau / p.r)
    return out


def fit_concept_priors(cohort) -> PriorFit:
    samples = concept_samples(cohort)
    mu = np.zeros((5, 2))
    var = np.zeros((5, 2))
    for m, k in enumerate(CONCEPTS):
        for c in CLASSES:
            vals = samples[k][c]
            if len(vals) < 2:
                raise ConfigurationError(
                    f"need at least 2 values of {k} for class y={c} to fit a prior, got {len(vals)}")
            fit = lognormal_fit(vals)
            mu[m, c], var[m, c] = fit.mu, fit.var
    return PriorFit(mu, var)


def write_cohort(cohort, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in cohort:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


def read_cohort(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(PatientRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, ParseError) as e:
                raise ParseError(f"{path}: malformed record on line {lineno}: {e}") from None
    return out


def with_noise(cfg: GeneratorConfig, **kw) -> GeneratorConfig:
    return replace(cfg, **kw)
