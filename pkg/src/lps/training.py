"""Variational EM, MAP-network training, the baseline, LPS-q and Integrated Gradients."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Adam, ParamStore, Tape, backward, clip_global_norm
from .distributions import (
    BetaParams, beta_mode, kumaraswamy_logpdf, lognormal_logpdf, lognormal_mode,
    sample_beta_reparam, sample_lognormal_reparam,
)
from .errors import ConfigurationError, DomainError, ParseError, TrainingError
from .metrics import auc
from .model import LPSModel, baseline_forward, baseline_logits, init_baseline

U_CLIP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    lr_vem: float = 1e-4
    lr_map: float = 1e-3
    lr_baseline: float = 1e-3
    epochs: int = 200
    map_epochs: int | None = None
    baseline_epochs: int | None = None
    batch: int = 32
    warmup_epochs: int = 10
    seed: int = 0
    clip_norm: float | None = 10.0

    def __post_init__(self):
        if min(self.lr_vem, self.lr_map, self.lr_baseline) <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.warmup_epochs > self.epochs:
            raise ConfigurationError("warmup_epochs must not exceed epochs")
        if self.batch < 1 or self.epochs < 1:
            raise ConfigurationError("batch and epochs must be >= 1")

    @property
    def n_map_epochs(self):
        return self.map_epochs if self.map_epochs is not None else self.epochs

    @property
    def n_baseline_epochs(self):
        return self.baseline_epochs if self.baseline_epochs is not None else self.epochs

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}") from None


@dataclass
class ElboTerms:
    log_p_pi: object
    log_p_y: object
    log_p_z: object
    log_p_x: object
    neg_log_q_z: object
    neg_log_q_pi: object
    log_p_phi: object
    total: object
    warmup: bool = False

    NAMES = ("log_p_pi", "log_p_y", "log_p_z", "log_p_x", "neg_log_q_z", "neg_log_q_pi",
             "log_p_phi")

    def values(self):
        return {k: float(dc.value(getattr(self, k))) for k in self.NAMES + ("total",)}

    def parts_sum(self):
        v = self.values()
        names = [k for k in self.NAMES if not (self.warmup and k == "log_p_x")]
        return sum(v[k] for k in names)

    def full(self):
        """The bound including the data-likelihood term, whatever the warmup flag."""
        v = self.values()
        return sum(v[k] for k in self.NAMES)


@dataclass
class RunResult:
    params: ParamStore
    objective: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    selected_epoch: int = 0
    terms: list = field(default_factory=list)

    def to_csv(self, path):
        keys = sorted({k for t in self.terms for k in t})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "objective", "val_auc"] + keys)
            for e, (obj, va) in enumerate(zip(self.objective, self.val_auc), start=1):
                t = self.terms[e - 1] if e - 1 < len(self.terms) else {}
                w.writerow([e, repr(obj), repr(va)] + [repr(t.get(k, "")) for k in keys])


# ---------------------------------------------------------------------------
# objectives


def draw_noise(rng, n):
    """Per-patient reparameterization noise: (eps for the 5 concepts, u for pi)."""
    eps = rng.standard_normal((n, 5))
    u = np.clip(rng.random(n), U_CLIP, 1.0 - U_CLIP)
    return eps, u


def elbo_minibatch(model: LPSModel, xs, y, params, draws, warmup=False) -> ElboTerms:
    """Single-draw estimate of the bound for one minibatch.

    ``params`` maps group names to tape leaves (or arrays) for ``phi/mu``,
    ``f/*`` and ``q/*``; ``draws`` is ``(eps, u)`` from :func:`draw_noise`.
    With ``warmup`` the data-likelihood term is left out of ``total``.
    """
    eps, u = draws
    post = model.posterior(xs, params)
    z = sample_lognormal_reparam(post.lognormal(), eps)
    beta_q = post.beta()
    pi = sample_beta_reparam(beta_q, u)
    lj = model.log_joint(pi, z, xs, y, params)
    neg_log_q_z = -dc.sum(lognormal_logpdf(z, post.lognormal()))
    neg_log_q_pi = -dc.sum(kumaraswamy_logpdf(pi, beta_q))
    log_p_phi = model.log_p_phi(params["phi/mu"])
    parts = [dc.sum(lj.log_p_pi), dc.sum(lj.log_p_y), dc.sum(lj.log_p_z), dc.sum(lj.log_p_x),
             neg_log_q_z, neg_log_q_pi, log_p_phi]
    total = parts[0]
    for i, p in enumerate(parts[1:], start=1):
        if warmup and i == 3:
            continue
        total = total + p
    return ElboTerms(*parts, total=total, warmup=warmup)


def map_objective(model: LPSModel, xs, y, params=None):
    """Sum over patients of the log joint at the MAP-network outputs."""
    pi_hat, z_hat = model.map_estimate(xs, params)
    return model.log_joint(pi_hat, z_hat, xs, y, params)


def lps_q_inference(model: LPSModel, xs, params=None):
    """Modes of the variational posterior: (pi_hat, z_hat)."""
    post = model.posterior(xs, params)
    pi_hat = beta_mode(BetaParams(dc.value(post.a), dc.value(post.b)))
    z_hat = np.asarray(dc.value(lognormal_mode(post.lognormal())))
    return np.asarray(pi_hat), z_hat


# ---------------------------------------------------------------------------
# generic loop


def _batches(n, batch, rng):
    perm = rng.permutation(n)
    return [perm[i:i + batch] for i in range(0, n, batch)]


def _run(store: ParamStore, trainable, step_fn, score_fn, n_train, epochs, lr, cfg, stage):
    """Shared Adam ascent loop with validation-AUC checkpointing.

    ``step_fn(param_map, idx, rng, epoch)`` returns (objective Var, info dict);
    ``score_fn(store)`` returns validation AUC.
    """
    opt = Adam(lr=lr)
    result = RunResult(store)
    best = -np.inf
    for epoch in range(1, epochs + 1):
        rng = np.random.default_rng([cfg.seed, stage, epoch])
        totals, infos = [], []
        for idx in _batches(n_train, cfg.batch, rng):
            tape = Tape()
            pmap = {k: (tape.leaf(v) if k in trainable else v) for k, v in store.items()}
            try:
                obj, info = step_fn(pmap, idx, rng, epoch)
            except DomainError as e:
                raise TrainingError(f"stage {stage}, epoch {epoch}: {e}") from e
            val = float(dc.value(obj))
            if not np.isfinite(val):
                raise TrainingError(f"stage {stage}: objective diverged at epoch {epoch}")
            grads = backward(tape, obj)
            try:
                g = clip_global_norm({k: grads[pmap[k]] for k in trainable}, cfg.clip_norm)
                store = opt.step(store, g, maximize=True)
            except TrainingError as e:
                raise TrainingError(f"stage {stage}, epoch {epoch}: {e}") from e
            totals.append(val / len(idx))
            infos.append(info)
        result.objective.append(float(np.mean(totals)))
        if infos and infos[0]:
            result.terms.append({k: float(np.mean([i[k] for i in infos])) for k in infos[0]})
        score = score_fn(store)
        result.val_auc.append(score)
        if score > best:
            best = score
            result.selected_epoch = epoch
            result.params = store
    return result


def train_variational_em(model: LPSModel, xs_train, y_train, xs_val, y_val, cfg: TrainConfig):
    """Stage one: maximize the bound over phi, psi and the posterior network."""
    trainable = [k for k in model.params.names() if k == "phi/mu" or k[:2] in ("f/", "q/")]
    n = len(y_train)

    def step(pmap, idx, rng, epoch):
        warm = epoch <= cfg.warmup_epochs
        terms = elbo_minibatch(model, xs_train[idx], y_train[idx], pmap,
                               draw_noise(rng, len(idx)), warmup=warm)
        info = {k: v / len(idx) for k, v in terms.values().items()}
        info["full"] = terms.full() / len(idx)
        return terms.total, info

    def score(store):
        post = model.posterior(xs_val, store)
        return auc(beta_mode(BetaParams(post.a, post.b)), y_val)

    res = _run(model.params, set(trainable), step, score, n, cfg.epochs, cfg.lr_vem, cfg, 1)
    model.params = res.params
    return model, res


def train_map_network(model: LPSModel, xs_train, y_train, xs_val, y_val, cfg: TrainConfig):
    """Stage two: fit the MAP network with phi and psi frozen."""
    trainable = [k for k in model.params.names() if k.startswith("n/")]

    def step(pmap, idx, rng, epoch):
        lj = map_objective(model, xs_train[idx], y_train[idx], pmap)
        n = len(idx)
        info = {k: float(np.sum(v)) / n for k, v in lj.breakdown().items()}
        return lj.total, info

    def score(store):
        pi_hat, _ = model.map_estimate(xs_val, store)
        return auc(pi_hat, y_val)

    res = _run(model.params, set(trainable), step, score, len(y_train), cfg.n_map_epochs,
               cfg.lr_map, cfg, 2)
    model.params = res.params
    return model, res


def bce_objective(params, xs, y, n_layers=3):
    """Sum of Bernoulli log-likelihoods (negative binary cross-entropy), from logits."""
    logit = baseline_logits(xs, params, n_layers)
    y = np.asarray(y, dtype=float)
    return dc.sum(y * dc.log_sigmoid(logit) + (1.0 - y) * dc.log_sigmoid(-logit))


def train_baseline(xs_train, y_train, xs_val, y_val, cfg: TrainConfig, hidden=(128, 64)):
    store = init_baseline(xs_train.shape[1], cfg.seed, hidden)
    n_layers = len(hidden) + 1

    def step(pmap, idx, rng, epoch):
        return bce_objective(pmap, xs_train[idx], y_train[idx], n_layers), {}

    def score(st):
        return auc(baseline_forward(xs_val, st, n_layers), y_val)

    res = _run(store, set(store.names()), step, score, len(y_train), cfg.n_baseline_epochs,
               cfg.lr_baseline, cfg, 3)
    return res.params, res


# ---------------------------------------------------------------------------
# attribution


def integrated_gradients(fn, x, x_baseline=None, steps=256):
    """Midpoint-rule Integrated Gradients of a scalar-output model.

    ``fn`` maps an (m, d) batch (array or tape value) to m outputs.
    """
    x = np.asarray(x, dtype=float)
    base = np.zeros_like(x) if x_baseline is None else np.asarray(x_baseline, dtype=float)
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    path = base[None, :] + alphas[:, None] * (x - base)[None, :]
    tape = Tape()
    leaf = tape.leaf(path)
    out = dc.sum(fn(leaf))
    grads = backward(tape, out)[leaf]
    return (x - base) * grads.mean(axis=0)
