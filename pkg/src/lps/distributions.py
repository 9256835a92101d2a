"""Log-densities, reparameterized samplers and closed-form modes.

All kernels are written with :mod:`lps.diffcore` ops, so they are
differentiable when any argument is a tape ``Var`` and return plain numpy
arrays otherwise.  Kernels broadcast elementwise over patients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import diffcore as dc
from .diffcore.special import lgamma
from .errors import DomainError, UsageError

LOG_2PI = math.log(2.0 * math.pi)
VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class BetaParams:
    a: Any
    b: Any


@dataclass(frozen=True)
class LogNormalParams:
    """Log-normal with log-scale location ``mu`` and log-scale variance ``var``."""

    mu: Any
    var: Any

    @property
    def sigma(self):
        return dc.sqrt(self.var)


@dataclass(frozen=True)
class GaussianParams:
    mean: Any
    sigma: Any


@dataclass(frozen=True)
class RiskMixtureParams:
    high: LogNormalParams
    low: LogNormalParams


def _v(x):
    return dc.value(x)


def _require(cond, msg):
    """Raise DomainError unless ``cond`` holds everywhere; ``msg`` may be a callable."""
    if not np.all(cond):
        raise DomainError(msg() if callable(msg) else msg)


def beta_logpdf(x, p: BetaParams):
    xv = _v(x)
    _require((xv > 0) & (xv < 1), lambda: f"beta_logpdf: x must lie in (0, 1), got {xv}")
    _require((_v(p.a) > 0) & (_v(p.b) > 0), "beta_logpdf: concentrations must be > 0")
    log_norm = dc.lgamma(p.a) + dc.lgamma(p.b) - dc.lgamma(p.a + p.b)
    return (p.a - 1.0) * dc.log(x) + (p.b - 1.0) * dc.log1p(-x) - log_norm


def bernoulli_logpmf(y, pi):
    pv = _v(pi)
    _require((pv > 0) & (pv < 1), lambda: f"bernoulli_logpmf: pi must lie in (0, 1), got {pv}")
    y = np.asarray(y, dtype=float)
    return y * dc.log(pi) + (1.0 - y) * dc.log1p(-pi)


def lognormal_logpdf(x, p: LogNormalParams):
    xv = _v(x)
    _require(xv > 0, lambda: f"lognormal_logpdf: x must be > 0, got {xv}")
    _require(_v(p.var) > 0, "lognormal_logpdf: variance must be > 0")
    lx = dc.log(x)
    diff = lx - p.mu
    return -lx - 0.5 * (LOG_2PI + dc.log(p.var)) - diff * diff / (2.0 * p.var)


def gaussian_logpdf(x, p: GaussianParams, axis=-1):
    """Sum over ``axis`` of independent normal log-densities."""
    xs, ms = np.shape(_v(x)), np.shape(_v(p.mean))
    try:
        ok = np.broadcast_shapes(xs, ms) == xs
    except ValueError:
        ok = False
    if not ok:
        raise UsageError(f"gaussian_logpdf: shape mismatch {xs} vs mean {ms}")
    sigma = p.sigma
    _require(_v(sigma) > 0, "gaussian_logpdf: sigma must be > 0")
    z = (x - p.mean) / sigma
    terms = (-0.5 * LOG_2PI - dc.log(sigma)) - 0.5 * z * z
    if len(xs) == 0:
        return terms
    return dc.sum(terms, axis=axis)


def mixture_logpdf(z, pi, p: RiskMixtureParams):
    """log(pi LN_high(z) + (1 - pi) LN_low(z)) via log-sum-exp."""
    zv, pv = _v(z), _v(pi)
    _require(zv > 0, lambda: f"mixture_logpdf: z must be > 0, got {zv}")
    _require((pv >= 0) & (pv <= 1), lambda: f"mixture_logpdf: pi must lie in [0, 1], got {pv}")
    l1 = lognormal_logpdf(z, p.high)
    l0 = lognormal_logpdf(z, p.low)
    # factor out the larger exponent; its gradient cancels exactly
    m = np.maximum(_v(l1), _v(l0))
    s = pi * dc.exp(l1 - m) + (1.0 - pi) * dc.exp(l0 - m)
    return m + dc.log(s)


def lognormal_mode(p: LogNormalParams):
    return dc.exp(p.mu - p.var)


def beta_mode(p: BetaParams):
    """(a - 1) / (a + b - 2); 0.5 for the uniform Beta(1, 1)."""
    a, b = _v(p.a), _v(p.b)
    _require((a >= 1) & (b >= 1), lambda: f"beta_mode: needs a, b >= 1, got a={a}, b={b}")
    denom = a + b - 2.0
    uniform = denom <= 0
    safe = np.where(uniform, 1.0, denom)
    return np.where(uniform, 0.5, (a - 1.0) / safe)


def sample_lognormal_reparam(p: LogNormalParams, eps):
    """exp(mu + sigma * eps); ``eps`` is a standard-normal draw held constant."""
    return dc.exp(p.mu + dc.sqrt(p.var) * np.asarray(eps, dtype=float))


def sample_beta_reparam(p: BetaParams, u):
    """Kumaraswamy(a, b) inverse-CDF draw standing in for Beta(a, b)."""
    u = np.asarray(u, dtype=float)
    _require((u > 0) & (u < 1), "sample_beta_reparam: u must lie in (0, 1)")
    # 1 - (1-u)^(1/b), kept accurate for u near 0
    inner = -dc.expm1(np.log1p(-u) / p.b)
    return dc.exp(dc.log(inner) / p.a)


def kumaraswamy_logpdf(x, p: BetaParams):
    xv = _v(x)
    _require((xv > 0) & (xv < 1), lambda: f"kumaraswamy_logpdf: x must lie in (0, 1), got {xv}")
    xa = dc.pow(x, p.a)
    return dc.log(p.a) + dc.log(p.b) + (p.a - 1.0) * dc.log(x) + (p.b - 1.0) * dc.log1p(-xa)


def kumaraswamy_cdf(x, a, b):
    x = np.asarray(x, dtype=float)
    return 1.0 - (1.0 - np.clip(x, 0, 1) ** a) ** b


def kumaraswamy_mean(a, b):
    log_b = float(lgamma(1.0 + 1.0 / a)) + float(lgamma(b)) - float(lgamma(1.0 + 1.0 / a + b))
    return b * math.exp(log_b)


def lognormal_fit(samples) -> LogNormalParams:
    """Maximum-likelihood log-normal fit (population variance, floored)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("lognormal_fit: no samples")
    if np.any(x <= 0):
        raise DomainError(f"lognormal_fit: samples must be > 0, got {x[x <= 0][0]}")
    lx = np.log(x)
    mu = float(lx.mean())
    var = float(lx.var()) if x.size >= 2 else 0.0
    return LogNormalParams(mu, max(var, VAR_FLOOR))
