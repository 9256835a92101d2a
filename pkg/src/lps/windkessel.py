"""Two-element Windkessel forward model g(z) -> (BP_sys, BP_dias, HR).

Units: R in mmHg*s/L, C in L/mmHg (so tau = RC is in seconds), Ts and Td in
seconds and CO in L/min.  Pressures are in mmHg.

Systole is driven by a half-sinusoid inflow whose integral equals the stroke
volume; diastole is a free exponential decay.  Phases are chained by
continuity: each phase starts from the end pressure of the previous one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import diffcore as dc
from .errors import DomainError, UsageError

CONCEPTS = ("R", "C", "Ts", "Td", "CO")
CYCLE_BOUNDS = (0.2, 3.0)


@dataclass(frozen=True)
class ConceptVector:
    """The five latent concepts; fields may be scalars, arrays or tape values."""

    R: Any
    C: Any
    Ts: Any
    Td: Any
    CO: Any

    @classmethod
    def from_array(cls, arr):
        """Build from an array whose last axis is ordered (R, C, Ts, Td, CO)."""
        if isinstance(arr, dc.Var):
            return cls(*(arr[..., i] for i in range(5)))
        arr = np.asarray(arr, dtype=float)
        if arr.shape[-1] != 5:
            raise UsageError(f"concept array needs a trailing axis of 5, got {arr.shape}")
        return cls(*(arr[..., i] for i in range(5)))

    def to_array(self):
        return np.stack([np.asarray(dc.value(getattr(self, k)), dtype=float) for k in CONCEPTS],
                        axis=-1)

    def as_dict(self):
        return {k: dc.value(getattr(self, k)) for k in CONCEPTS}

    def validate(self):
        vals = self.as_dict()
        for k, v in vals.items():
            if not np.all(np.asarray(v) > 0):
                raise DomainError(f"concept {k} must be strictly positive, got {v}")
        cycle = np.asarray(vals["Ts"]) + np.asarray(vals["Td"])
        lo, hi = CYCLE_BOUNDS
        if not np.all((cycle > lo) & (cycle < hi)):
            raise DomainError(f"Ts + Td must lie in {CYCLE_BOUNDS} s, got {cycle}")
        return self


@dataclass(frozen=True)
class VitalsEstimate:
    bp_sys: Any
    bp_dias: Any
    hr: Any

    def to_array(self):
        return np.stack([np.asarray(dc.value(v), dtype=float)
                         for v in (self.hr, self.bp_sys, self.bp_dias)], axis=-1)


@dataclass(frozen=True)
class WindkesselConfig:
    settle_cycles: int = 4
    average_cycles: int = 6
    p0: float = 80.0

    def __post_init__(self):
        if self.settle_cycles < 1 or self.average_cycles < 1:
            raise UsageError("settle_cycles and average_cycles must both be >= 1")


def heart_rate(z: ConceptVector):
    return 60.0 / (z.Ts + z.Td)


def peak_inflow(z: ConceptVector):
    """I0 = pi * CO * (Ts + Td) / (120 * Ts), in L/s."""
    return math.pi * z.CO * (z.Ts + z.Td) / (120.0 * z.Ts)


def inflow(t, z: ConceptVector):
    t = np.asarray(t, dtype=float)
    ts, td = dc.value(z.Ts), dc.value(z.Td)
    if np.any(t < 0) or np.any(t >= ts + td):
        raise UsageError(f"t must lie within one cycle [0, {ts + td}), got {t}")
    i0 = peak_inflow(z)
    return i0 * dc.sin(math.pi * t / z.Ts) * (t < ts)


def _systole_terms(z):
    k = 1.0 / (z.R * z.C)
    omega = math.pi / z.Ts
    amp = peak_inflow(z) / z.C
    denom = k * k + omega * omega
    return k, omega, amp, denom


def systole_pressure(t, p_start, z: ConceptVector):
    """Closed-form systolic pressure at time ``t`` after the phase start."""
    k, omega, amp, denom = _systole_terms(z)
    wt = omega * t
    particular = amp * (k * dc.sin(wt) - omega * dc.cos(wt)) / denom
    particular0 = -amp * omega / denom
    return particular + (p_start - particular0) * dc.exp(-k * t)


def diastole_pressure(t, p_start, z: ConceptVector):
    return p_start * dc.exp(-t / (z.R * z.C))


def cycle_map(z: ConceptVector):
    """Affine phase maps: P_sys_end = a + b * P_start, P_dias_end = c * P_sys_end."""
    k, omega, amp, denom = _systole_terms(z)
    pp = amp * omega / denom  # particular solution at t=Ts (and minus its value at t=0)
    b = dc.exp(-k * z.Ts)
    a = pp + pp * b
    c = dc.exp(-k * z.Td)
    return a, b, c


def simulate_vitals(z: ConceptVector, cfg: WindkesselConfig | None = None) -> VitalsEstimate:
    """Settle for ``settle_cycles`` from P0, then average the cycle-end pressures."""
    cfg = cfg or WindkesselConfig()
    z.validate()
    a, b, c = cycle_map(z)
    p = cfg.p0
    sys_sum = dias_sum = 0.0
    for cycle in range(cfg.settle_cycles + cfg.average_cycles):
        p_sys = a + b * p
        p = c * p_sys
        if cycle >= cfg.settle_cycles:
            sys_sum = sys_sum + p_sys
            dias_sum = dias_sum + p
    n = float(cfg.average_cycles)
    return VitalsEstimate(sys_sum / n, dias_sum / n, heart_rate(z))


def transient_bound(z: ConceptVector, delta_p0, cfg: WindkesselConfig | None = None):
    """Upper bound on |change in BP outputs| caused by shifting P0 by ``delta_p0``."""
    cfg = cfg or WindkesselConfig()
    tau = dc.value(z.R) * dc.value(z.C)
    period = dc.value(z.Ts) + dc.value(z.Td)
    return np.abs(delta_p0) * np.exp(-cfg.settle_cycles * period / tau) * (
        np.exp(-dc.value(z.Ts) / tau))


@dataclass
class RK4Result:
    sys_end: np.ndarray                 # (n_cycles, *batch)
    dias_end: np.ndarray                # (n_cycles, *batch)
    t: np.ndarray | None = None         # (n_samples, *batch), absolute time
    p: np.ndarray | None = None
    samples: list = field(default_factory=list)


def rk4_reference(z: ConceptVector, dt: float, n_cycles: int, p0=80.0,
                  record_every: int | None = None) -> RK4Result:
    """Classic RK4 integration of C dP/dt + P/R = I(t), phase by phase.

    Each phase is split into equal steps no longer than ``dt`` so that step
    boundaries land on the systole/diastole switch.  With ``record_every``
    the waveform is sampled every that many steps (plus phase ends).
    """
    if dt > 1e-3:
        raise UsageError(f"rk4_reference needs dt <= 1e-3 s, got {dt}")
    z.validate()
    vals = {k: np.asarray(v, dtype=float) for k, v in z.as_dict().items()}
    R, C, ts, td, co = (vals[k] for k in CONCEPTS)
    batch = np.broadcast(R, C, ts, td, co).shape
    R, C, ts, td, co = (np.broadcast_to(v, batch) for v in (R, C, ts, td, co))
    kk = 1.0 / (R * C)
    omega = math.pi / ts
    amp = math.pi * co * (ts + td) / (120.0 * ts) / C

    p = np.broadcast_to(np.asarray(p0, dtype=float), batch).copy()
    t_abs = np.zeros(batch)
    sys_end, dias_end = [], []
    ts_rec, ps_rec = [], []

    def record(t, pp):
        ts_rec.append(np.array(t))
        ps_rec.append(np.array(pp))

    if record_every:
        record(t_abs, p)
    for _ in range(n_cycles):
        for phase, length in (("sys", ts), ("dias", td)):
            n = int(math.ceil(float(np.max(length)) / dt - 1e-9))
            h = length / n
            if phase == "sys":
                grid = np.arange(n + 1)[:, None] * h.reshape(1, -1)
                mid = grid[:-1] + 0.5 * h.reshape(1, -1)
                f_node = (amp.reshape(1, -1) * np.sin(omega.reshape(1, -1) * grid)).reshape((n + 1,) + batch)
                f_mid = (amp.reshape(1, -1) * np.sin(omega.reshape(1, -1) * mid)).reshape((n,) + batch)
            else:
                f_node = np.zeros((n + 1,) + batch)
                f_mid = np.zeros((n,) + batch)
            for i in range(n):
                k1 = f_node[i] - kk * p
                k2 = f_mid[i] - kk * (p + 0.5 * h * k1)
                k3 = f_mid[i] - kk * (p + 0.5 * h * k2)
                k4 = f_node[i + 1] - kk * (p + h * k3)
                p = p + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if record_every and ((i + 1) % record_every == 0 or i + 1 == n):
                    record(t_abs + (i + 1) * h, p)
            t_abs = t_abs + length
            (sys_end if phase == "sys" else dias_end).append(p.copy())
    res = RK4Result(np.array(sys_end), np.array(dias_end))
    if record_every:
        res.t, res.p = np.array(ts_rec), np.array(ps_rec)
    return res


def rk4_vitals(z: ConceptVector, dt=1e-4, cfg: WindkesselConfig | None = None) -> VitalsEstimate:
    """The vitals estimate computed from an RK4 run with the same settle/average rule."""
    cfg = cfg or WindkesselConfig()
    res = rk4_reference(z, dt, cfg.settle_cycles + cfg.average_cycles, cfg.p0)
    s = cfg.settle_cycles
    return VitalsEstimate(res.sys_end[s:].mean(axis=0), res.dias_end[s:].mean(axis=0),
                          heart_rate(ConceptVector(**z.as_dict())))


def closed_form_waveform(z: ConceptVector, n_cycles: int, p0=80.0, points_per_phase=50):
    """Sampled closed-form waveform (t, P) for a single concept vector."""
    zs = ConceptVector(**{k: float(np.asarray(v)) for k, v in z.as_dict().items()}).validate()
    t_out, p_out = [0.0], [float(p0)]
    t0, p = 0.0, float(p0)
    for _ in range(n_cycles):
        tl = np.linspace(0, zs.Ts, points_per_phase + 1)[1:]
        sys = systole_pressure(tl, p, zs)
        t_out.extend(t0 + tl)
        p_out.extend(sys)
        p, t0 = float(sys[-1]), t0 + zs.Ts
        tl = np.linspace(0, zs.Td, points_per_phase + 1)[1:]
        dias = diastole_pressure(tl, p, zs)
        t_out.extend(t0 + tl)
        p_out.extend(dias)
        p, t0 = float(dias[-1]), t0 + zs.Td
    return np.array(t_out), np.array(p_out)


def estimate_tau(bp_sys, bp_dias, td):
    """Invert the diastolic decay: tau = Td / log(BP_sys / BP_dias)."""
    bp_sys, bp_dias, td = (np.asarray(v, dtype=float) for v in (bp_sys, bp_dias, td))
    if np.any(bp_dias <= 0) or np.any(bp_sys <= bp_dias):
        raise DomainError("estimate_tau: requires bp_sys > bp_dias > 0")
    if np.any(td <= 0):
        raise DomainError("estimate_tau: Td must be > 0")
    return td / np.log(bp_sys / bp_dias)
