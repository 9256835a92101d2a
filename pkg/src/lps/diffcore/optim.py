"""Parameter storage and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from ..errors import TrainingError, UsageError


class ParamStore:
    """Named flat parameter groups with fixed shapes.

    Stores are treated as immutable snapshots: :meth:`updated` returns a new
    store and the arrays held here are marked read-only.
    """

    def __init__(self, groups: Mapping[str, np.ndarray]):
        self._groups: dict[str, np.ndarray] = {}
        for name, arr in groups.items():
            if name in self._groups:
                raise UsageError(f"duplicate parameter group {name!r}")
            a = np.array(arr, dtype=float, copy=True)
            a.flags.writeable = False
            self._groups[name] = a

    def __getitem__(self, name):
        return self._groups[name]

    def __contains__(self, name):
        return name in self._groups

    def __iter__(self):
        return iter(self._groups)

    def __len__(self):
        return len(self._groups)

    def items(self):
        return self._groups.items()

    def names(self):
        return list(self._groups)

    def shapes(self):
        return {k: v.shape for k, v in self._groups.items()}

    def size(self):
        return int(sum(v.size for v in self._groups.values()))

    def updated(self, values: Mapping[str, np.ndarray]) -> "ParamStore":
        new = dict(self._groups)
        for name, arr in values.items():
            if name not in self._groups:
                raise UsageError(f"unknown parameter group {name!r}")
            arr = np.asarray(arr, dtype=float)
            if arr.shape != self._groups[name].shape:
                raise UsageError(
                    f"shape of {name!r} is fixed at {self._groups[name].shape}, got {arr.shape}")
            new[name] = arr
        return ParamStore(new)

    def merged(self, other: "ParamStore") -> "ParamStore":
        both = dict(self._groups)
        for k, v in other.items():
            if k in both:
                raise UsageError(f"duplicate parameter group {k!r}")
            both[k] = v
        return ParamStore(both)

    def subset(self, names) -> "ParamStore":
        return ParamStore({k: self._groups[k] for k in names})

    def to_dict(self):
        return {k: np.array(v) for k, v in self._groups.items()}

    def equals(self, other: "ParamStore") -> bool:
        return (sorted(self.names()) == sorted(other.names())
                and all(np.array_equal(self[k], other[k]) for k in self))


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr=1e-3, **kw):
        params = np.asarray(params, dtype=float)
        return cls(np.zeros_like(params), np.zeros_like(params), 0, lr, **kw)


def adam_step(params, grads, state: AdamState, name: str = "params", maximize: bool = False):
    """One bias-corrected Adam update.

    By default ``grads`` is the gradient of a loss and the step descends; with
    ``maximize=True`` it is the gradient of an objective and the step ascends.
    Returns ``(new_params, new_state)``; inputs are not modified.
    """
    params = np.asarray(params, dtype=float)
    g = np.asarray(grads, dtype=float)
    if g.shape != params.shape:
        raise UsageError(f"{name}: gradient shape {g.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite gradient in parameter group {name!r}")
    if maximize:
        g = -g
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


@dataclass
class Adam:
    """Adam over every group of a :class:`ParamStore`."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def step(self, store: ParamStore, grads: Mapping[str, np.ndarray], maximize=False) -> ParamStore:
        updates = {}
        for name, g in grads.items():
            state = self.states.get(name)
            if state is None:
                state = AdamState.zeros_like(store[name], self.lr, beta1=self.beta1,
                                             beta2=self.beta2, eps=self.eps)
            updates[name], self.states[name] = adam_step(store[name], g, state, name, maximize)
        return store.updated(updates)


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float | None):
    """Rescale a gradient map so its global L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return dict(grads)
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if not np.isfinite(total):
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        raise TrainingError(f"non-finite gradient in parameter group {bad[0]!r}")
    if total <= max_norm:
        return dict(grads)
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}
