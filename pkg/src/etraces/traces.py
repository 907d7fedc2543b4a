"""Eligibility traces, expected-trace models and the mixture trace.

Two expected-trace models are provided. ``TabularTraceModel`` keeps one
trace vector per state (plus visit counts, for the exact running mean).
``LinearTraceModel`` predicts the trace as ``theta @ x(s)``; with one-hot
features its columns play the role of the tabular rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envs import FeatureMap
from .errors import InvalidInputError, UnsupportedOperationError


def _check_same_length(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.shape} vs {b.shape}")


def accumulate_trace(e, gamma: float, lam: float, grad) -> np.ndarray:
    """Accumulating trace ``(gamma * lam) * e + grad``."""
    e = np.asarray(e, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    _check_same_length(e, grad)
    return (gamma * lam) * e + grad


def reset_trace(e) -> np.ndarray:
    return np.zeros_like(np.asarray(e, dtype=np.float64))


class TabularTraceModel:
    """Per-state expected traces ``z[s]`` with visit counts ``n[s]``."""

    kind = "tabular"

    def __init__(self, num_states: int, num_params: int):
        self.z = np.zeros((num_states + 1, num_params))
        self.counts = np.zeros(num_states + 1, dtype=np.int64)

    def query(self, state: int) -> np.ndarray:
        return self.z[state]

    def regress(self, state: int, target: np.ndarray, beta: float):
        row = self.z[state]
        row += beta * (target - row)

    def running_mean(self, state: int, e: np.ndarray):
        self.counts[state] += 1
        row = self.z[state]
        row += (e - row) / self.counts[state]

    def copy(self) -> "TabularTraceModel":
        other = TabularTraceModel.__new__(TabularTraceModel)
        other.z = self.z.copy()
        other.counts = self.counts.copy()
        return other


class LinearTraceModel:
    """Linear expected trace ``z(s) = theta @ x(s)``, theta of shape (params, features)."""

    kind = "linear"

    def __init__(self, features: FeatureMap, num_params: int | None = None):
        self.features = features
        p = features.dimension if num_params is None else num_params
        self.theta = np.zeros((p, features.dimension))

    def query(self, state: int) -> np.ndarray:
        idx, vals = self.features.sparse_rows[state]
        return self.theta[:, idx] @ vals

    def regress(self, state: int, target: np.ndarray, beta: float):
        # Gradient step on 0.5 * ||target - theta x||^2; only columns with x_j != 0 move.
        idx, vals = self.features.sparse_rows[state]
        err = target - self.theta[:, idx] @ vals
        self.theta[:, idx] += np.outer(beta * err, vals)

    def running_mean(self, state: int, e: np.ndarray):
        raise UnsupportedOperationError("the running-mean rule is only defined for tabular trace models")

    def copy(self) -> "LinearTraceModel":
        other = LinearTraceModel.__new__(LinearTraceModel)
        other.features = self.features
        other.theta = self.theta.copy()
        return other


ExpectedTraceModel = TabularTraceModel | LinearTraceModel


def expected_trace_query(model: ExpectedTraceModel, state: int, features: FeatureMap | None = None) -> np.ndarray:
    if isinstance(model, LinearTraceModel) and features is not None and features is not model.features:
        idx, vals = features.sparse_rows[state]
        return model.theta[:, idx] @ vals
    return np.array(model.query(state))


def expected_trace_sgd_update(model, state: int, e, beta: float, features: FeatureMap | None = None):
    """One SGD step of z(state) toward the observed trace; updates ``model`` in place and returns it."""
    if beta <= 0:
        raise InvalidInputError("beta must be positive")
    model.regress(state, np.asarray(e, dtype=np.float64), beta)
    return model


def expected_trace_empirical_mean_update(model, state: int, e):
    """Exact running mean of the traces seen at ``state`` (tabular only)."""
    model.running_mean(state, np.asarray(e, dtype=np.float64))
    return model


def mixed_trace_target_update(
    model, state: int, grad, y_prev, gamma: float, lam: float, beta: float, features: FeatureMap | None = None
):
    """Regress z(state) toward the backward one-step target ``grad + gamma*lam*y_prev``."""
    if beta <= 0:
        raise InvalidInputError("beta must be positive")
    target = accumulate_trace(y_prev, gamma, lam, grad)
    model.regress(state, target, beta)
    return model


@dataclass
class MixtureTraceState:
    y: np.ndarray
    eta: float

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidInputError(f"eta must lie in [0, 1], got {self.eta}")
        self.y = np.asarray(self.y, dtype=np.float64)


def mixture_trace_value(y_prev, z_query, gamma: float, lam: float, grad, eta: float) -> np.ndarray:
    """``(1 - eta) z + eta (gamma lam y_prev + grad)``."""
    z_query = np.asarray(z_query, dtype=np.float64)
    inner = accumulate_trace(y_prev, gamma, lam, grad)
    _check_same_length(inner, z_query)
    return (1.0 - eta) * z_query + eta * inner


def mixture_trace_step(state: MixtureTraceState, z_query, gamma: float, lam: float, grad) -> MixtureTraceState:
    return MixtureTraceState(mixture_trace_value(state.y, z_query, gamma, lam, grad, state.eta), state.eta)


def mixture_trace_closed_form(
    history: Sequence[tuple[np.ndarray, np.ndarray]], gamma: float, lam: float, eta: float
) -> np.ndarray:
    """Explicit sum over (z, grad) pairs, oldest first, with decay ``eta*gamma*lam``.

    ``0**0`` is taken as 1, so ``eta = 0`` returns the newest z.
    """
    if len(history) == 0:
        raise InvalidInputError("history must be non-empty")
    mu = eta * gamma * lam
    t = len(history) - 1
    total = np.zeros_like(np.asarray(history[0][0], dtype=np.float64))
    for j, (z, g) in enumerate(history):
        k = t - j
        weight = 1.0 if k == 0 else mu**k
        total = total + weight * ((1.0 - eta) * np.asarray(z, dtype=np.float64) + eta * np.asarray(g, dtype=np.float64))
    return total
