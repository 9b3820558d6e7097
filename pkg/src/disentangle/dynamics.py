"""Extrapolation by composition: transition-operator powers and Lie rollouts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .architectures import ModelSpec, predict
from .autodiff import softmax

__all__ = [
    "RolloutTrace",
    "extract_transition",
    "column_entropy",
    "matrix_power",
    "predictions",
    "iterate_accuracy",
    "accuracy_curve",
    "horizon",
    "rollout_quaternion",
    "rollout_sl2",
]

DIVERGENCE_LIMIT = 1e3


def extract_transition(spec: ModelSpec, params, p: int, phi_token: int | None = None) -> np.ndarray:
    """Column-stochastic ``T[k, a] = softmax(logits(a, phi))_k``."""
    phi_token = p if phi_token is None else phi_token
    X = np.stack([np.arange(p), np.full(p, phi_token)], axis=1)
    return softmax(predict(spec, params, X)).T


def column_entropy(T) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(T > 0, T * np.log(T), 0.0)
    return -terms.sum(axis=0)


def _renormalize(T):
    s = T.sum(axis=0, keepdims=True)
    return T / np.where(s > 0, s, 1.0)


def matrix_power(T, i: int, renormalize: bool = True) -> np.ndarray:
    """``T^i`` by repeated squaring.

    With ``renormalize`` every intermediate product has its columns rescaled
    to sum to one, which keeps long products stochastic without changing
    any column's argmax.
    """
    if i < 0:
        raise ValueError("power must be >= 0")
    T = np.asarray(T, dtype=np.float64)
    result = None  # identity, kept implicit so that T^1 is T bit for bit
    base = T.copy()
    while i:
        if i & 1:
            if result is None:
                result = base.copy()
            else:
                result = base @ result
                if renormalize:
                    result = _renormalize(result)
        i >>= 1
        if i:
            base = base @ base
            if renormalize:
                base = _renormalize(base)
    return np.eye(T.shape[0]) if result is None else result


def predictions(Ti) -> np.ndarray:
    """Column argmax; ties go to the smallest state index."""
    return np.argmax(Ti, axis=0)


def iterate_accuracy(T, i: int, p: int | None = None) -> float:
    """Fraction of states whose ``argmax_k T^i[k, a]`` equals ``(a + i) mod p``."""
    p = T.shape[0] if p is None else p
    pred = predictions(matrix_power(T, i))
    return float(np.mean(pred == (np.arange(p) + i) % p))


def accuracy_curve(T, max_i: int) -> np.ndarray:
    """``Accuracy(i)`` for ``i = 0..max_i`` by successive multiplication."""
    T = np.asarray(T, dtype=np.float64)
    p = T.shape[0]
    a = np.arange(p)
    out = np.empty(max_i + 1)
    Ti = np.eye(p)
    for i in range(max_i + 1):
        out[i] = np.mean(predictions(Ti) == (a + i) % p)
        Ti = _renormalize(T @ Ti)
    return out


def horizon(curve, threshold: float = 0.9) -> int:
    """Largest ``i`` such that accuracy stays >= ``threshold`` for every step up to ``i``."""
    curve = np.asarray(curve)
    below = np.flatnonzero(curve < threshold)
    return int(below[0] - 1) if below.size else int(curve.size - 1)


@dataclass
class RolloutTrace:
    step: np.ndarray
    series: dict = field(default_factory=dict)
    states: list = field(default_factory=list)
    diverged: bool = False


def rollout_quaternion(spec: ModelSpec, params, q0, omega, steps: int = 200, stride: int = 0) -> RolloutTrace:
    """Feed ``q <- q + model(q, omega)`` back into itself; record ``|q|``.

    No renormalization is applied. A norm above ``DIVERGENCE_LIMIT`` ends the
    trace early and sets ``diverged``.
    """
    q = np.asarray(q0, dtype=np.float64).ravel()
    if not np.isclose(np.linalg.norm(q), 1.0, atol=1e-9):
        raise ValueError("initial quaternion must have unit norm")
    omega = np.asarray(omega, dtype=np.float64).ravel()
    norms, states = [np.linalg.norm(q)], [q.copy()] if stride else []
    diverged = False
    for t in range(1, steps + 1):
        q = q + predict(spec, params, np.concatenate([q, omega])[None, :])[0]
        n = float(np.linalg.norm(q))
        norms.append(n)
        if stride and t % stride == 0:
            states.append(q.copy())
        if not np.isfinite(n) or n > DIVERGENCE_LIMIT:
            diverged = True
            break
    return RolloutTrace(step=np.arange(len(norms)), series={"norm": np.array(norms)},
                        states=states, diverged=diverged)


def rollout_sl2(spec: ModelSpec, params, G, steps: int = 200, stride: int = 0) -> RolloutTrace:
    """Advance the unit-square edges ``v1 = e1``, ``v2 = e2`` through the model.

    ``Area_t = x_{v1} y_{v2} - x_{v2} y_{v1}`` is recorded every step.
    """
    G = np.asarray(G, dtype=np.float64).reshape(2, 2)
    if abs(G[0, 0] + G[1, 1]) > 1e-12:
        raise ValueError("generator must be traceless")
    g = np.tile(G.ravel(), (2, 1))
    V = np.eye(2)  # rows are v1, v2
    areas, states = [1.0], [V.copy()] if stride else []
    diverged = False
    for t in range(1, steps + 1):
        V = V + predict(spec, params, np.concatenate([V, g], axis=1))
        area = float(V[0, 0] * V[1, 1] - V[1, 0] * V[0, 1])
        areas.append(area)
        if stride and t % stride == 0:
            states.append(V.copy())
        if not np.isfinite(area) or np.abs(V).max() > DIVERGENCE_LIMIT:
            diverged = True
            break
    return RolloutTrace(step=np.arange(len(areas)), series={"area": np.array(areas)},
                        states=states, diverged=diverged)
