"""Gradient utilities: global-norm clipping and finite-difference checking."""

from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np

from covgen.autodiff import Node, Tape, backprop


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads.values()))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


LossFn = Callable[[Tape, dict[str, Node]], Node]


def evaluate(f: LossFn, point: Mapping[str, np.ndarray], record: bool = False):
    tape = Tape(record=record)
    nodes = {name: tape.param(name, value) for name, value in point.items()}
    return tape, f(tape, nodes)


def analytic_grads(f: LossFn, point: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    tape, loss = evaluate(f, point, record=True)
    return backprop(tape, loss)


def grad_check(f: LossFn, point: Mapping[str, np.ndarray], epsilon: float = 1e-5,
               names=None) -> float:
    """Max relative error between backprop and central differences.

    ``f`` builds a scalar loss node from a tape and a dict of parameter
    nodes.  The error for one coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not 0 < epsilon <= 1e-2:
        raise ValueError("epsilon must lie in (0, 1e-2]")
    point = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    grads = analytic_grads(f, point)

    def value_at(name, idx, delta):
        old = point[name][idx]
        point[name][idx] = old + delta
        try:
            v = float(evaluate(f, point)[1].value)
        finally:
            point[name][idx] = old
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite loss at {name}{list(idx)} {delta:+g}")
        return v

    worst = 0.0
    for name in names or point:
        for idx in np.ndindex(point[name].shape):
            numeric = (value_at(name, idx, epsilon) - value_at(name, idx, -epsilon)) / (2 * epsilon)
            analytic = float(grads[name][idx])
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
