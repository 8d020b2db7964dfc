"""Adam and a define-by-run fitting loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NonFiniteError
from ..tape import Graph

__all__ = ["AdamState", "adam_step", "FitResult", "fit", "DEFAULT_LR"]

DEFAULT_LR = 1e-2


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr=DEFAULT_LR, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns new ``(params, state)``.

    Inputs are not modified.  Missing gradients count as zero.
    """
    t = state.step + 1
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads.get(k, np.zeros_like(p)), dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter {np.shape(p)}")
        m[k] = beta1 * state.m.get(k, 0.0) + (1 - beta1) * g
        v[k] = beta2 * state.v.get(k, 0.0) + (1 - beta2) * g * g
        mhat = m[k] / (1 - beta1 ** t)
        vhat = v[k] / (1 - beta2 ** t)
        new_params[k] = p - lr * mhat / (np.sqrt(vhat) + eps)
    return new_params, AdamState(t, m, v)


@dataclass
class FitResult:
    params: dict
    losses: list

    @property
    def initial(self):
        return self.losses[0]

    @property
    def final(self):
        return self.losses[-1]


def evaluate(build: Callable, params: dict, grad=True):
    """Build the criterion on a fresh graph; returns ``(loss, grads or None)``."""
    g = Graph()
    leaves = {k: g.leaf(np.atleast_2d(v), name=k) for k, v in params.items()}
    loss = build(g, leaves)
    value = float(loss.value.item())
    if not grad:
        return value, None
    store = g.backward(loss)
    return value, {k: store[leaves[k]].reshape(np.shape(v)) for k, v in params.items()}


def fit(build: Callable, params: dict, steps=200, lr=DEFAULT_LR, beta1=0.9, beta2=0.999, eps=1e-8,
        callback=None) -> FitResult:
    """Minimize ``build(graph, leaves)`` over ``params`` with Adam.

    ``build`` receives a fresh :class:`Graph` and one leaf per entry of
    ``params`` and returns the 1 x 1 criterion.  The returned losses hold
    the criterion before each step plus the final value.

    Raises
    ------
    NonFiniteError
        As soon as the criterion or a gradient is not finite; ``.step`` is
        the offending step index.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    state = AdamState()
    losses = []
    for step in range(steps + 1):
        value, grads = evaluate(build, params, grad=step < steps)
        if not np.isfinite(value) or (grads and not all(np.isfinite(g).all() for g in grads.values())):
            err = NonFiniteError(f"non-finite criterion or gradient at step {step}")
            err.step = step
            raise err
        losses.append(value)
        if callback is not None:
            callback(step, value, params)
        if step == steps:
            break
        params, state = adam_step(params, grads, state, lr, beta1, beta2, eps)
    return FitResult(params, losses)
