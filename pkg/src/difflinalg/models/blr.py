"""Bayesian linear regression marginal likelihood on the tape.

Features are stored as columns: ``X`` is d x n, targets ``y`` are n x 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels, tape
from ..errors import ShapeError
from ..tape import Graph, Var
from ._common import LOG_2PI, as_var, eye, graph_of, logdet_chol, potrf_named

__all__ = ["BlrHypers", "blr_criterion", "blr_graph", "blr_predict"]

PATHS = ("lq", "cholesky")


@dataclass
class BlrHypers:
    noise: float = 1.0  # lambda_y
    prior: float = 1.0  # lambda_w

    def __post_init__(self):
        if not (self.noise > 0 and self.prior > 0):
            raise ValueError("noise and prior variances must be positive")

    @property
    def alpha(self) -> float:
        return self.prior / self.noise

    def raw(self) -> dict:
        return {"log_noise": np.full((1, 1), np.log(self.noise)),
                "log_prior": np.full((1, 1), np.log(self.prior))}

    @classmethod
    def from_raw(cls, raw: dict) -> "BlrHypers":
        return cls(float(np.exp(np.asarray(raw["log_noise"]).item())),
                   float(np.exp(np.asarray(raw["log_prior"]).item())))


def blr_criterion(X, y, noise, prior, path="lq") -> Var:
    """Negative log marginal likelihood of ``y ~ N(0, prior X^T X + noise I)``.

    With ``alpha = prior / noise`` and ``L`` a lower factor of
    ``M = I + alpha X X^T``, the criterion is
    ``log|L| + (n log(2 pi noise) + (|y|^2 - alpha |L^{-1} X y|^2) / noise) / 2``.

    Parameters
    ----------
    path : {"lq", "cholesky"}
        ``lq`` takes ``L`` from the LQ factorization of ``[I, sqrt(alpha) X]``
        and never forms ``M``; ``cholesky`` factorizes ``M`` directly.
        ``log|L|`` uses ``|l_ii|`` so either sign convention is accepted.
    """
    if path not in PATHS:
        raise ValueError(f"path must be one of {PATHS}, got {path!r}")
    g = graph_of(X, y, noise, prior)
    X = as_var(g, X, "X")
    d, n = X.shape
    y = as_var(g, y, "y")
    if y.shape != (n, 1):
        raise ShapeError(f"targets must be {n} x 1 for features {X.shape}, got {y.shape}")
    noise = as_var(g, noise)
    alpha = as_var(g, prior) / noise
    if path == "lq":
        Bm = tape.concat(eye(g, d), X * tape.sqrt(alpha))
        _, L = tape.gelqf(Bm)
    else:
        L = potrf_named(tape.syrk(X) * alpha + eye(g, d), "blr_criterion: I + alpha X X^T")
    z = tape.trsm(L, tape.gemm2(X, y))
    fit_term = (tape.sum(tape.square(y)) - tape.sum(tape.square(z)) * alpha) / noise
    return 0.5 * (fit_term + n * (LOG_2PI + tape.log(noise))) + logdet_chol(L, use_abs=True)


def blr_graph(X, y, path="lq"):
    """Builder for :func:`fit` with leaves ``log_noise`` and ``log_prior``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)

    def build(g: Graph, leaves: dict) -> Var:
        return blr_criterion(g.constant(X, name="X"), y, tape.exp(leaves["log_noise"]),
                             tape.exp(leaves["log_prior"]), path=path)

    return build


def blr_predict(X, y, Xs, hypers: BlrHypers):
    """Posterior predictive mean and variance of ``y`` at feature columns ``Xs``.

    The weight posterior is ``N(alpha M^{-1} X y, prior M^{-1})``.
    """
    X = np.atleast_2d(X)
    Xs = np.atleast_2d(Xs)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    d = X.shape[0]
    a = hypers.alpha
    L = kernels.potrf(np.eye(d) + a * kernels.syrk(X))
    z = kernels.trsm(L, X @ y)
    V = kernels.trsm(L, Xs)
    mean = a * (V.T @ z).ravel()
    var = hypers.prior * (V * V).sum(axis=0) + hypers.noise
    return mean, var
