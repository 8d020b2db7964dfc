"""Gaussian process regression criteria built on the tape.

All quantities are columns or matrices: targets are n x 1, inputs n x d,
scalar hyper-parameters 1 x 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels, tape
from ..errors import ShapeError
from ..tape import Graph, Var
from ._common import LOG_2PI, as_var, column, eye, graph_of, logdet_chol, potrf_named

__all__ = [
    "GpHypers",
    "SgpState",
    "rbf_kernel",
    "rbf_matrix",
    "gp_nll",
    "sgp_criterion",
    "gp_graph",
    "sgp_graph",
    "gp_predict",
]


@dataclass
class GpHypers:
    """RBF kernel parameters and Gaussian noise variance.

    Fields hold floats or 1 x 1 graph variables.  Positive floats are
    required; optimization works on their logarithms (see :meth:`raw`).
    """

    lengthscale: float | Var = 1.0
    amplitude: float | Var = 1.0
    noise: float | Var = 0.1

    def __post_init__(self):
        for name in ("lengthscale", "amplitude", "noise"):
            v = getattr(self, name)
            if not isinstance(v, Var) and not float(v) > 0:
                raise ValueError(f"{name} must be positive, got {v}")

    def raw(self) -> dict:
        return {
            "log_lengthscale": np.full((1, 1), np.log(self.lengthscale)),
            "log_amplitude": np.full((1, 1), np.log(self.amplitude)),
            "log_noise": np.full((1, 1), np.log(self.noise)),
        }

    @classmethod
    def from_raw(cls, raw: dict) -> "GpHypers":
        return cls(*(float(np.exp(np.asarray(raw[k]).item()))
                     for k in ("log_lengthscale", "log_amplitude", "log_noise")))

    @classmethod
    def on_graph(cls, leaves: dict) -> "GpHypers":
        """Positive hyper-parameters as graph variables from log-space leaves."""
        return cls(tape.exp(leaves["log_lengthscale"]), tape.exp(leaves["log_amplitude"]),
                   tape.exp(leaves["log_noise"]))


@dataclass
class SgpState:
    hypers: GpHypers
    inducing: np.ndarray  # U x d

    def __post_init__(self):
        self.inducing = np.atleast_2d(np.asarray(self.inducing, dtype=np.float64))

    def raw(self) -> dict:
        return dict(self.hypers.raw(), inducing=self.inducing.copy())


def rbf_kernel(X1, X2, hypers: GpHypers) -> Var:
    """``K_ij = amplitude * exp(-|x1_i - x2_j|^2 / (2 lengthscale^2))`` on the tape.

    Squared distances are accumulated per input dimension from exact
    differences, so ``rbf_kernel(X, X, h)`` has diagonal exactly ``amplitude``.
    """
    g = graph_of(X1, X2, hypers.lengthscale, hypers.amplitude)
    X1 = as_var(g, np.atleast_2d(X1) if not isinstance(X1, Var) else X1, "X1")
    X2 = X1 if X2 is None else as_var(g, np.atleast_2d(X2) if not isinstance(X2, Var) else X2, "X2")
    if X1.shape[1] != X2.shape[1]:
        raise ShapeError(f"input dimensions differ: {X1.shape} vs {X2.shape}")
    d2 = None
    for k in range(X1.shape[1]):
        c1 = column(X1, k)
        c2 = c1 if X2 is X1 else column(X2, k)
        t = tape.square(tape.outer_add(c1, -c2))
        d2 = t if d2 is None else d2 + t
    ell = as_var(g, hypers.lengthscale)
    coef = -0.5 / tape.square(ell)
    return tape.exp(d2 * coef) * as_var(g, hypers.amplitude)


def rbf_matrix(X1, X2, lengthscale, amplitude) -> np.ndarray:
    """Plain numpy RBF kernel matrix (no tape)."""
    X1 = np.atleast_2d(X1)
    X2 = np.atleast_2d(X2)
    d2 = ((X1[:, None, :] - X2[None, :, :]) ** 2).sum(-1)
    return amplitude * np.exp(-d2 / (2 * lengthscale ** 2))


def gp_nll(K: Var, y, noise, jitter=0.0) -> Var:
    """Negative log marginal likelihood ``-log N(y | 0, K + noise I)``.

    One Cholesky factor ``L`` of ``K + noise I`` feeds both the solve
    ``z = L^{-1} y`` and the log-determinant ``sum(log diag L)``.

    Parameters
    ----------
    jitter : float
        Relative diagonal jitter added before factorizing; 0 disables it.
    """
    g = graph_of(K, y, noise)
    n = K.shape[0]
    y = as_var(g, y, "y")
    A = K + eye(g, n) * as_var(g, noise)
    if jitter:
        A = tape.add_jitter(A, rel=jitter)
    L = potrf_named(A, "gp_nll: K + noise*I")
    z = tape.trsm(L, y)
    return 0.5 * tape.sum(tape.square(z)) + logdet_chol(L) + 0.5 * n * LOG_2PI


def sgp_criterion(y, Kuu: Var, Kuf: Var, Kff_diag, noise, jitter=1e-10) -> Var:
    """Variational sparse GP bound on the negative log marginal likelihood.

    ``Kuu`` is U x U, ``Kuf`` U x n and ``Kff_diag`` the n x 1 diagonal of
    the training kernel matrix.  ``jitter`` (relative, 0 disables) is added
    to ``Kuu`` and to ``I + B B^T / noise`` before they are factorized.
    """
    g = graph_of(Kuu, Kuf, y, noise)
    U, n = Kuf.shape
    y = as_var(g, y, "y")
    lam = as_var(g, noise)
    if jitter:
        Kuu = tape.add_jitter(Kuu, rel=jitter)
    Lu = potrf_named(Kuu, "sgp_criterion: Kuu")
    B = tape.trsm(Lu, Kuf)
    A = tape.syrk(B) / lam + eye(g, U)
    if jitter:
        A = tape.add_jitter(A, rel=jitter)
    La = potrf_named(A, "sgp_criterion: I + B B^T / noise")
    c = tape.trsm(La, tape.gemm2(B, y))
    trace_gap = tape.sum(as_var(g, Kff_diag)) - tape.sum(tape.square(B))
    return (0.5 * n * (LOG_2PI + tape.log(lam)) + logdet_chol(La)
            + tape.sum(tape.square(y)) / (2 * lam)
            - tape.sum(tape.square(c)) / (2 * tape.square(lam))
            + trace_gap / (2 * lam))


def gp_graph(X, y):
    """Criterion builder for :func:`fit`: leaves are the :meth:`GpHypers.raw` entries."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)

    def build(g: Graph, leaves: dict) -> Var:
        h = GpHypers.on_graph(leaves)
        Xv = g.constant(X, name="X")
        return gp_nll(rbf_kernel(Xv, None, h), y, h.noise)

    return build


def sgp_graph(X, y, jitter=1e-10):
    """Builder for the sparse GP bound; leaves add ``inducing`` (U x d)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)

    def build(g: Graph, leaves: dict) -> Var:
        h = GpHypers.on_graph(leaves)
        Z = leaves["inducing"]
        Xv = g.constant(X, name="X")
        Kuu = rbf_kernel(Z, None, h)
        Kuf = rbf_kernel(Z, Xv, h)
        kff = g.constant(np.ones((X.shape[0], 1))) * h.amplitude
        return sgp_criterion(y, Kuu, Kuf, kff, h.noise, jitter=jitter)

    return build


def gp_predict(X, y, Xs, hypers: GpHypers):
    """Posterior predictive mean and variance of the latent function at ``Xs``."""
    X = np.atleast_2d(X)
    Xs = np.atleast_2d(Xs)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    A = rbf_matrix(X, X, hypers.lengthscale, hypers.amplitude) + hypers.noise * np.eye(len(X))
    L = kernels.potrf(A)
    Ks = rbf_matrix(X, Xs, hypers.lengthscale, hypers.amplitude)
    V = kernels.trsm(L, Ks)
    z = kernels.trsm(L, y)
    mean = (V.T @ z).ravel()
    var = hypers.amplitude - (V * V).sum(axis=0)
    return mean, np.maximum(var, 0.0)
