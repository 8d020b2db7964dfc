"""Kalman filter negative log-likelihood of a linear Gaussian state space model.

The model is ``h_0 ~ N(mu0, S0)``, ``h_t ~ N(A h_{t-1}, Sh)`` and
``v_t ~ N(B h_t, Sv)``.  The first observation is predicted from the prior
directly; later steps apply the transition first.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .. import tape
from ..errors import NotPositiveDefiniteError, ShapeError
from ..tape import Graph, Var
from ._common import LOG_2PI, as_var, eye, graph_of, logdet_chol

__all__ = ["LdsParams", "KalmanResult", "kalman_filter_nll", "kalman_graph", "simulate_lds", "chol_raw"]


def chol_raw(S) -> np.ndarray:
    """Unconstrained parameter whose ``chol_param`` image is the Cholesky factor of ``S``."""
    L = np.linalg.cholesky(np.asarray(S, dtype=np.float64))
    R = np.tril(L, -1)
    R[np.diag_indices_from(R)] = np.log(np.diag(L))
    return R


def _chol_from_raw(R) -> np.ndarray:
    L = np.tril(R, -1)
    L[np.diag_indices_from(L)] = np.exp(np.diag(R))
    return L


@dataclass
class LdsParams:
    """Transition ``A`` (h x h), emission ``B`` (v x h), prior mean ``mu0`` (h x 1).

    Covariances are held as unconstrained matrices ``chol_h``, ``chol_v`` and
    ``chol_0``: the strict lower triangle plus the log of the diagonal of a
    Cholesky factor.  Any real values therefore give SPD covariances.
    Fields hold arrays, or graph variables inside a criterion.
    """

    A: np.ndarray | Var
    B: np.ndarray | Var
    chol_h: np.ndarray | Var
    chol_v: np.ndarray | Var
    mu0: np.ndarray | Var
    chol_0: np.ndarray | Var

    @classmethod
    def from_covariances(cls, A, B, Sh, Sv, mu0, S0) -> "LdsParams":
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        h = A.shape[0]
        if A.shape != (h, h) or B.shape[1] != h:
            raise ShapeError(f"incompatible transition {A.shape} and emission {B.shape}")
        mu0 = np.asarray(mu0, dtype=np.float64).reshape(h, 1)
        return cls(A, B, chol_raw(np.atleast_2d(Sh)), chol_raw(np.atleast_2d(Sv)), mu0,
                   chol_raw(np.atleast_2d(S0)))

    @property
    def dims(self):
        return self.A.shape[0], self.B.shape[0]

    def covariances(self):
        """``(Sh, Sv, S0)`` as arrays."""
        out = []
        for R in (self.chol_h, self.chol_v, self.chol_0):
            L = _chol_from_raw(np.asarray(R))
            out.append(L @ L.T)
        return tuple(out)

    def raw(self) -> dict:
        return {f.name: np.array(getattr(self, f.name), dtype=np.float64) for f in fields(self)}

    @classmethod
    def from_raw(cls, raw: dict) -> "LdsParams":
        return cls(**{f.name: np.array(raw[f.name]) for f in fields(cls)})


@dataclass
class KalmanResult:
    nll: Var
    means: list  # filtered means f_t, h x 1 Vars
    covs: list  # filtered covariances F_t, h x h Vars


def _covariance(g, R) -> Var:
    return tape.syrk(tape.chol_param(as_var(g, R)))


def kalman_filter_nll(params: LdsParams, observations) -> KalmanResult:
    """Negative log-likelihood of ``observations`` (T x v, one row per step).

    Each step factorizes the predicted observation covariance ``Svv`` once
    and uses the factor for the gain (two right-side solves), the innovation
    solve and the log-determinant.  Filtered covariances use the Joseph form
    ``(I - K B) Shh (I - K B)^T + K Sv K^T``.

    Raises
    ------
    NotPositiveDefiniteError
        If ``Svv`` is not positive definite; the message names the step.
    """
    g = graph_of(*(getattr(params, f.name) for f in fields(params)),
                 *(observations if isinstance(observations, (list, tuple)) else ()))
    A = as_var(g, params.A, "A")
    B = as_var(g, params.B, "B")
    mu0 = as_var(g, params.mu0, "mu0")
    Sh, Sv, S0 = (_covariance(g, R) for R in (params.chol_h, params.chol_v, params.chol_0))
    h = A.shape[0]
    v = B.shape[0]
    if isinstance(observations, (list, tuple)):
        obs = [as_var(g, o) for o in observations]
    else:
        V = np.asarray(observations, dtype=np.float64)
        if V.ndim == 1 and v == 1:
            V = V.reshape(-1, 1)
        if V.ndim != 2 or V.shape[1] != v:
            raise ShapeError(f"observations must be T x {v}, got {V.shape}")
        obs = [g.constant(row.reshape(-1, 1), name=f"v{t}") for t, row in enumerate(V)]
    if not obs:
        raise ShapeError("need at least one observation")
    I = eye(g, h)
    means, covs = [], []
    nll = None
    f = F = None
    for t, vt in enumerate(obs):
        if t == 0:
            mu_h, S_hh = mu0, S0
        else:
            mu_h = tape.gemm2(A, f)
            S_hh = tape.gemm2(A, tape.gemm2(F, A, tb=True)) + Sh
        mu_v = tape.gemm2(B, mu_h)
        SB = tape.gemm2(S_hh, B, tb=True)
        S_vv = tape.gemm2(B, SB) + Sv
        try:
            L = tape.potrf(S_vv)
        except NotPositiveDefiniteError as e:
            raise NotPositiveDefiniteError(e.step, f"observation covariance at step t={t}: {e}") from e
        K = tape.trsm(L, tape.trsm(L, SB, rightside=True, transpose=True), rightside=True)
        delta = vt - mu_v
        f = mu_h + tape.gemm2(K, delta)
        ImKB = I - tape.gemm2(K, B)
        F = tape.gemm2(ImKB, tape.gemm2(S_hh, ImKB, tb=True)) + tape.gemm2(K, tape.gemm2(Sv, K, tb=True))
        z = tape.trsm(L, delta)
        term = 0.5 * tape.sum(tape.square(z)) + logdet_chol(L) + 0.5 * v * LOG_2PI
        nll = term if nll is None else nll + term
        means.append(f)
        covs.append(F)
    return KalmanResult(nll, means, covs)


def kalman_graph(observations):
    """Builder for :func:`fit`; leaves are the :meth:`LdsParams.raw` entries."""
    V = np.asarray(observations, dtype=np.float64)

    def build(g: Graph, leaves: dict) -> Var:
        p = LdsParams(**{f.name: leaves[f.name] for f in fields(LdsParams)})
        return kalman_filter_nll(p, V).nll

    return build


def simulate_lds(params: LdsParams, T, rng=None):
    """Sample ``T`` steps; returns ``(observations T x v, states T x h)``."""
    rng = np.random.default_rng(rng)
    A, B = np.asarray(params.A), np.asarray(params.B)
    Sh, Sv, S0 = params.covariances()
    h, v = A.shape[0], B.shape[0]
    states = np.empty((T, h))
    obs = np.empty((T, v))
    x = rng.multivariate_normal(np.asarray(params.mu0).ravel(), S0)
    for t in range(T):
        if t > 0:
            x = A @ x + rng.multivariate_normal(np.zeros(h), Sh)
        states[t] = x
        obs[t] = B @ x + rng.multivariate_normal(np.zeros(v), Sv)
    return obs, states
