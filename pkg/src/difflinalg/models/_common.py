"""Small graph-building helpers shared by the model criteria."""

from __future__ import annotations

import numpy as np

from .. import tape
from ..errors import NotPositiveDefiniteError
from ..tape import Graph, Var

LOG_2PI = float(np.log(2 * np.pi))


def graph_of(*items) -> Graph:
    """Graph of the first Var among ``items``; a fresh graph if there is none."""
    for x in items:
        if isinstance(x, Var):
            return x.graph
    return Graph()


def as_var(g: Graph, x, name=None) -> Var:
    """``x`` itself if it is a Var, else a constant (scalars become 1x1, vectors columns)."""
    if isinstance(x, Var):
        return x
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    return g.constant(a, name=name)


def eye(g: Graph, n) -> Var:
    return g.constant(np.eye(n), name=f"I{n}")


def logdet_chol(L: Var, use_abs=False) -> Var:
    d = tape.diag(L)
    return tape.sum(tape.log(tape.abs(d) if use_abs else d))


def potrf_named(A: Var, what: str) -> Var:
    """``potrf`` that names the failing factorization in its error."""
    try:
        return tape.potrf(A)
    except NotPositiveDefiniteError as e:
        err = NotPositiveDefiniteError(e.step, f"{what}: {e}")
        err.node = getattr(e, "node", None)
        raise err from e


def column(X: Var, k) -> Var:
    """Column ``k`` of ``X`` as an n x 1 Var (an exact selection product)."""
    e = np.zeros((X.shape[1], 1))
    e[k, 0] = 1.0
    return tape.gemm2(X, X.graph.constant(e))
