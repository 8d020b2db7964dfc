"""Minimal reverse-mode tape over the linear algebra operators.

Typical use::

    g = Graph()
    A = g.leaf(a, name="A")
    y = g.leaf(b, name="y")
    L = potrf(A)
    z = trsm(L, y)
    loss = sum(square(z))
    grads = g.backward(loss)
    grads[A], grads[y]
"""

from __future__ import annotations

from .graph import GradStore, Graph, MemoryPlan, Var
from .ops import LINALG_OPS, REGISTRY, OpDef, get_op

__all__ = [
    "Graph",
    "Var",
    "GradStore",
    "MemoryPlan",
    "OpDef",
    "REGISTRY",
    "LINALG_OPS",
    "get_op",
    "record",
    "gemm2",
    "syrk",
    "trmm",
    "trsm",
    "potrf",
    "potri",
    "gelqf",
    "syevd",
    "gesvd",
    "sum",
    "square",
    "sqrt",
    "exp",
    "log",
    "abs",
    "concat",
    "reshape",
    "transpose",
    "diag",
    "outer_add",
    "chol_param",
    "add_jitter",
]


def record(op_name, inputs, **flags):
    """Record ``op_name`` on ``inputs`` in the graph they belong to."""
    return inputs[0].graph.apply(op_name, list(inputs), **flags)


def gemm2(a, b, ta=False, tb=False, alpha=1.0):
    return record("gemm2", [a, b], ta=ta, tb=tb, alpha=alpha)


def syrk(a, ta=False, alpha=1.0):
    return record("syrk", [a], ta=ta, alpha=alpha)


def trmm(t, a, transpose=False, rightside=False, lower=True, alpha=1.0):
    return record("trmm", [t, a], transpose=transpose, rightside=rightside, lower=lower, alpha=alpha)


def trsm(t, a, transpose=False, rightside=False, lower=True, alpha=1.0):
    return record("trsm", [t, a], transpose=transpose, rightside=rightside, lower=lower, alpha=alpha)


def potrf(a, lower=True):
    return record("potrf", [a], lower=lower)


def potri(a, lower=True):
    return record("potri", [a], lower=lower)


def gelqf(a):
    """Returns ``(Q, L)``."""
    return record("gelqf", [a])


def syevd(a):
    """Returns ``(U, lam)`` with ``lam`` an n x 1 column."""
    return record("syevd", [a])


def gesvd(a):
    """Returns ``(U, lam, V)`` with ``lam`` an m x 1 column."""
    return record("gesvd", [a])


def sum(x):  # noqa: A001 - mirrors numpy naming inside the tape namespace
    return record("sum", [x])


def square(x):
    return record("square", [x])


def sqrt(x):
    return record("sqrt", [x])


def exp(x):
    return record("exp", [x])


def log(x):
    return record("log", [x])


def abs(x):  # noqa: A001
    return record("abs", [x])


def concat(*xs):
    """Concatenate along columns."""
    return record("concat", list(xs))


def reshape(x, shape):
    return record("reshape", [x], shape=tuple(shape))


def transpose(x):
    return record("transpose", [x])


def diag(x):
    """Main diagonal of a square matrix as an n x 1 column."""
    return record("diag", [x])


def outer_add(a, b):
    """``a_i + b_j`` for columns ``a`` (n x 1) and ``b`` (m x 1)."""
    return record("outer_add", [a, b])


def chol_param(x):
    """Strict lower triangle of ``x`` with ``exp`` of its diagonal: a Cholesky factor for any ``x``."""
    return record("chol_param", [x])


def add_jitter(x, rel=1e-10):
    """``x + rel * mean(diag(x)) * I``."""
    return record("add_jitter", [x], rel=rel)
