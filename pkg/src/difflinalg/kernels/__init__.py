"""Forward operators: gemm2, syrk, trmm, trsm, potrf, potri, gelqf, syevd, gesvd.

Every operator validates its operands, then hands a row-major buffer to the
active backend, which overwrites it in place.  ``out=None`` copies the input
first; ``out=A`` (the input array itself) runs fully in place; any other
``out`` receives a copy of the input and is then overwritten.  Both entry
points run the same code on the same buffer contents, so their results are
bit-identical.

3-D inputs are treated as batches: the operator is applied to every slice of
the leading axis and the results are stacked.

Two backends exist.  ``"reference"`` is self-contained numpy and is the
default.  ``"lapack"`` calls the BLAS/LAPACK routines shipped with scipy.
Select one with :func:`set_backend`, :func:`use_backend` or the
``DIFFLINALG_BACKEND`` environment variable.
"""

from __future__ import annotations

import contextlib
import contextvars
import os
from typing import NamedTuple

import numpy as np

from .. import dense
from ..errors import NonFiniteError, RankDeficientError, ShapeError, SingularTriangularError, SymmetryError
from . import _lapack, _reference

__all__ = [
    "TriangleSide",
    "BACKENDS",
    "get_backend",
    "backend",
    "set_backend",
    "use_backend",
    "gemm",
    "gemm2",
    "syrk",
    "trmm",
    "trsm",
    "potrf",
    "potri",
    "gelqf",
    "syevd",
    "gesvd",
    "fix_row_signs",
    "batched",
]

BACKENDS = {"reference": _reference, "lapack": _lapack}


class TriangleSide(NamedTuple):
    """Flags of a triangular operand: ``op(T)`` is ``T.T`` when ``transpose``."""

    transpose: bool = False
    rightside: bool = False
    lower: bool = True

    @classmethod
    def all(cls):
        return [cls(t, r, l) for t in (False, True) for r in (False, True) for l in (True, False)]

    def label(self) -> str:
        return f"transpose={int(self.transpose)},rightside={int(self.rightside)},lower={int(self.lower)}"


def _default_backend():
    name = os.environ.get("DIFFLINALG_BACKEND", "reference")
    return name if name in BACKENDS else "reference"


_backend_name = contextvars.ContextVar("difflinalg_backend", default=_default_backend())


def _check_backend(name):
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}")


def get_backend() -> str:
    return _backend_name.get()


def set_backend(name: str) -> None:
    _check_backend(name)
    _backend_name.set(name)


@contextlib.contextmanager
def use_backend(name: str):
    _check_backend(name)
    token = _backend_name.set(name)
    try:
        yield
    finally:
        _backend_name.reset(token)


def backend():
    """Module of raw in-place routines of the active backend (no validation)."""
    return BACKENDS[_backend_name.get()]


_be = backend


# -- validation helpers --------------------------------------------------------

def _mat(x, name, dtype=None):
    if isinstance(x, np.ndarray) and x.ndim == 2 and x.dtype in (np.float32, np.float64) and x.flags.c_contiguous:
        if dtype is not None and x.dtype != dtype:
            return dense.as_matrix(x, dtype=dtype, name=name)
        if not np.isfinite(x).all():
            raise NonFiniteError(f"{name} contains NaN or Inf")
        return x
    return dense.as_matrix(x, dtype=dtype, name=name)


def _buffer(x, out):
    """Working buffer for an operator that overwrites its operand."""
    if out is None:
        return x.copy()
    if out is x:
        return x
    if not isinstance(out, np.ndarray) or out.shape != x.shape or out.dtype != x.dtype:
        raise ShapeError(f"out must be a {x.dtype} array of shape {x.shape}")
    if not out.flags.c_contiguous:
        raise ShapeError("out must be C-contiguous")
    out[...] = x
    return out


def _result(shape, dtype, out):
    if out is None:
        return np.empty(shape, dtype=dtype)
    if not isinstance(out, np.ndarray) or out.shape != tuple(shape) or out.dtype != dtype or not out.flags.c_contiguous:
        raise ShapeError(f"out must be a C-contiguous {dtype} array of shape {tuple(shape)}")
    return out


def _symmetry_tol(dtype):
    return max(1e-10, 100 * float(np.finfo(dtype).eps))


def check_symmetric(a, name="matrix"):
    """Raise :class:`SymmetryError` unless ``a`` is symmetric to a relative 1e-10."""
    n = dense.check_square(a, name)
    scale = float(np.abs(a).max()) if a.size else 0.0
    worst = 0.0
    for i in range(1, n):
        worst = max(worst, float(np.abs(a[i, :i] - a[:i, i]).max()))
    if worst > _symmetry_tol(a.dtype) * scale:
        raise SymmetryError(f"{name} is not symmetric (max asymmetry {worst:.3g}, scale {scale:.3g})")


def _check_diagonal(t, name):
    d = np.diagonal(t)
    bad = np.flatnonzero(d == 0)
    if bad.size:
        raise SingularTriangularError(int(bad[0]))


def fix_row_signs(u, v=None):
    """Flip rows of ``u`` so each row's largest-magnitude entry is positive.

    Ties (equal magnitudes up to a few ulps) go to the smaller column index.
    Whenever row ``i`` of ``u`` is flipped, row ``i`` of ``v`` is flipped too.
    """
    rel = 1.0 - 8 * float(np.finfo(u.dtype).eps)
    for i in range(u.shape[0]):
        mag = np.abs(u[i])
        k = int(np.flatnonzero(mag >= mag.max() * rel)[0])
        if u[i, k] < 0:
            u[i] *= -1
            if v is not None:
                v[i] *= -1
    return u


def batched(fn, *arrays, threads=1, **kwargs):
    """Apply ``fn`` to every slice of 3-D operands, optionally on threads."""
    ctx = contextvars.copy_context()

    def run(*slices, **kw):
        return ctx.copy().run(fn, *slices, **kw)

    return dense.map_batch(run, *arrays, threads=threads, **kwargs)


def _batch(fn, arrays, out, **kwargs):
    arrays = [dense.as_batch(a, name="batch operand") if np.ndim(a) == 3 else a for a in arrays]
    if out is None:
        return dense.map_batch(fn, *arrays, **kwargs)
    results = [fn(*(a[b] for a in arrays), out=out[b], **kwargs) for b in range(arrays[0].shape[0])]
    if isinstance(results[0], tuple):
        return tuple(np.stack(parts) for parts in zip(*results))
    return out


# -- level 3 -------------------------------------------------------------------

def gemm(alpha, a, b, beta, c, ta=False, tb=False):
    """Accumulating product ``c <- alpha op(a) op(b) + beta c`` in place.

    ``c`` must not alias ``a`` or ``b``.  Returns ``c``.
    """
    return _be().gemm(alpha, a, b, beta, c, ta=ta, tb=tb)


def gemm2(A, B, ta=False, tb=False, alpha=1.0, out=None):
    """``C = alpha * op(A) @ op(B)`` with ``op(X) = X.T`` when the flag is set."""
    if np.ndim(A) == 3:
        return _batch(gemm2, (A, B), out, ta=ta, tb=tb, alpha=alpha)
    A = _mat(A, "A")
    B = _mat(B, "B")
    dtype = dense.common_dtype(A, B)
    m, k = (A.shape[1], A.shape[0]) if ta else A.shape
    k2, n = (B.shape[1], B.shape[0]) if tb else B.shape
    if k != k2:
        raise ShapeError(f"gemm2 inner dimensions differ: op(A) is {m}x{k}, op(B) is {k2}x{n}")
    C = _result((m, n), dtype, out)
    if out is not None and (np.shares_memory(C, A) or np.shares_memory(C, B)):
        raise ShapeError("gemm2 output must not alias its operands")
    return _be().gemm(alpha, A, B, 0.0, C, ta=ta, tb=tb)


def syrk(A, ta=False, alpha=1.0, out=None):
    """``B = alpha * op(A) @ op(A).T``, exactly symmetric."""
    if np.ndim(A) == 3:
        return _batch(syrk, (A,), out, ta=ta, alpha=alpha)
    A = _mat(A, "A")
    n = A.shape[1] if ta else A.shape[0]
    C = _result((n, n), A.dtype, out)
    if out is not None and np.shares_memory(C, A):
        raise ShapeError("syrk output must not alias its operand")
    return _be().syrk(alpha, A, ta, C)


def _tri_check(T, A, rightside):
    n = dense.check_square(T, "triangular operand")
    dim = A.shape[1] if rightside else A.shape[0]
    if dim != n:
        side = "columns" if rightside else "rows"
        raise ShapeError(f"triangular operand is {n}x{n} but the other operand has {dim} {side}")
    dense.common_dtype(T, A)


def trmm(T, A, transpose=False, rightside=False, lower=True, alpha=1.0, out=None):
    """``B = alpha op(T) A`` (or ``alpha A op(T)`` with ``rightside``).

    Only the triangle of ``T`` selected by ``lower`` is read.
    """
    if np.ndim(A) == 3:
        return _batch(trmm, (T, A), out, transpose=transpose, rightside=rightside, lower=lower, alpha=alpha)
    T = _mat(T, "T")
    A = _mat(A, "A")
    _tri_check(T, A, rightside)
    B = _buffer(A, out)
    return _be().trmm(T, B, lower=lower, transpose=transpose, rightside=rightside, alpha=alpha)


def trsm(T, A, transpose=False, rightside=False, lower=True, alpha=1.0, out=None):
    """``B = alpha op(T)^{-1} A`` (or ``alpha A op(T)^{-1}`` with ``rightside``).

    Raises
    ------
    SingularTriangularError
        If a diagonal entry of ``T`` is exactly zero.
    """
    if np.ndim(A) == 3:
        return _batch(trsm, (T, A), out, transpose=transpose, rightside=rightside, lower=lower, alpha=alpha)
    T = _mat(T, "T")
    A = _mat(A, "A")
    _tri_check(T, A, rightside)
    _check_diagonal(T, "T")
    B = _buffer(A, out)
    return _be().trsm(T, B, lower=lower, transpose=transpose, rightside=rightside, alpha=alpha)


# -- factorizations ------------------------------------------------------------

def potrf(A, lower=True, out=None):
    """Cholesky factor ``L`` with ``A = L L^T`` (``A = R^T R`` if not ``lower``).

    Only the selected triangle of ``A`` is read, after a symmetry check.  The
    opposite strict triangle of the result is zero.

    Raises
    ------
    NotPositiveDefiniteError
        Carries the 0-based step at which a pivot was not positive.
    """
    if np.ndim(A) == 3:
        return _batch(potrf, (A,), out, lower=lower)
    A = _mat(A, "A")
    check_symmetric(A, "potrf input")
    L = _buffer(A, out)
    return _be().potrf(L, lower=lower)


def potri(L, lower=True, out=None):
    """``(L L^T)^{-1}`` from a Cholesky factor; the result is exactly symmetric."""
    if np.ndim(L) == 3:
        return _batch(potri, (L,), out, lower=lower)
    L = _mat(L, "L")
    dense.check_square(L, "potri input")
    _check_diagonal(L, "L")
    B = _buffer(L, out)
    return _be().potri(B, lower=lower)


def _rank_tol(dtype):
    return 1e-12 if np.dtype(dtype) == np.float64 else 1e-6


def gelqf(A, out=None):
    """LQ factorization ``A = L Q`` of an m x n matrix, m <= n.

    ``Q`` is row-orthonormal and ``L`` lower triangular with a positive
    diagonal.  ``Q`` is written into ``out`` (pass ``out=A`` to overwrite the
    input).

    Raises
    ------
    RankDeficientError
        If some ``|L[i, i]|`` falls below ``1e-12 * max|A|``.
    """
    if np.ndim(A) == 3:
        return _batch(gelqf, (A,), out)
    A = _mat(A, "A")
    m, n = A.shape
    if m > n:
        raise ShapeError(f"gelqf needs rows <= cols, got {m}x{n}")
    scale = float(np.abs(A).max()) if A.size else 0.0
    Q = _buffer(A, out)
    L = _be().gelqf(Q)
    d = np.abs(np.diagonal(L))
    bad = np.flatnonzero(d <= _rank_tol(A.dtype) * scale)
    if bad.size:
        raise RankDeficientError(int(bad[0]))
    for i in np.flatnonzero(np.diagonal(L) < 0):
        L[:, i] *= -1
        Q[i] *= -1
    return Q, L


def syevd(A, out=None):
    """Symmetric eigendecomposition ``A = U^T diag(lam) U``.

    Eigenvectors are the rows of ``U``, eigenvalues ascend, and each row's
    largest-magnitude entry is positive.

    Returns
    -------
    U : ndarray, shape (n, n)
    lam : ndarray, shape (n,)
    """
    if np.ndim(A) == 3:
        return _batch(syevd, (A,), out)
    A = _mat(A, "A")
    check_symmetric(A, "syevd input")
    U = _buffer(A, out)
    lam = _be().syevd(U)
    fix_row_signs(U)
    return U, lam


def gesvd(A, out=None):
    """Thin SVD ``A = U^T diag(lam) V`` of an m x n matrix, m <= n.

    ``lam`` ascends.  Row signs are decided on ``U`` (as for :func:`syevd`)
    and mirrored onto ``V``.  ``V`` is written into ``out``.

    Returns
    -------
    U : ndarray, shape (m, m)
    lam : ndarray, shape (m,)
    V : ndarray, shape (m, n)
    """
    if np.ndim(A) == 3:
        return _batch(gesvd, (A,), out)
    A = _mat(A, "A")
    m, n = A.shape
    if m > n:
        raise ShapeError(f"gesvd needs rows <= cols, got {m}x{n}")
    V = _buffer(A, out)
    U, lam = _be().gesvd(V)
    fix_row_signs(U, V)
    return U, lam, V
