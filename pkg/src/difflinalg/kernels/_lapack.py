"""In-place kernels delegating to the BLAS/LAPACK routines exposed by scipy.

Buffers are row-major, LAPACK is column-major.  A C-contiguous matrix ``a``
is passed as ``a.T``, which is an F-contiguous view of the transpose, so the
routines write straight into the caller's buffer.  Each call below states the
transposed problem it actually solves.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import blas, lapack

from ..errors import ConvergenceError, LinalgError, NotPositiveDefiniteError

name = "lapack"


def _blas(fname, arr):
    return blas.get_blas_funcs(fname, (arr,))


def _lapack(fname, arr):
    return lapack.get_lapack_funcs(fname, (arr,))


def _land(dst_f, res):
    # f2py silently copies when it cannot honour overwrite_*; put data back.
    if not np.shares_memory(dst_f, res):
        dst_f[...] = res


def gemm(alpha, a, b, beta, c, ta=False, tb=False):
    # C^T = alpha op(B)^T op(A)^T + beta C^T
    f = _blas("gemm", c)
    res = f(alpha, b.T, a.T, beta=beta, c=c.T, trans_a=int(tb), trans_b=int(ta), overwrite_c=1)
    _land(c.T, res)
    return c


def syrk(alpha, a, ta, c):
    f = _blas("syrk", c)
    res = f(alpha, a.T, beta=0.0, c=c.T, trans=0 if ta else 1, lower=0, overwrite_c=1)
    _land(c.T, res)
    n = c.shape[0]
    for i in range(1, n):
        c[:i, i] = c[i, :i]
    return c


def _tri(fname, t, b, lower, transpose, rightside, alpha):
    # op(T) X = B  <=>  X^T op(T)^T = B^T, and op(T)^T is op(T^T) in Fortran terms
    f = _blas(fname, b)
    res = f(alpha, t.T, b.T, side=0 if rightside else 1, lower=0 if lower else 1,
            trans_a=int(transpose), diag=0, overwrite_b=1)
    _land(b.T, res)
    return b


def trsm(t, b, lower=True, transpose=False, rightside=False, alpha=1.0):
    return _tri("trsm", t, b, lower, transpose, rightside, alpha)


def trmm(t, b, lower=True, transpose=False, rightside=False, alpha=1.0):
    return _tri("trmm", t, b, lower, transpose, rightside, alpha)


def potrf(a, lower=True):
    f = _lapack("potrf", a)
    res, info = f(a.T, lower=0 if lower else 1, clean=1, overwrite_a=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise LinalgError(f"potrf: illegal argument {-info}")
    _land(a.T, res)
    return a


def potri(a, lower=True):
    f = _lapack("potri", a)
    res, info = f(a.T, lower=0 if lower else 1, overwrite_c=1)
    if info != 0:
        raise LinalgError(f"potri failed with info={info}")
    _land(a.T, res)
    n = a.shape[0]
    if lower:
        for i in range(1, n):
            a[:i, i] = a[i, :i]
    else:
        for i in range(1, n):
            a[i, :i] = a[:i, i]
    return a


def gelqf(a):
    # QR of A^T: A^T = Qt Rt, so L = Rt^T and Q = Qt^T
    m, n = a.shape
    geqrf = _lapack("geqrf", a)
    orgqr = _lapack("orgqr", a)
    qr, tau, _, info = geqrf(a.T, overwrite_a=1)
    if info != 0:
        raise LinalgError(f"geqrf failed with info={info}")
    _land(a.T, qr)
    L = np.tril(a[:, :m])
    q, _, info = orgqr(a.T, tau, overwrite_a=1)
    if info != 0:
        raise LinalgError(f"orgqr failed with info={info}")
    _land(a.T, q)
    return L


def syevd(a):
    f = _lapack("syevd", a)
    w, v, info = f(a.T, compute_v=1, lower=0, overwrite_a=1)
    if info > 0:
        raise ConvergenceError(info)
    if info < 0:
        raise LinalgError(f"syevd: illegal argument {-info}")
    _land(a.T, v)
    return w


def gesvd(a):
    # A^T = Ut S Vt^T  =>  A = Vt S Ut^T; ascending order means reversing
    m, n = a.shape
    f = _lapack("gesdd", a)
    u, s, vt, info = f(a.T, compute_uv=1, full_matrices=0)
    if info > 0:
        f = _lapack("gesvd", a)
        u, s, vt, info = f(a.T, compute_uv=1, full_matrices=0)
    if info > 0:
        raise ConvergenceError(info)
    if info < 0:
        raise LinalgError(f"gesvd: illegal argument {-info}")
    a[...] = u.T[::-1]
    return np.ascontiguousarray(vt[::-1]), np.ascontiguousarray(s[::-1])
