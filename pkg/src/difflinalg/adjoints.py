"""Closed-form backward passes of the nine operators.

Each function maps output cotangents to input cotangents.  A cotangent given
as ``None`` is treated as zero.  Cotangents of factors need not share the
factor's structure: the upper triangle of ``Lbar`` and the asymmetric part of
``Bbar`` are handled by the formulas themselves.

Buffers are requested through :mod:`difflinalg.workspace`, so the budgets
below can be asserted:

============  ===========================================
operator      auxiliary matrices beyond declared outputs
============  ===========================================
gemm2         none
syrk          none
trmm          none
trsm          none
potrf         none
potri         none
gelqf         one m x m
syevd         one n x n
gesvd         one m x m (plus an m-vector)
============  ===========================================

Functions taking ``overwrite=True`` write the main input cotangent into the
buffer of an output cotangent instead of a fresh one (see each docstring).
"""

from __future__ import annotations

import enum

import numpy as np

from . import dense, kernels, workspace
from .dense import ToleranceConfig
from .errors import ShapeError, SingularSpectrumError

__all__ = [
    "DependencyMode",
    "BACKWARD_MODE",
    "gemm2_backward",
    "syrk_backward",
    "trmm_backward",
    "trsm_backward",
    "potrf_backward",
    "potri_backward",
    "gelqf_backward",
    "syevd_backward",
    "gesvd_backward",
]


class DependencyMode(enum.Enum):
    """Which forward values a backward pass reads."""

    USE_IN = "UseIn"
    USE_OUT = "UseOut"
    USE_IN_OUT = "UseInOut"


BACKWARD_MODE = {
    "gemm2": DependencyMode.USE_IN,
    "syrk": DependencyMode.USE_IN,
    "trmm": DependencyMode.USE_IN,
    "trsm": DependencyMode.USE_IN_OUT,
    "potri": DependencyMode.USE_IN_OUT,
    "potrf": DependencyMode.USE_OUT,
    "gelqf": DependencyMode.USE_OUT,
    "syevd": DependencyMode.USE_OUT,
    "gesvd": DependencyMode.USE_OUT,
}


def _target(cot, shape, dtype, overwrite, tag):
    """Buffer receiving a result that starts out as a copy of ``cot``."""
    if cot is None:
        buf = workspace.output(shape, dtype, tag=tag)
        buf[...] = 0
        return buf
    if cot.shape != tuple(shape):
        raise ShapeError(f"{tag}: cotangent has shape {cot.shape}, expected {tuple(shape)}")
    if overwrite:
        if not cot.flags.c_contiguous or not cot.flags.writeable:
            raise ShapeError(f"{tag}: cannot overwrite a non-contiguous or read-only cotangent")
        return cot
    buf = workspace.output(shape, dtype, tag=tag)
    buf[...] = cot
    return buf


def _zeros(shape, dtype, tag):
    buf = workspace.output(shape, dtype, tag=tag)
    buf[...] = 0
    return buf


def _per_slice(fn, arrays, **kwargs):
    nb = next(a.shape[0] for a in arrays if a is not None)
    results = [fn(*(None if a is None else a[b] for a in arrays), **kwargs) for b in range(nb)]
    if isinstance(results[0], tuple):
        return tuple(np.stack(parts) for parts in zip(*results))
    return np.stack(results)


def _mask(x, lower):
    return dense.tril(x, out=x) if lower else dense.triu(x, out=x)


def gemm2_backward(Cbar, A, B, ta=False, tb=False, alpha=1.0, overwrite_b=False):
    """Pullback of ``C = alpha op(A) op(B)``.

    With ``overwrite_b=True`` the result ``Bbar`` is written into ``B``'s
    buffer; ``Abar`` is always finished first, so this is safe.

    Returns
    -------
    (Abar, Bbar)
    """
    if np.ndim(A) == 3:
        return _per_slice(gemm2_backward, (Cbar, A, B), ta=ta, tb=tb, alpha=alpha, overwrite_b=overwrite_b)
    be = kernels.backend()
    Abar = workspace.output(A.shape, A.dtype, tag="gemm2.Abar")
    if Cbar is None:
        Abar[...] = 0
        Bbar = B if overwrite_b else workspace.output(B.shape, B.dtype, tag="gemm2.Bbar")
        Bbar[...] = 0
        return Abar, Bbar
    if ta:
        be.gemm(alpha, B, Cbar, 0.0, Abar, ta=tb, tb=True)
    else:
        be.gemm(alpha, Cbar, B, 0.0, Abar, ta=False, tb=not tb)
    Bbar = B if overwrite_b else workspace.output(B.shape, B.dtype, tag="gemm2.Bbar")
    if tb:
        be.gemm(alpha, Cbar, A, 0.0, Bbar, ta=True, tb=ta)
    else:
        be.gemm(alpha, A, Cbar, 0.0, Bbar, ta=not ta, tb=False)
    return Abar, Bbar


def syrk_backward(Bbar, A, ta=False, alpha=1.0):
    """Pullback of ``B = alpha op(A) op(A)^T``.

    ``2 sym(Bbar)`` is never formed; the two halves are accumulated by two
    products into the result.
    """
    if np.ndim(A) == 3:
        return _per_slice(syrk_backward, (Bbar, A), ta=ta, alpha=alpha)
    if Bbar is None:
        return _zeros(A.shape, A.dtype, "syrk.Abar")
    be = kernels.backend()
    Abar = workspace.output(A.shape, A.dtype, tag="syrk.Abar")
    if ta:
        be.gemm(alpha, A, Bbar, 0.0, Abar)
        be.gemm(alpha, A, Bbar, 1.0, Abar, tb=True)
    else:
        be.gemm(alpha, Bbar, A, 0.0, Abar)
        be.gemm(alpha, Bbar, A, 1.0, Abar, ta=True)
    return Abar


def trmm_backward(Bbar, T, A, transpose=False, rightside=False, lower=True, alpha=1.0, overwrite=False):
    """Pullback of the triangular product ``B = alpha op(T) A`` (or ``alpha A op(T)``).

    ``Tbar`` is produced first, so ``Abar`` may take over ``Bbar``'s buffer
    (``overwrite=True``).  ``Tbar`` is exactly triangular.

    Returns
    -------
    (Abar, Tbar)
    """
    if np.ndim(A) == 3:
        return _per_slice(trmm_backward, (Bbar, T, A), transpose=transpose, rightside=rightside,
                          lower=lower, alpha=alpha, overwrite=overwrite)
    be = kernels.backend()
    Tbar = workspace.output(T.shape, T.dtype, tag="trmm.Tbar")
    if Bbar is None:
        Tbar[...] = 0
        return _zeros(A.shape, A.dtype, "trmm.Abar"), Tbar
    if not rightside:
        if transpose:
            be.gemm(alpha, A, Bbar, 0.0, Tbar, tb=True)
        else:
            be.gemm(alpha, Bbar, A, 0.0, Tbar, tb=True)
    else:
        if transpose:
            be.gemm(alpha, Bbar, A, 0.0, Tbar, ta=True)
        else:
            be.gemm(alpha, A, Bbar, 0.0, Tbar, ta=True)
    _mask(Tbar, lower)
    Abar = _target(Bbar, A.shape, A.dtype, overwrite, "trmm.Abar")
    be.trmm(T, Abar, lower=lower, transpose=not transpose, rightside=rightside, alpha=alpha)
    return Abar, Tbar


def trsm_backward(Bbar, T, B, transpose=False, rightside=False, lower=True, alpha=1.0, overwrite=False):
    """Pullback of the triangular solve ``B = alpha op(T)^{-1} A`` (or ``alpha A op(T)^{-1}``).

    Reads the forward *output* ``B``, never the input ``A``.  ``Abar`` comes
    first and may overwrite ``Bbar`` (``overwrite=True``); ``Tbar`` is then
    formed from ``Abar`` and ``B``.

    Returns
    -------
    (Abar, Tbar)
    """
    if np.ndim(B) == 3:
        return _per_slice(trsm_backward, (Bbar, T, B), transpose=transpose, rightside=rightside,
                          lower=lower, alpha=alpha, overwrite=overwrite)
    be = kernels.backend()
    Abar = _target(Bbar, B.shape, B.dtype, overwrite, "trsm.Abar")
    Tbar = workspace.output(T.shape, T.dtype, tag="trsm.Tbar")
    if Bbar is None or alpha == 0.0:
        # alpha = 0 forces B = 0, so T has no influence
        if Bbar is not None:
            Abar[...] = 0
        Tbar[...] = 0
        return Abar, Tbar
    be.trsm(T, Abar, lower=lower, transpose=not transpose, rightside=rightside, alpha=alpha)
    scale = -1.0 / alpha
    if not rightside:
        if transpose:
            be.gemm(scale, B, Abar, 0.0, Tbar, tb=True)
        else:
            be.gemm(scale, Abar, B, 0.0, Tbar, tb=True)
    else:
        if transpose:
            be.gemm(scale, Abar, B, 0.0, Tbar, ta=True)
        else:
            be.gemm(scale, B, Abar, 0.0, Tbar, ta=True)
    _mask(Tbar, lower)
    return Abar, Tbar


def potrf_backward(Lbar, L, lower=True, overwrite=False):
    """Pullback of the Cholesky factorization.

    Only the triangle of ``Lbar`` matching ``L`` influences the result.  The
    work is a copy, one triangular product, a mirror, two triangular solves
    and a scaling, all inside the result buffer (or inside ``Lbar`` when
    ``overwrite=True``).  The result is exactly symmetric.
    """
    if np.ndim(L) == 3:
        return _per_slice(potrf_backward, (Lbar, L), lower=lower, overwrite=overwrite)
    be = kernels.backend()
    Abar = _target(Lbar, L.shape, L.dtype, overwrite, "potrf.Abar")
    if Lbar is None:
        return Abar
    if lower:
        be.trmm(L, Abar, lower=True, transpose=True)
        dense.copyltu(Abar, out=Abar)
        be.trsm(L, Abar, lower=True, transpose=True)
        be.trsm(L, Abar, lower=True, rightside=True)
    else:
        be.trmm(L, Abar, lower=False, transpose=True, rightside=True)
        dense.copyutl(Abar, out=Abar)
        be.trsm(L, Abar, lower=False)
        be.trsm(L, Abar, lower=False, transpose=True, rightside=True)
    Abar *= 0.5
    return dense.sym(Abar, out=Abar)


def potri_backward(Bbar, L, B, lower=True):
    """Pullback of the inverse-from-Cholesky-factor ``B = (L L^T)^{-1}``.

    ``Bbar`` need not be symmetric.  ``B (Bbar + Bbar^T)`` is accumulated by
    two products straight into the result, then solved against ``L^T``.
    """
    if np.ndim(L) == 3:
        return _per_slice(potri_backward, (Bbar, L, B), lower=lower)
    Lbar = workspace.output(L.shape, L.dtype, tag="potri.Lbar")
    if Bbar is None:
        Lbar[...] = 0
        return Lbar
    be = kernels.backend()
    if lower:
        be.gemm(1.0, B, Bbar, 0.0, Lbar)
        be.gemm(1.0, B, Bbar, 1.0, Lbar, tb=True)
        be.trsm(L, Lbar, lower=True, transpose=True, rightside=True)
    else:
        be.gemm(1.0, Bbar, B, 0.0, Lbar)
        be.gemm(1.0, Bbar, B, 1.0, Lbar, ta=True)
        be.trsm(L, Lbar, lower=False, transpose=True)
    Lbar *= -1.0
    return _mask(Lbar, lower)


def gelqf_backward(Qbar, Lbar, Q, L, overwrite=False):
    """Pullback of the LQ factorization ``A = L Q``.

    One m x m temporary holds ``L^T Lbar - Qbar Q^T``.  The result (m x n)
    may overwrite ``Qbar`` (``overwrite=True``).
    """
    if np.ndim(Q) == 3:
        return _per_slice(gelqf_backward, (Qbar, Lbar, Q, L), overwrite=overwrite)
    be = kernels.backend()
    m = L.shape[0]
    M = workspace.temp((m, m), L.dtype, tag="gelqf.M")
    if Lbar is None:
        M[...] = 0
    else:
        be.gemm(1.0, L, Lbar, 0.0, M, ta=True)
    if Qbar is not None:
        be.gemm(-1.0, Qbar, Q, 1.0 if Lbar is not None else 0.0, M, tb=True)
    dense.copyltu(M, out=M)
    Abar = _target(Qbar, Q.shape, Q.dtype, overwrite, "gelqf.Abar")
    be.gemm(1.0, M, Q, 1.0, Abar)
    be.trsm(L, Abar, lower=True, transpose=True)
    return Abar


def _cfg(cfg, dtype):
    return cfg if cfg is not None else ToleranceConfig.for_dtype(dtype)


def syevd_backward(Ubar, lambar, U, lam, cfg: ToleranceConfig | None = None, overwrite=False):
    """Pullback of the symmetric eigendecomposition ``A = U^T diag(lam) U``.

    Eigenvalue gaps below ``cfg.eps_gap`` are clamped to it, so nearly
    degenerate spectra give finite (approximate) gradients.  Uses exactly one
    n x n temporary; the exactly symmetric result may overwrite ``Ubar``
    (``overwrite=True``).
    """
    if np.ndim(U) == 3:
        return _per_slice(syevd_backward, (Ubar, lambar, U, lam), cfg=cfg, overwrite=overwrite)
    be = kernels.backend()
    eps = _cfg(cfg, U.dtype).eps_gap
    n = U.shape[0]
    lam = np.asarray(lam).reshape(-1)
    T = workspace.temp((n, n), U.dtype, tag="syevd.T")
    if Ubar is None:
        T[...] = 0
    else:
        be.gemm(1.0, Ubar, U, 0.0, T, tb=True)
        for i in range(1, n):
            gap = np.maximum(lam[i] - lam[:i], eps)
            y = (T[i, :i] - T[:i, i]) / (2.0 * gap)
            T[i, :i] = y
            T[:i, i] = y
    idx = np.arange(n)
    T[idx, idx] = 0 if lambar is None else np.asarray(lambar).reshape(-1)
    if overwrite and Ubar is not None:
        Abar = Ubar
    else:
        Abar = workspace.output((n, n), U.dtype, tag="syevd.Abar")
    be.gemm(1.0, T, U, 0.0, Abar)
    be.gemm(1.0, U, Abar, 0.0, T, ta=True)
    Abar[...] = T
    return dense.sym(Abar, out=Abar)


def gesvd_backward(Ubar, lambar, Vbar, U, lam, V, cfg: ToleranceConfig | None = None, overwrite=False):
    """Pullback of the thin SVD ``A = U^T diag(lam) V``.

    Requires every singular value to exceed ``cfg.eps_gap``.  Auxiliary
    memory is one m x m matrix plus an m-vector; the final product with
    ``U^T`` runs over m x m column blocks of the m x n result, reusing the
    same temporary.  With ``overwrite=True`` the result takes over ``Vbar``.

    Raises
    ------
    SingularSpectrumError
        If ``min(lam) <= cfg.eps_gap``.
    """
    if np.ndim(V) == 3:
        return _per_slice(gesvd_backward, (Ubar, lambar, Vbar, U, lam, V), cfg=cfg, overwrite=overwrite)
    be = kernels.backend()
    eps = _cfg(cfg, V.dtype).eps_gap
    m, n = V.shape
    lam = np.asarray(lam).reshape(-1)
    if not lam.min() > eps:
        raise SingularSpectrumError(
            f"smallest singular value {lam.min():.3g} is not above eps_gap={eps:g}; backward undefined"
        )
    Abar = _target(Vbar, V.shape, V.dtype, overwrite, "gesvd.Abar")
    Abar /= lam[:, None]
    G = workspace.temp((m, m), V.dtype, tag="gesvd.G")
    d = workspace.scratch(m, V.dtype, tag="gesvd.d")
    if Vbar is None:
        G[...] = 0
    else:
        be.gemm(1.0, Abar, V, 0.0, G, tb=True)
    d[...] = np.diagonal(G)
    G *= lam[None, :]
    if Ubar is not None:
        be.gemm(1.0, Ubar, U, 1.0, G, tb=True)
    for i in range(1, m):
        denom = np.maximum(lam[i] - lam[:i], eps) * np.maximum(lam[i] + lam[:i], eps)
        y = (G[i, :i] - G[:i, i]) / denom
        G[i, :i] = y
        G[:i, i] = y
    G *= lam[None, :]
    idx = np.arange(m)
    G[idx, idx] = -d
    if lambar is not None:
        G[idx, idx] += np.asarray(lambar).reshape(-1)
    be.gemm(1.0, G, V, 1.0, Abar)
    flat = G.reshape(-1)
    for c0 in range(0, n, m):
        c1 = min(c0 + m, n)
        blk = flat[: m * (c1 - c0)].reshape(m, c1 - c0)
        be.gemm(1.0, U, Abar[:, c0:c1], 0.0, blk, ta=True)
        Abar[:, c0:c1] = blk
    return Abar
