"""Self-contained in-place kernels built on numpy array primitives.

Every routine overwrites its matrix argument and only reads the triangle it
is told to read.  Transposed or right-side variants are obtained by running
the left-side lower/upper core on transposed *views*, so no data is ever
copied into a different layout.  Scratch is bounded by one block of rows
(``NB`` x columns) unless noted otherwise.
"""

from __future__ import annotations

import math

import numpy as np

from .. import workspace
from ..errors import ConvergenceError, NotPositiveDefiniteError

NB = 64
QL_ITERATIONS_PER_ROW = 30
name = "reference"


# -- level 3 building blocks ---------------------------------------------------

def gemm(alpha, a, b, beta, c, ta=False, tb=False):
    """``c <- alpha * op(a) @ op(b) + beta * c``, row block by row block."""
    a_ = a.T if ta else a
    b_ = b.T if tb else b
    m = c.shape[0]
    for r0 in range(0, m, NB):
        r1 = min(r0 + NB, m)
        blk = a_[r0:r1] @ b_
        if alpha != 1.0:
            blk *= alpha
        if beta == 0.0:
            c[r0:r1] = blk
        else:
            if beta != 1.0:
                c[r0:r1] *= beta
            c[r0:r1] += blk
    return c


def syrk(alpha, a, ta, c):
    """``c <- alpha * op(a) @ op(a).T`` with both triangles written."""
    a_ = a.T if ta else a
    n = c.shape[0]
    for r0 in range(0, n, NB):
        r1 = min(r0 + NB, n)
        blk = a_[r0:r1] @ a_[:r1].T
        if alpha != 1.0:
            blk *= alpha
        c[r0:r1, :r1] = blk
    for i in range(1, n):
        c[:i, i] = c[i, :i]
    return c


def _solve_lower(L, B):
    n = L.shape[0]
    for j0 in range(0, n, NB):
        j1 = min(j0 + NB, n)
        if j0:
            B[j0:j1] -= L[j0:j1, :j0] @ B[:j0]
        for i in range(j0, j1):
            if i > j0:
                B[i] -= L[i, j0:i] @ B[j0:i]
            B[i] /= L[i, i]


def _solve_upper(U, B):
    n = U.shape[0]
    for j1 in range(n, 0, -NB):
        j0 = max(j1 - NB, 0)
        if j1 < n:
            B[j0:j1] -= U[j0:j1, j1:] @ B[j1:]
        for i in range(j1 - 1, j0 - 1, -1):
            if i < j1 - 1:
                B[i] -= U[i, i + 1:j1] @ B[i + 1:j1]
            B[i] /= U[i, i]


def _mul_lower(L, B):
    n = L.shape[0]
    for j1 in range(n, 0, -NB):
        j0 = max(j1 - NB, 0)
        for i in range(j1 - 1, j0 - 1, -1):
            B[i] = L[i, j0:i + 1] @ B[j0:i + 1]
        if j0:
            B[j0:j1] += L[j0:j1, :j0] @ B[:j0]


def _mul_upper(U, B):
    n = U.shape[0]
    for j0 in range(0, n, NB):
        j1 = min(j0 + NB, n)
        for i in range(j0, j1):
            B[i] = U[i, i:j1] @ B[i:j1]
        if j1 < n:
            B[j0:j1] += U[j0:j1, j1:] @ B[j1:]


def _triangular_views(t, b, lower, transpose, rightside):
    # M = op(t); right-side problems become left-side ones on b.T.
    m_lower = lower != transpose
    m = t.T if transpose else t
    if rightside:
        m, m_lower, b = m.T, not m_lower, b.T
    return m, m_lower, b


def trsm(t, b, lower=True, transpose=False, rightside=False, alpha=1.0):
    m, m_lower, b_ = _triangular_views(t, b, lower, transpose, rightside)
    if alpha != 1.0:
        b_ *= alpha
    (_solve_lower if m_lower else _solve_upper)(m, b_)
    return b


def trmm(t, b, lower=True, transpose=False, rightside=False, alpha=1.0):
    m, m_lower, b_ = _triangular_views(t, b, lower, transpose, rightside)
    (_mul_lower if m_lower else _mul_upper)(m, b_)
    if alpha != 1.0:
        b_ *= alpha
    return b


# -- Cholesky and friends ------------------------------------------------------

def _potrf_lower(a):
    n = a.shape[0]
    for j0 in range(0, n, NB):
        j1 = min(j0 + NB, n)
        for j in range(j0, j1):
            r = a[j, j0:j]
            d = a[j, j] - r @ r
            if not d > 0:
                raise NotPositiveDefiniteError(j)
            d = math.sqrt(d)
            a[j, j] = d
            if j + 1 < j1:
                a[j + 1:j1, j] -= a[j + 1:j1, j0:j] @ r
                a[j + 1:j1, j] /= d
        if j1 < n:
            panel = a[j1:, j0:j1]
            _solve_lower(a[j0:j1, j0:j1], panel.T)
            for r0 in range(j1, n, NB):
                r1 = min(r0 + NB, n)
                a[r0:r1, j1:r1] -= panel[r0 - j1:r1 - j1] @ panel[:r1 - j1].T


def _zero_strict(a, upper):
    n = a.shape[0]
    if upper:
        for i in range(n - 1):
            a[i, i + 1:] = 0
    else:
        for i in range(1, n):
            a[i, :i] = 0


def potrf(a, lower=True):
    """Cholesky factor in place; the opposite strict triangle is zeroed."""
    _potrf_lower(a if lower else a.T)
    _zero_strict(a, upper=lower)
    return a


def _potri_lower(a):
    n = a.shape[0]
    _zero_strict(a, upper=True)
    for j in range(n - 1, -1, -1):
        a[j, j] = 1.0 / a[j, j]
        if j < n - 1:
            col = a[j + 1:, j]
            col[...] = (a[j + 1:, j + 1:] @ col) * (-a[j, j])
    for i in range(n):
        a[i, :i + 1] = a[i:, i] @ a[i:, :i + 1]
    for i in range(1, n):
        a[:i, i] = a[i, :i]


def potri(a, lower=True):
    """Inverse of ``L L^T`` (or ``R^T R``) from its Cholesky factor, in place."""
    _potri_lower(a if lower else a.T)
    return a


# -- LQ ------------------------------------------------------------------------

def _rank1_rows(block, w, v, scale):
    # block -= scale * outer(w, v), one row block at a time
    for r0 in range(0, block.shape[0], NB):
        r1 = min(r0 + NB, block.shape[0])
        block[r0:r1] -= (scale * w[r0:r1])[:, None] * v


def gelqf(a):
    """Householder LQ.  ``a`` (m x n, m <= n) is overwritten by Q; returns L.

    Reflectors are applied from the right; row ``k`` of the work array holds
    the essential part of reflector ``k`` until Q is formed.  The diagonal of
    L may have either sign.
    """
    m, n = a.shape
    tau = workspace.scratch(m, a.dtype, tag="gelqf.tau")
    for k in range(m):
        x = a[k, k:]
        alpha = float(x[0])
        xnorm = float(np.linalg.norm(x[1:])) if n - k > 1 else 0.0
        if xnorm == 0.0:
            tau[k] = 0.0
            continue
        beta = -math.copysign(math.hypot(alpha, xnorm), alpha)
        tau[k] = (beta - alpha) / beta
        x[1:] *= 1.0 / (alpha - beta)
        x[0] = beta
        if k + 1 < m:
            rows = a[k + 1:, k:]
            w = rows[:, 0] + rows[:, 1:] @ x[1:]
            rows[:, 0] -= tau[k] * w
            _rank1_rows(rows[:, 1:], w, x[1:], tau[k])
    L = workspace.output((m, m), a.dtype, tag="gelqf.L")
    for i in range(m):
        L[i, :i + 1] = a[i, :i + 1]
        L[i, i + 1:] = 0
    # form Q in place (backward accumulation of the reflectors)
    for k in range(m - 1, -1, -1):
        if k < n - 1:
            if k < m - 1:
                a[k, k] = 1.0
                v = a[k, k:]
                rows = a[k + 1:, k:]
                w = rows @ v
                _rank1_rows(rows, w, v, tau[k])
            a[k, k + 1:] *= -tau[k]
        a[k, k] = 1.0 - tau[k]
        a[k, :k] = 0
    return L


# -- symmetric eigen -----------------------------------------------------------

def _tridiagonalize(a, d, e, tau):
    """Householder reduction ``a = Q T Q^T``; reflector k lands in a[k+2:, k]."""
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k, k + 1:].copy()
        alpha = float(x[0])
        xnorm = float(np.linalg.norm(x[1:]))
        d[k] = a[k, k]
        if xnorm == 0.0:
            tau[k] = 0.0
            e[k] = alpha
            a[k + 2:, k] = 0
            continue
        beta = -math.copysign(math.hypot(alpha, xnorm), alpha)
        t = (beta - alpha) / beta
        tau[k] = t
        e[k] = beta
        v = x
        v[1:] *= 1.0 / (alpha - beta)
        v[0] = 1.0
        blk = a[k + 1:, k + 1:]
        p = (blk @ v) * t
        w = p - (0.5 * t * float(p @ v)) * v
        for r0 in range(0, blk.shape[0], NB):
            r1 = min(r0 + NB, blk.shape[0])
            blk[r0:r1] -= v[r0:r1, None] * w + w[r0:r1, None] * v
        a[k + 2:, k] = v[1:]
    if n >= 2:
        d[n - 2] = a[n - 2, n - 2]
        e[n - 2] = a[n - 1, n - 2]
    d[n - 1] = a[n - 1, n - 1]
    e[n - 1] = 0.0


def _form_q(a, tau):
    n = a.shape[0]
    a[n - 1, n - 1] = 1.0
    for k in range(n - 3, -1, -1):
        a[k + 1, k + 1:] = 0
        a[k + 1, k + 1] = 1.0
        a[k + 2:, k + 1] = 0
        if tau[k] != 0.0:
            v = a[k + 1:, k].copy()
            v[0] = 1.0
            blk = a[k + 1:, k + 1:]
            w = v @ blk
            _rank1_rows(blk, v, w, tau[k])
    a[0, :] = 0
    a[:, 0] = 0
    a[0, 0] = 1.0


def _transpose_square(a):
    n = a.shape[0]
    for i in range(n - 1):
        tmp = a[i, i + 1:].copy()
        a[i, i + 1:] = a[i + 1:, i]
        a[i + 1:, i] = tmp


def _tql2(d, e, z, max_iter):
    """Implicit QL on the tridiagonal (d, e); rotations hit rows of ``z``.

    On return ``d`` is ascending and row i of ``z`` is the matching
    eigenvector.
    """
    n = d.shape[0]
    eps = float(np.finfo(z.dtype).eps)
    f = 0.0
    tst1 = 0.0
    iters = 0
    for l in range(n):
        tst1 = max(tst1, abs(float(d[l])) + abs(float(e[l])))
        m = l
        while m < n - 1:
            if abs(float(e[m])) <= eps * tst1:
                break
            m += 1
        if m > l:
            while True:
                iters += 1
                if iters > max_iter:
                    raise ConvergenceError(iters - 1)
                g = float(d[l])
                p = (float(d[l + 1]) - g) / (2.0 * float(e[l]))
                r = math.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = float(e[l]) / (p + r)
                d[l + 1] = float(e[l]) * (p + r)
                dl1 = float(d[l + 1])
                h = g - float(d[l])
                if l + 2 < n:
                    d[l + 2:] -= h
                f += h
                p = float(d[m])
                c = c2 = c3 = 1.0
                el1 = float(e[l + 1])
                s = s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    ei = float(e[i])
                    di = float(d[i])
                    g = c * ei
                    h = c * p
                    r = math.hypot(p, ei)
                    e[i + 1] = s * r
                    s = ei / r
                    c = p / r
                    p = c * di - s * g
                    d[i + 1] = h + s * (c * g + s * di)
                    zi = z[i].copy()
                    z[i] *= c
                    z[i] -= s * z[i + 1]
                    z[i + 1] *= c
                    z[i + 1] += s * zi
                p = -s * s2 * c3 * el1 * float(e[l]) / dl1
                e[l] = s * p
                d[l] = c * p
                if not abs(float(e[l])) > eps * tst1:
                    break
        d[l] = float(d[l]) + f
        e[l] = 0.0
    for i in range(n - 1):
        k = i + int(np.argmin(d[i:]))
        if k != i and d[k] < d[i]:
            d[i], d[k] = d[k], d[i]
            tmp = z[i].copy()
            z[i] = z[k]
            z[k] = tmp


def syevd(a):
    """Eigenvectors overwrite ``a`` as rows; returns ascending eigenvalues.

    Only the lower triangle of ``a`` is referenced for the input values
    (the upper triangle is overwritten with a mirror first).
    """
    n = a.shape[0]
    for i in range(1, n):
        a[:i, i] = a[i, :i]
    d = workspace.output((n,), a.dtype, tag="syevd.lambda")
    e = workspace.scratch(n, a.dtype, tag="syevd.offdiag")
    tau = workspace.scratch(n, a.dtype, tag="syevd.tau")
    _tridiagonalize(a, d, e, tau)
    _form_q(a, tau)
    _transpose_square(a)
    _tql2(d, e, a, max_iter=QL_ITERATIONS_PER_ROW * n)
    return d


# -- SVD -----------------------------------------------------------------------

def _round_robin(m):
    """Rounds of disjoint index pairs covering every pair once."""
    idx = list(range(m)) + ([None] if m % 2 else [])
    k = len(idx)
    rounds = []
    for _ in range(k - 1):
        pairs = [(idx[i], idx[k - 1 - i]) for i in range(k // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p is not None and q is not None]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        idx = [idx[0]] + [idx[-1]] + idx[1:-1]
    return rounds


def _complete_rows(v, zero_rows):
    """Replace the rows listed in ``zero_rows`` by an orthonormal completion."""
    m, n = v.shape
    good = [i for i in range(m) if i not in set(zero_rows)]
    for i in zero_rows:
        basis = v[good]
        best = None
        for k in range(n):
            cand = np.zeros(n, dtype=v.dtype)
            cand[k] = 1.0
            for _ in range(2):
                cand -= basis.T @ (basis @ cand)
            nrm = float(np.linalg.norm(cand))
            if best is None or nrm > best[0]:
                best = (nrm, cand)
            if nrm > 0.5:
                break
        v[i] = best[1] / best[0]
        good.append(i)


def gesvd(a, max_sweeps=60):
    """One-sided Jacobi SVD on the rows of ``a`` (m x n, m <= n).

    ``a`` is overwritten by V (row-orthonormal).  Returns ``(U, lam)`` with
    ascending singular values, so that ``A = U^T diag(lam) V``.
    """
    m, n = a.shape
    dtype = a.dtype
    u = workspace.output((m, m), dtype, tag="gesvd.U")
    u[...] = 0
    u[np.arange(m), np.arange(m)] = 1.0
    eps = float(np.finfo(dtype).eps)
    tol = eps * max(m, 1)
    rounds = _round_robin(m)
    converged = m < 2
    sweep = 0
    while not converged:
        sweep += 1
        if sweep > max_sweeps:
            raise ConvergenceError(max_sweeps)
        off = 0.0
        for p, q in rounds:
            ap, aq = a[p], a[q]
            alpha = np.einsum("ij,ij->i", ap, ap)
            beta = np.einsum("ij,ij->i", aq, aq)
            gamma = np.einsum("ij,ij->i", ap, aq)
            denom = np.sqrt(alpha * beta)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(denom > 0, np.abs(gamma) / denom, 0.0)
            off = max(off, float(rel.max()))
            active = rel > tol
            if not active.any():
                continue
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(active, c, 1.0).astype(dtype)
            s = np.where(active, s, 0.0).astype(dtype)
            a[p] = c[:, None] * ap - s[:, None] * aq
            a[q] = s[:, None] * ap + c[:, None] * aq
            up, uq = u[p], u[q]
            u[p] = c[:, None] * up - s[:, None] * uq
            u[q] = s[:, None] * up + c[:, None] * uq
        converged = off <= tol
    lam = np.sqrt(np.einsum("ij,ij->i", a, a)).astype(dtype)
    order = np.argsort(lam, kind="stable")
    lam = lam[order]
    a[...] = a[order]
    u[...] = u[order]
    scale = float(lam[-1]) if m else 0.0
    tiny = [i for i in range(m) if not lam[i] > eps * max(scale, 1e-300) * n]
    big = [i for i in range(m) if i not in tiny]
    for i in big:
        a[i] /= lam[i]
    if tiny:
        lam[tiny] = 0.0
        _complete_rows(a, tiny)
    return u, lam
