"""Registry of tape primitives.

Each :class:`OpDef` bundles shape inference, a forward that may write its
main output over one input (``inplace``), a backward, and the dependency mode
that decides which forward values the backward is handed.  Values outside
the retention set arrive as ``None``, so a backward that tried to read them
would fail loudly.

Backward signature: ``backward(cots, ins, outs, ctx, overwrite)`` returning
one cotangent (or ``None``) per input.  ``ctx`` carries flags, shapes and the
tolerance config.  With ``overwrite=True`` the backward may destroy
``cots[inplace[0]]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import adjoints as ad
from .. import kernels
from ..adjoints import DependencyMode
from ..errors import ShapeError, UnknownOpError

__all__ = ["OpDef", "REGISTRY", "get_op", "LINALG_OPS"]


@dataclass(frozen=True)
class OpDef:
    name: str
    n_outputs: int
    shapes: Callable
    forward: Callable
    backward: Callable
    mode: DependencyMode
    retain_inputs: tuple | None = None  # None: every input the mode asks for
    inplace: tuple | None = None  # (output slot, input slot) sharing a buffer
    fresh_grads: bool = True  # backward never hands back a cotangent buffer it was given
    overwrite_cot: bool = False  # backward can reuse the main output cotangent
    variadic: bool = False

    def retains_inputs(self):
        return self.mode in (DependencyMode.USE_IN, DependencyMode.USE_IN_OUT)

    def retains_outputs(self):
        return self.mode in (DependencyMode.USE_OUT, DependencyMode.USE_IN_OUT)

    def retained_input_slots(self, n_inputs):
        if not self.retains_inputs():
            return ()
        return tuple(range(n_inputs)) if self.retain_inputs is None else self.retain_inputs


REGISTRY: dict = {}


def _register(op: OpDef):
    REGISTRY[op.name] = op
    return op


def get_op(name) -> OpDef:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownOpError(f"unknown op {name!r}") from None


def _square(shape, what):
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ShapeError(f"{what} must be square, got {shape}")
    return shape[0]


# -- linear algebra ------------------------------------------------------------

def _gemm2_shapes(s, ta=False, tb=False, alpha=1.0):
    m, k = (s[0][1], s[0][0]) if ta else s[0]
    k2, n = (s[1][1], s[1][0]) if tb else s[1]
    if k != k2:
        raise ShapeError(f"gemm2 inner dimensions differ: {s[0]} (ta={ta}) vs {s[1]} (tb={tb})")
    return [(m, n)]


_register(OpDef(
    "gemm2", 1, _gemm2_shapes,
    lambda x, out, ta=False, tb=False, alpha=1.0: (kernels.gemm2(x[0], x[1], ta, tb, alpha),),
    lambda c, x, y, ctx, ow: list(ad.gemm2_backward(c[0], x[0], x[1], **ctx.flags)),
    DependencyMode.USE_IN,
))


def _syrk_shapes(s, ta=False, alpha=1.0):
    n = s[0][1] if ta else s[0][0]
    return [(n, n)]


_register(OpDef(
    "syrk", 1, _syrk_shapes,
    lambda x, out, ta=False, alpha=1.0: (kernels.syrk(x[0], ta, alpha),),
    lambda c, x, y, ctx, ow: [ad.syrk_backward(c[0], x[0], **ctx.flags)],
    DependencyMode.USE_IN,
))


def _tri_shapes(s, transpose=False, rightside=False, lower=True, alpha=1.0):
    n = _square(s[0], "triangular operand")
    dim = s[1][1] if rightside else s[1][0]
    if dim != n:
        raise ShapeError(f"triangular operand {s[0]} incompatible with {s[1]} (rightside={rightside})")
    return [tuple(s[1])]


def _trmm_bwd(c, x, y, ctx, ow):
    abar, tbar = ad.trmm_backward(c[0], x[0], x[1], overwrite=ow, **ctx.flags)
    return [tbar, abar]


def _trsm_bwd(c, x, y, ctx, ow):
    abar, tbar = ad.trsm_backward(c[0], x[0], y[0], overwrite=ow, **ctx.flags)
    return [tbar, abar]


_register(OpDef(
    "trmm", 1, _tri_shapes,
    lambda x, out, **f: (kernels.trmm(x[0], x[1], out=out, **f),),
    _trmm_bwd, DependencyMode.USE_IN, inplace=(0, 1), overwrite_cot=True,
))
_register(OpDef(
    "trsm", 1, _tri_shapes,
    lambda x, out, **f: (kernels.trsm(x[0], x[1], out=out, **f),),
    _trsm_bwd, DependencyMode.USE_IN_OUT, retain_inputs=(0,), inplace=(0, 1), overwrite_cot=True,
))


def _same_square(s, **flags):
    _square(s[0], "operand")
    return [tuple(s[0])]


_register(OpDef(
    "potrf", 1, _same_square,
    lambda x, out, lower=True: (kernels.potrf(x[0], lower, out=out),),
    lambda c, x, y, ctx, ow: [ad.potrf_backward(c[0], y[0], overwrite=ow, **ctx.flags)],
    DependencyMode.USE_OUT, inplace=(0, 0), overwrite_cot=True,
))
_register(OpDef(
    "potri", 1, _same_square,
    lambda x, out, lower=True: (kernels.potri(x[0], lower, out=out),),
    lambda c, x, y, ctx, ow: [ad.potri_backward(c[0], x[0], y[0], **ctx.flags)],
    DependencyMode.USE_IN_OUT, inplace=(0, 0),
))


def _gelqf_shapes(s):
    m, n = s[0]
    if m > n:
        raise ShapeError(f"gelqf needs rows <= cols, got {s[0]}")
    return [(m, n), (m, m)]


_register(OpDef(
    "gelqf", 2, _gelqf_shapes,
    lambda x, out: kernels.gelqf(x[0], out=out),
    lambda c, x, y, ctx, ow: [ad.gelqf_backward(c[0], c[1], y[0], y[1], overwrite=ow)],
    DependencyMode.USE_OUT, inplace=(0, 0), overwrite_cot=True,
))


def _syevd_shapes(s):
    n = _square(s[0], "syevd operand")
    return [(n, n), (n, 1)]


def _syevd_fwd(x, out):
    u, lam = kernels.syevd(x[0], out=out)
    return u, lam.reshape(-1, 1)


_register(OpDef(
    "syevd", 2, _syevd_shapes, _syevd_fwd,
    lambda c, x, y, ctx, ow: [ad.syevd_backward(c[0], c[1], y[0], y[1], cfg=ctx.cfg, overwrite=ow)],
    DependencyMode.USE_OUT, inplace=(0, 0), overwrite_cot=True,
))


def _gesvd_shapes(s):
    m, n = s[0]
    if m > n:
        raise ShapeError(f"gesvd needs rows <= cols, got {s[0]}")
    return [(m, m), (m, 1), (m, n)]


def _gesvd_fwd(x, out):
    u, lam, v = kernels.gesvd(x[0], out=out)
    return u, lam.reshape(-1, 1), v


_register(OpDef(
    "gesvd", 3, _gesvd_shapes, _gesvd_fwd,
    lambda c, x, y, ctx, ow: [ad.gesvd_backward(c[0], c[1], c[2], y[0], y[1], y[2], cfg=ctx.cfg, overwrite=ow)],
    DependencyMode.USE_OUT, inplace=(2, 0), overwrite_cot=True,
))

LINALG_OPS = ("gemm2", "syrk", "trmm", "trsm", "potrf", "potri", "gelqf", "syevd", "gesvd")


# -- elementwise and structural --------------------------------------------------

def _broadcast_shapes(s):
    a, b = tuple(s[0]), tuple(s[1])
    if a == b or b == (1, 1):
        return [a]
    if a == (1, 1):
        return [b]
    raise ShapeError(f"operands {a} and {b} do not broadcast (only 1x1 broadcasts)")


def _unbroadcast(g, shape):
    if g is None:
        return None
    if g.shape == tuple(shape):
        return g
    return np.full(shape, g.sum(), dtype=g.dtype)


def _binary_out(x, out, fn):
    if out is not None:
        return (fn(x[0], x[1], out=out),)
    return (fn(x[0], x[1]),)


_register(OpDef(
    "add", 1, _broadcast_shapes,
    lambda x, out: _binary_out(x, out, np.add),
    lambda c, x, y, ctx, ow: [_unbroadcast(c[0], s) for s in ctx.in_shapes],
    DependencyMode.USE_IN, retain_inputs=(), inplace=(0, 0), fresh_grads=False,
))
_register(OpDef(
    "sub", 1, _broadcast_shapes,
    lambda x, out: _binary_out(x, out, np.subtract),
    lambda c, x, y, ctx, ow: [_unbroadcast(c[0], ctx.in_shapes[0]), _unbroadcast(-c[0], ctx.in_shapes[1])],
    DependencyMode.USE_IN, retain_inputs=(), inplace=(0, 0), fresh_grads=False,
))
_register(OpDef(
    "mul", 1, _broadcast_shapes,
    lambda x, out: _binary_out(x, out, np.multiply),
    lambda c, x, y, ctx, ow: [_unbroadcast(c[0] * x[1], ctx.in_shapes[0]),
                              _unbroadcast(c[0] * x[0], ctx.in_shapes[1])],
    DependencyMode.USE_IN, inplace=(0, 0),
))


def _div_bwd(c, x, y, ctx, ow):
    # d(a/b) = da/b - (a/b) db/b
    ga = c[0] / x[1]
    return [_unbroadcast(ga, ctx.in_shapes[0]), _unbroadcast(-ga * y[0], ctx.in_shapes[1])]


_register(OpDef(
    "div", 1, _broadcast_shapes,
    lambda x, out: _binary_out(x, out, np.divide),
    _div_bwd, DependencyMode.USE_IN_OUT, retain_inputs=(1,), inplace=(0, 0),
))


def _same(s, **flags):
    return [tuple(s[0])]


def _unary(fn):
    def forward(x, out, **flags):
        return (fn(x[0], out, **flags),)

    return forward


def _ufunc(u):
    return _unary(lambda a, out: u(a, out=out) if out is not None else u(a))


_register(OpDef(
    "neg", 1, _same, _ufunc(np.negative),
    lambda c, x, y, ctx, ow: [-c[0]],
    DependencyMode.USE_IN, retain_inputs=(), inplace=(0, 0),
))


def _scale_fwd(a, out, alpha=1.0):
    return np.multiply(a, alpha, out=out) if out is not None else a * alpha


_register(OpDef(
    "scale", 1, _same, _unary(_scale_fwd),
    lambda c, x, y, ctx, ow: [c[0] * ctx.flags["alpha"]],
    DependencyMode.USE_IN, retain_inputs=(), inplace=(0, 0),
))


def _shift_fwd(a, out, c=0.0):
    return np.add(a, c, out=out) if out is not None else a + c


_register(OpDef(
    "shift", 1, _same, _unary(_shift_fwd),
    lambda c, x, y, ctx, ow: [c[0]],
    DependencyMode.USE_IN, retain_inputs=(), inplace=(0, 0), fresh_grads=False,
))
_register(OpDef(
    "square", 1, _same, _ufunc(np.square),
    lambda c, x, y, ctx, ow: [2.0 * c[0] * x[0]],
    DependencyMode.USE_IN, inplace=(0, 0),
))
_register(OpDef(
    "sqrt", 1, _same, _ufunc(np.sqrt),
    lambda c, x, y, ctx, ow: [c[0] / (2.0 * y[0])],
    DependencyMode.USE_OUT, inplace=(0, 0),
))
_register(OpDef(
    "exp", 1, _same, _ufunc(np.exp),
    lambda c, x, y, ctx, ow: [c[0] * y[0]],
    DependencyMode.USE_OUT, inplace=(0, 0),
))
_register(OpDef(
    "log", 1, _same, _ufunc(np.log),
    lambda c, x, y, ctx, ow: [c[0] / x[0]],
    DependencyMode.USE_IN, inplace=(0, 0),
))
_register(OpDef(
    "abs", 1, _same, _ufunc(np.abs),
    lambda c, x, y, ctx, ow: [c[0] * np.sign(x[0])],
    DependencyMode.USE_IN, inplace=(0, 0),
))
_register(OpDef(
    "sum", 1, lambda s: [(1, 1)],
    lambda x, out: (np.full((1, 1), x[0].sum(), dtype=x[0].dtype),),
    lambda c, x, y, ctx, ow: [np.full(ctx.in_shapes[0], c[0][0, 0], dtype=c[0].dtype)],
    DependencyMode.USE_IN, retain_inputs=(),
))


def _concat_shapes(s):
    rows = {sh[0] for sh in s}
    if len(rows) != 1:
        raise ShapeError(f"concat needs equal row counts, got {[tuple(x) for x in s]}")
    return [(s[0][0], sum(sh[1] for sh in s))]


def _concat_bwd(c, x, y, ctx, ow):
    grads, c0 = [], 0
    for sh in ctx.in_shapes:
        grads.append(c[0][:, c0:c0 + sh[1]].copy())
        c0 += sh[1]
    return grads


_register(OpDef(
    "concat", 1, _concat_shapes,
    lambda x, out: (np.concatenate(x, axis=1),),
    _concat_bwd, DependencyMode.USE_IN, retain_inputs=(), variadic=True,
))


def _reshape_shapes(s, shape):
    shape = tuple(shape)
    if len(shape) != 2 or shape[0] * shape[1] != s[0][0] * s[0][1]:
        raise ShapeError(f"cannot reshape {s[0]} to {shape}")
    return [shape]


_register(OpDef(
    "reshape", 1, _reshape_shapes,
    lambda x, out, shape: (x[0].reshape(shape).copy(),),
    lambda c, x, y, ctx, ow: [c[0].reshape(ctx.in_shapes[0]).copy()],
    DependencyMode.USE_IN, retain_inputs=(),
))
_register(OpDef(
    "transpose", 1, lambda s: [(s[0][1], s[0][0])],
    lambda x, out: (np.ascontiguousarray(x[0].T),),
    lambda c, x, y, ctx, ow: [c[0].T.copy()],
    DependencyMode.USE_IN, retain_inputs=(),
))


def _diag_shapes(s):
    return [(_square(s[0], "diag operand"), 1)]


def _diag_bwd(c, x, y, ctx, ow):
    n = ctx.in_shapes[0][0]
    g = np.zeros((n, n), dtype=c[0].dtype)
    g[np.arange(n), np.arange(n)] = c[0][:, 0]
    return [g]


_register(OpDef(
    "diag", 1, _diag_shapes,
    lambda x, out: (np.diagonal(x[0]).reshape(-1, 1).copy(),),
    _diag_bwd, DependencyMode.USE_IN, retain_inputs=(),
))


def _outer_add_shapes(s):
    if s[0][1] != 1 or s[1][1] != 1:
        raise ShapeError(f"outer_add takes two columns, got {s[0]} and {s[1]}")
    return [(s[0][0], s[1][0])]


_register(OpDef(
    "outer_add", 1, _outer_add_shapes,
    lambda x, out: (x[0] + x[1].T,),
    lambda c, x, y, ctx, ow: [c[0].sum(axis=1, keepdims=True), c[0].sum(axis=0).reshape(-1, 1)],
    DependencyMode.USE_IN, retain_inputs=(),
))


def _chol_param_fwd(x, out):
    # lower triangle as given, diagonal exponentiated: always a valid Cholesky factor
    a = x[0]
    res = np.tril(a, -1)
    idx = np.arange(a.shape[0])
    res[idx, idx] = np.exp(a[idx, idx])
    return (res,)


def _chol_param_bwd(c, x, y, ctx, ow):
    g = np.tril(c[0], -1)
    idx = np.arange(g.shape[0])
    g[idx, idx] = c[0][idx, idx] * y[0][idx, idx]
    return [g]


_register(OpDef(
    "chol_param", 1, _same_square, _chol_param_fwd, _chol_param_bwd, DependencyMode.USE_OUT,
))


def _jitter_fwd(x, out, rel=1e-10):
    a = x[0]
    n = a.shape[0]
    res = a.copy() if out is None else out
    shift = rel * float(np.trace(a)) / n
    idx = np.arange(n)
    res[idx, idx] += shift
    return (res,)


def _jitter_bwd(c, x, y, ctx, ow):
    # out = A + (rel / n) tr(A) I, so Abar = Obar + (rel / n) tr(Obar) I
    g = c[0].copy()
    n = g.shape[0]
    idx = np.arange(n)
    g[idx, idx] += ctx.flags.get("rel", 1e-10) * float(np.trace(c[0])) / n
    return [g]


_register(OpDef(
    "add_jitter", 1, _same_square, _jitter_fwd, _jitter_bwd,
    DependencyMode.USE_IN, retain_inputs=(), inplace=(0, 0),
))
