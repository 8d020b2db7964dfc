"""Dense matrix storage and the elementwise helper transforms.

A *matrix* is a 2-D, C-contiguous (row-major) ``float64`` or ``float32``
numpy array.  Triangular and symmetric matrices are always stored as full
squares.  A *batch* is a 3-D array whose leading axis indexes independent
matrices; every slice ``X[b]`` is a zero-copy matrix view.

Helpers that produce a square result take an ``out`` argument.  Passing the
input itself as ``out`` runs the transform in place without allocating.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, PrecisionError, ShapeError

__all__ = [
    "PRECISIONS",
    "ToleranceConfig",
    "as_matrix",
    "as_batch",
    "check_square",
    "common_dtype",
    "copyltu",
    "copyutl",
    "tri_extract",
    "tril",
    "triu",
    "sym",
    "diag",
    "eye",
    "hadamard",
    "map_batch",
    "read_csv",
    "write_csv",
]

PRECISIONS = {"double": np.float64, "single": np.float32}


def precision_dtype(precision) -> np.dtype:
    if isinstance(precision, str):
        try:
            return np.dtype(PRECISIONS[precision])
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}; expected 'double' or 'single'") from None
    dt = np.dtype(precision)
    if dt not in (np.float64, np.float32):
        raise PrecisionError(f"unsupported dtype {dt}")
    return dt


@dataclass(frozen=True)
class ToleranceConfig:
    """Numerical tolerances used by the backward passes and by gradient checks.

    ``eps_gap`` guards divisions by eigenvalue (singular value) differences.
    The remaining fields drive the finite difference harness.
    """

    eps_gap: float = 1e-8
    fd_step: float = 1e-6
    grad_rtol: float = 1e-5
    grad_atol: float = 1e-7
    min_gap_resample: float = 1e-3

    def __post_init__(self):
        for name in ("eps_gap", "fd_step", "grad_rtol", "grad_atol", "min_gap_resample"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ToleranceConfig.{name} must be strictly positive")

    @classmethod
    def for_dtype(cls, dtype) -> "ToleranceConfig":
        if np.dtype(dtype) == np.float32:
            return cls(eps_gap=1e-4, grad_rtol=1e-3, grad_atol=1e-4)
        return cls()


def as_matrix(x, dtype=None, name="matrix") -> np.ndarray:
    """Validate user input and return it as a row-major matrix.

    Integer or list input is converted to ``float64`` unless ``dtype`` is
    given.  Non-finite entries are rejected.
    """
    arr = np.asarray(x)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
    arr = np.ascontiguousarray(arr, dtype=precision_dtype(dtype))
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def as_batch(x, dtype=None, name="batch") -> np.ndarray:
    arr = np.asarray(x)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
    arr = np.ascontiguousarray(arr, dtype=precision_dtype(dtype))
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be 3-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def check_square(x, name="matrix"):
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {x.shape}")
    return x.shape[0]


def common_dtype(*arrays) -> np.dtype:
    dtypes = {np.dtype(a.dtype) for a in arrays if a is not None}
    if len(dtypes) > 1:
        raise PrecisionError(f"operands mix precisions: {sorted(str(d) for d in dtypes)}")
    dt = dtypes.pop() if dtypes else np.dtype(np.float64)
    if dt not in (np.float64, np.float32):
        raise PrecisionError(f"unsupported dtype {dt}")
    return dt


def _square_out(x, out, name):
    n = check_square(x, name)
    if out is None:
        out = x.copy()
    elif out is not x:
        if out.shape != x.shape:
            raise ShapeError(f"out has shape {out.shape}, expected {x.shape}")
        out[...] = x
    return n, out


def copyltu(x, out=None):
    """Symmetric matrix whose upper triangle mirrors the lower triangle of ``x``."""
    n, out = _square_out(x, out, "copyltu input")
    for i in range(1, n):
        out[:i, i] = out[i, :i]
    return out


def copyutl(x, out=None):
    """Symmetric matrix whose lower triangle mirrors the upper triangle of ``x``."""
    n, out = _square_out(x, out, "copyutl input")
    for i in range(1, n):
        out[i, :i] = out[:i, i]
    return out


def tril(x, k=0, out=None):
    """Zero everything above the ``k``-th diagonal."""
    n, out = _square_out(x, out, "tril input")
    for i in range(n):
        out[i, max(i + k + 1, 0):] = 0
    return out


def triu(x, k=0, out=None):
    n, out = _square_out(x, out, "triu input")
    for i in range(n):
        out[i, : max(min(i + k, n), 0)] = 0
    return out


def sym(x, out=None):
    """``(x + x.T) / 2``.  Exactly symmetric; idempotent on symmetric input."""
    n, out = _square_out(x, out, "sym input")
    for i in range(1, n):
        v = 0.5 * (out[i, :i] + out[:i, i])
        out[i, :i] = v
        out[:i, i] = v
    return out


def diag(x):
    check_square(x, "diag input")
    return np.diagonal(x).copy()


def tri_extract(x, part="lower", mode="mask"):
    """Extract structure from a square matrix.

    Parameters
    ----------
    part : {"lower", "upper"}
        Which triangle ``mode="mask"`` keeps.  Ignored by the other modes.
    mode : {"mask", "sym", "diag"}
        ``mask`` zeroes the opposite strict triangle, ``sym`` symmetrizes and
        ``diag`` returns the main diagonal as a vector.
    """
    if part not in ("lower", "upper"):
        raise ValueError(f"part must be 'lower' or 'upper', got {part!r}")
    if mode == "mask":
        return tril(x) if part == "lower" else triu(x)
    if mode == "sym":
        return sym(x)
    if mode == "diag":
        return diag(x)
    raise ValueError(f"mode must be 'mask', 'sym' or 'diag', got {mode!r}")


def eye(n, precision="double") -> np.ndarray:
    if int(n) < 1:
        raise ShapeError(f"identity size must be >= 1, got {n}")
    return np.eye(int(n), dtype=precision_dtype(precision))


def hadamard(x, y):
    if x.shape != y.shape:
        raise ShapeError(f"hadamard operands differ in shape: {x.shape} vs {y.shape}")
    common_dtype(x, y)
    return np.multiply(x, y)


def map_batch(fn, *arrays, threads=1, **kwargs):
    """Apply a matrix operator independently to every slice of 3-D inputs.

    ``fn`` receives 2-D views and may return an array or a tuple of arrays;
    the results are stacked along a new leading axis.  Parallel execution over
    slices does not change the results, since slices share no state.
    """
    nb = arrays[0].shape[0]
    for a in arrays:
        if a.ndim != 3 or a.shape[0] != nb:
            raise ShapeError("batched operands must be 3-D with a common leading dimension")

    def one(b):
        return fn(*(a[b] for a in arrays), **kwargs)

    if threads > 1 and nb > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(nb)))
    else:
        results = [one(b) for b in range(nb)]
    if isinstance(results[0], tuple):
        return tuple(np.stack(parts) for parts in zip(*results))
    return np.stack(results)


def write_csv(path, x):
    """Write a matrix as CSV rows; values round-trip exactly."""
    np.savetxt(path, np.atleast_2d(x), delimiter=",", fmt="%.17g")


def read_csv(path, dtype=np.float64) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", dtype=dtype, ndmin=2)
    return as_matrix(data, dtype=dtype, name=str(path))
