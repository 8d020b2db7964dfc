"""Workspace accounting.

Kernels and backward passes obtain every temporary buffer through
:func:`temp` and every declared result through :func:`output`.  Outside of an
:func:`accounting` block these are plain ``np.empty`` calls; inside one, each
request is logged so tests can assert the memory budgets of the operators.

Scratch buffers are split in two kinds: *matrix* temporaries (2-D, shaped like
an operand) and *vector* scratch (1-D, e.g. Householder scalars).  Budgets
such as "no auxiliary matrices" refer to the former.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Allocation", "WorkspaceLog", "accounting", "temp", "output", "scratch"]


@dataclass(frozen=True)
class Allocation:
    kind: str  # "temp" | "output" | "scratch"
    tag: str
    shape: tuple

    @property
    def reals(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass
class WorkspaceLog:
    allocations: list = field(default_factory=list)

    def _of(self, kind):
        return [a for a in self.allocations if a.kind == kind]

    @property
    def temporaries(self):
        return self._of("temp")

    @property
    def outputs(self):
        return self._of("output")

    @property
    def scratch(self):
        return self._of("scratch")

    @property
    def matrix_temporaries(self):
        return [a for a in self.temporaries if len(a.shape) >= 2]

    @property
    def auxiliary_reals(self) -> int:
        """Reals requested beyond the declared outputs."""
        return sum(a.reals for a in self.temporaries) + sum(a.reals for a in self.scratch)

    def clear(self):
        self.allocations.clear()


_active: contextvars.ContextVar = contextvars.ContextVar("difflinalg_workspace", default=None)


@contextlib.contextmanager
def accounting():
    """Log all workspace requests made inside the block."""
    log = WorkspaceLog()
    token = _active.set(log)
    try:
        yield log
    finally:
        _active.reset(token)


def _record(kind, tag, shape):
    log = _active.get()
    if log is not None:
        log.allocations.append(Allocation(kind, tag, tuple(int(s) for s in shape)))


def temp(shape, dtype, tag="temp"):
    """Auxiliary 2-D (or larger) buffer, freed when the caller returns."""
    _record("temp", tag, shape)
    return np.empty(shape, dtype=dtype)


def scratch(shape, dtype, tag="scratch"):
    """Auxiliary vector-sized buffer."""
    if np.ndim(shape) == 0:
        shape = (shape,)
    _record("scratch", tag, shape)
    return np.empty(shape, dtype=dtype)


def output(shape, dtype, tag="output"):
    """Buffer for a declared result of an operator."""
    _record("output", tag, shape)
    return np.empty(shape, dtype=dtype)
