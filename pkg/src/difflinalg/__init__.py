"""Differentiable dense linear algebra.

``kernels`` holds the forward operators, ``adjoints`` their backward passes,
``tape`` a small reverse-mode engine over both, ``gradcheck`` the finite
difference harness and ``models`` the GP, sparse GP, Bayesian linear
regression and Kalman filter criteria.
"""

from . import adjoints, dense, errors, gradcheck, kernels, models, tape, workspace
from .dense import ToleranceConfig
from .kernels import get_backend, set_backend, use_backend

__version__ = "0.1.0"

__all__ = [
    "adjoints",
    "dense",
    "errors",
    "gradcheck",
    "kernels",
    "models",
    "tape",
    "workspace",
    "ToleranceConfig",
    "get_backend",
    "set_backend",
    "use_backend",
]
