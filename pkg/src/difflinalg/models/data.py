"""CSV ingestion for the fitting demos."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..errors import DataError

__all__ = ["Dataset", "load_csv", "standardize"]


@dataclass
class Dataset:
    names: list
    X: np.ndarray  # n x d features
    y: np.ndarray  # n targets
    mean: np.ndarray
    scale: np.ndarray


def standardize(Z):
    """Column-wise zero mean and unit standard deviation; constant columns are only centred."""
    Z = np.asarray(Z, dtype=np.float64)
    mean = Z.mean(axis=0)
    scale = Z.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (Z - mean) / scale, mean, scale


def load_csv(path, target=-1, normalize=True) -> Dataset:
    """Read a headed CSV of numeric columns; ``target`` picks the target column.

    With ``target=None`` every column is a feature and ``y`` is empty.

    Raises
    ------
    DataError
        For an empty file, a ragged row or a non-numeric cell, with its line.
    FileNotFoundError
        If ``path`` does not exist.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    names = [c.strip() for c in rows[0]]
    if len(names) < 1:
        raise DataError("header has no columns", line=1)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(names):
            raise DataError(f"expected {len(names)} fields, got {len(row)}", line=lineno)
        try:
            vals = [float(c) for c in row]
        except ValueError as e:
            raise DataError(f"non-numeric value ({e})", line=lineno) from None
        if not np.all(np.isfinite(vals)):
            raise DataError("non-finite value", line=lineno)
        data.append(vals)
    if not data:
        raise DataError(f"{path}: no data rows")
    Z = np.array(data)
    mean = np.zeros(Z.shape[1])
    scale = np.ones(Z.shape[1])
    if normalize:
        Z, mean, scale = standardize(Z)
    if target is None:
        return Dataset(names, Z, np.empty(0), mean, scale)
    tcol = target % Z.shape[1]
    X = np.delete(Z, tcol, axis=1)
    return Dataset(names, X, Z[:, tcol].copy(), mean, scale)
