"""Reconstruction quality metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linop import LinearOperator

__all__ = ["MetricsReport", "rel_residual", "rel_error", "rel_sparsity"]


@dataclass
class MetricsReport:
    rel_residual: float
    rel_error: float
    rel_sparsity: float

    def as_lines(self) -> str:
        return (
            f"rel_residual={self.rel_residual!r}\n"
            f"rel_error={self.rel_error!r}\n"
            f"rel_sparsity={self.rel_sparsity!r}\n"
        )


def rel_residual(A: LinearOperator, x, b) -> float:
    """``||A x - b|| / ||b||``."""
    b = np.asarray(b, dtype=np.float64)
    nb = np.linalg.norm(b)
    if nb == 0:
        raise ValueError("relative residual is undefined for b = 0")
    return float(np.linalg.norm(A.apply(x) - b) / nb)


def rel_error(y_true, G: LinearOperator, x) -> float:
    """``||y_true - G x|| / ||y_true||``."""
    y_true = np.asarray(y_true, dtype=np.float64)
    ny = np.linalg.norm(y_true)
    if ny == 0:
        raise ValueError("relative error is undefined for an all-zero ground truth")
    return float(np.linalg.norm(y_true - G.apply(x)) / ny)


def rel_sparsity(x, y_true) -> float:
    """Exact-zero count ratio ``nnz(x) / nnz(y_true)``; below 1 means the coefficients are cheaper to store."""
    nz = np.count_nonzero(y_true)
    if nz == 0:
        raise ValueError("relative sparsity is undefined for an all-zero ground truth")
    return np.count_nonzero(x) / nz
