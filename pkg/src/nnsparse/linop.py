"""Matrix-free linear operators and the structured operators used by the imaging tasks.

All image vectors use column-major (Fortran) ordering: pixel ``(i, j)`` of an
``M x N`` image lives at index ``i + j * M``.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "DimensionError",
    "LinearOperator",
    "SparseOperator",
    "KroneckerOperator",
    "CompositionOperator",
    "StackOperator",
    "PermutationOperator",
    "SelectionOperator",
    "apply",
    "apply_adjoint",
    "to_dense",
    "identity",
    "gaussian_blur_operator",
    "blur_toeplitz_1d",
    "selection_operator",
    "fd_pixel",
    "fd_patch_border",
    "fd_patch",
    "tikhonov_augment",
    "export_matrix_market",
]

DEFAULT_DENSE_CAP = 10**7


class DimensionError(ValueError):
    """Raised when a vector or operator does not have the expected size."""


class LinearOperator:
    """Base class for a real linear map of shape ``(n_rows, n_cols)``.

    Subclasses implement ``_matvec`` and ``_rmatvec``; they may override
    ``_matmat``/``_rmatmat`` when a block product is cheaper than a loop.
    """

    kind = "abstract"

    def __init__(self, n_rows: int, n_cols: int):
        if n_rows < 0 or n_cols < 0:
            raise ValueError(f"invalid operator shape ({n_rows}, {n_cols})")
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.n_rows}x{self.n_cols}>"

    def _matvec(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _rmatvec(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _matmat(self, X: np.ndarray) -> np.ndarray:
        out = np.empty((self.n_rows, X.shape[1]))
        for j in range(X.shape[1]):
            out[:, j] = self._matvec(X[:, j])
        return out

    def _rmatmat(self, Y: np.ndarray) -> np.ndarray:
        out = np.empty((self.n_cols, Y.shape[1]))
        for j in range(Y.shape[1]):
            out[:, j] = self._rmatvec(Y[:, j])
        return out

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.n_cols:
            raise DimensionError(
                f"operator expects input of length {self.n_cols}, got shape {x.shape}"
            )
        return self._matvec(x)

    def apply_adjoint(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 1 or y.shape[0] != self.n_rows:
            raise DimensionError(
                f"adjoint expects input of length {self.n_rows}, got shape {y.shape}"
            )
        return self._rmatvec(y)

    def matmat(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.n_cols:
            raise DimensionError(
                f"operator expects {self.n_cols} rows, got shape {X.shape}"
            )
        return self._matmat(X)

    def rmatmat(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[0] != self.n_rows:
            raise DimensionError(
                f"adjoint expects {self.n_rows} rows, got shape {Y.shape}"
            )
        return self._rmatmat(Y)

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            return CompositionOperator(self, other)
        other = np.asarray(other)
        if other.ndim == 1:
            return self.apply(other)
        return self.matmat(other)


class SparseOperator(LinearOperator):
    """Explicit operator held in compressed sparse row storage.

    The row layout is exposed as ``row_offsets``, ``col_indices`` and
    ``values``; column indices are sorted and unique within each row. The
    adjoint is applied through the transposed view, so no second copy of the
    matrix is stored.
    """

    kind = "explicit-sparse"

    def __init__(self, matrix):
        csr = sp.csr_matrix(matrix, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        super().__init__(*csr.shape)
        self.matrix = csr

    @classmethod
    def from_csr(cls, n_rows, n_cols, row_offsets, col_indices, values) -> "SparseOperator":
        row_offsets = np.asarray(row_offsets, dtype=np.int64)
        col_indices = np.asarray(col_indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if row_offsets.shape != (n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows + 1")
        if np.any(np.diff(row_offsets) < 0) or row_offsets[0] != 0:
            raise ValueError("row_offsets must start at 0 and be non-decreasing")
        if row_offsets[-1] != len(col_indices) or len(col_indices) != len(values):
            raise ValueError("row_offsets[-1], col_indices and values disagree in length")
        if len(col_indices) and (col_indices.min() < 0 or col_indices.max() >= n_cols):
            raise ValueError("column index out of range")
        for i in range(n_rows):
            cols = col_indices[row_offsets[i] : row_offsets[i + 1]]
            if np.any(np.diff(cols) <= 0):
                raise ValueError(f"column indices of row {i} are not strictly increasing")
        return cls(sp.csr_matrix((values, col_indices, row_offsets), shape=(n_rows, n_cols)))

    @property
    def row_offsets(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def _matvec(self, x):
        return self.matrix @ x

    def _rmatvec(self, y):
        return self.matrix.T @ y

    def _matmat(self, X):
        return np.asarray(self.matrix @ X)

    def _rmatmat(self, Y):
        return np.asarray(self.matrix.T @ Y)


class KroneckerOperator(LinearOperator):
    """``A (x) B`` applied through ``(A (x) B) vec(X) = vec(B X A^T)``."""

    kind = "kronecker"

    def __init__(self, A: LinearOperator, B: LinearOperator):
        super().__init__(A.n_rows * B.n_rows, A.n_cols * B.n_cols)
        self.A = A
        self.B = B

    def _matvec(self, x):
        X = x.reshape(self.B.n_cols, self.A.n_cols, order="F")
        Y = self.B._matmat(X)
        Z = self.A._matmat(np.ascontiguousarray(Y.T)).T
        return Z.ravel(order="F")

    def _rmatvec(self, y):
        Y = y.reshape(self.B.n_rows, self.A.n_rows, order="F")
        Z = self.B._rmatmat(Y)
        W = self.A._rmatmat(np.ascontiguousarray(Z.T)).T
        return W.ravel(order="F")


class CompositionOperator(LinearOperator):
    """``A @ B``: apply ``B`` first, then ``A``."""

    kind = "composition"

    def __init__(self, A: LinearOperator, B: LinearOperator):
        if A.n_cols != B.n_rows:
            raise DimensionError(
                f"cannot compose {A.n_rows}x{A.n_cols} with {B.n_rows}x{B.n_cols}"
            )
        super().__init__(A.n_rows, B.n_cols)
        self.A = A
        self.B = B

    def _matvec(self, x):
        return self.A._matvec(self.B._matvec(x))

    def _rmatvec(self, y):
        return self.B._rmatvec(self.A._rmatvec(y))

    def _matmat(self, X):
        return self.A._matmat(self.B._matmat(X))

    def _rmatmat(self, Y):
        return self.B._rmatmat(self.A._rmatmat(Y))


class StackOperator(LinearOperator):
    """Vertical stack ``[w_1 A_1; w_2 A_2; ...]`` of operators sharing a domain."""

    kind = "vertical-stack"

    def __init__(self, blocks: Iterable[tuple[float, LinearOperator]]):
        blocks = [(float(w), op) for w, op in blocks]
        if not blocks:
            raise ValueError("stack needs at least one block")
        n_cols = blocks[0][1].n_cols
        for _, op in blocks:
            if op.n_cols != n_cols:
                raise DimensionError(
                    f"stacked blocks disagree in column count: {op.n_cols} != {n_cols}"
                )
        super().__init__(sum(op.n_rows for _, op in blocks), n_cols)
        self.blocks = blocks
        self._offsets = np.cumsum([0] + [op.n_rows for _, op in blocks])

    def _matvec(self, x):
        return np.concatenate([w * op._matvec(x) for w, op in self.blocks])

    def _rmatvec(self, y):
        out = np.zeros(self.n_cols)
        for k, (w, op) in enumerate(self.blocks):
            if w != 0.0:
                out += w * op._rmatvec(y[self._offsets[k] : self._offsets[k + 1]])
        return out

    def _matmat(self, X):
        return np.vstack([w * op._matmat(X) for w, op in self.blocks])

    def _rmatmat(self, Y):
        out = np.zeros((self.n_cols, Y.shape[1]))
        for k, (w, op) in enumerate(self.blocks):
            if w != 0.0:
                out += w * op._rmatmat(Y[self._offsets[k] : self._offsets[k + 1]])
        return out


class PermutationOperator(LinearOperator):
    """``y[i] = x[perm[i]]`` for a permutation ``perm`` of ``range(n)``."""

    kind = "permutation"

    def __init__(self, perm: Sequence[int]):
        perm = np.asarray(perm, dtype=np.int64)
        n = perm.shape[0]
        if not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("index map is not a permutation")
        super().__init__(n, n)
        self.perm = perm

    def _matvec(self, x):
        return x[self.perm]

    def _rmatvec(self, y):
        out = np.empty_like(y)
        out[self.perm] = y
        return out

    def _matmat(self, X):
        return X[self.perm]

    def _rmatmat(self, Y):
        out = np.empty_like(Y)
        out[self.perm] = Y
        return out


class SelectionOperator(LinearOperator):
    """Rows ``kept`` of the ``n x n`` identity; the adjoint scatters with zero fill."""

    kind = "identity-subset"

    def __init__(self, n: int, kept: Sequence[int]):
        kept = np.asarray(kept, dtype=np.int64)
        if kept.ndim != 1:
            raise ValueError("kept indices must be a flat list")
        if kept.size and (kept[0] < 0 or kept[-1] >= n):
            raise ValueError(f"kept indices must lie in [0, {n})")
        if np.any(np.diff(kept) <= 0):
            raise ValueError("kept indices must be strictly increasing")
        super().__init__(kept.size, n)
        self.kept = kept

    def _matvec(self, x):
        return x[self.kept]

    def _rmatvec(self, y):
        out = np.zeros(self.n_cols)
        out[self.kept] = y
        return out

    def _matmat(self, X):
        return X[self.kept]

    def _rmatmat(self, Y):
        out = np.zeros((self.n_cols, Y.shape[1]))
        out[self.kept] = Y
        return out


def apply(op: LinearOperator, x) -> np.ndarray:
    """Return ``op @ x``."""
    return op.apply(x)


def apply_adjoint(op: LinearOperator, y) -> np.ndarray:
    """Return ``op.T @ y``."""
    return op.apply_adjoint(y)


def to_dense(op: LinearOperator, max_entries: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Materialize ``op`` column by column from ``apply(op, e_j)``."""
    if op.n_rows * op.n_cols > max_entries:
        raise MemoryError(
            f"dense {op.n_rows}x{op.n_cols} operator exceeds the cap of {max_entries} entries"
        )
    out = np.empty((op.n_rows, op.n_cols))
    e = np.zeros(op.n_cols)
    for j in range(op.n_cols):
        e[j] = 1.0
        out[:, j] = op.apply(e)
        e[j] = 0.0
    return out


def identity(n: int) -> SelectionOperator:
    return SelectionOperator(n, np.arange(n))


def blur_toeplitz_1d(n: int, bandwidth: int, sigma: float) -> sp.csr_matrix:
    """Symmetric banded Toeplitz matrix with first column ``exp(-k / (2 sigma^2))``, ``k < bandwidth``."""
    if not 1 <= bandwidth <= n:
        raise ValueError(f"bandwidth must satisfy 1 <= b <= n, got b={bandwidth}, n={n}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    t = np.exp(-np.arange(bandwidth) / (2.0 * sigma * sigma))
    offsets = list(range(-(bandwidth - 1), bandwidth))
    diags = [np.full(n - abs(k), t[abs(k)]) for k in offsets]
    return sp.diags(diags, offsets, shape=(n, n), format="csr")


def gaussian_blur_operator(n: int, bandwidth: int, sigma: float) -> KroneckerOperator:
    """Separable exponential blur on an ``n x n`` image: ``kron(C1, C1)``."""
    C1 = SparseOperator(blur_toeplitz_1d(n, bandwidth, sigma))
    return KroneckerOperator(C1, C1)


def selection_operator(n: int, kept: Sequence[int]) -> SelectionOperator:
    return SelectionOperator(n, kept)


def _pair_difference(M: int, N: int, di: int, dj: int, keep=None) -> sp.csr_matrix:
    """One row per pixel pair ``((i, j), (i + di, j + dj))``: ``+1`` on the second, ``-1`` on the first.

    Rows run over the first pixel in column-major order; ``keep(i, j)``
    optionally filters them.
    """
    jj, ii = np.meshgrid(np.arange(N - dj), np.arange(M - di))
    ii = ii.ravel(order="F")
    jj = jj.ravel(order="F")
    if keep is not None:
        mask = keep(ii, jj)
        ii, jj = ii[mask], jj[mask]
    first = ii + jj * M
    second = (ii + di) + (jj + dj) * M
    n_rows = first.size
    rows = np.repeat(np.arange(n_rows), 2)
    cols = np.column_stack([first, second]).ravel()
    vals = np.tile([-1.0, 1.0], n_rows)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, M * N))


def _check_patch_dims(M, N, p, q):
    if p < 1 or q < 1 or M % p or N % q:
        raise ValueError(f"patch size {p}x{q} does not divide image size {M}x{N}")


def fd_pixel(M: int, N: int) -> SparseOperator:
    """Differences between all horizontally, then all vertically, adjacent pixels."""
    if M < 2 or N < 2:
        raise ValueError(f"image must be at least 2x2, got {M}x{N}")
    horiz = _pair_difference(M, N, 0, 1)
    vert = _pair_difference(M, N, 1, 0)
    return SparseOperator(sp.vstack([horiz, vert], format="csr"))


def fd_patch_border(M: int, N: int, p: int, q: int) -> SparseOperator:
    """Differences between adjacent pixels that sit on opposite sides of a patch boundary."""
    _check_patch_dims(M, N, p, q)
    horiz = _pair_difference(M, N, 0, 1, keep=lambda i, j: (j + 1) % q == 0)
    vert = _pair_difference(M, N, 1, 0, keep=lambda i, j: (i + 1) % p == 0)
    return SparseOperator(sp.vstack([horiz, vert], format="csr"))


def fd_patch(M: int, N: int, p: int, q: int) -> SparseOperator:
    """Pixel-wise differences between every pair of edge-adjacent patches."""
    _check_patch_dims(M, N, p, q)
    horiz = _pair_difference(M, N, 0, q)
    vert = _pair_difference(M, N, p, 0)
    return SparseOperator(sp.vstack([horiz, vert], format="csr"))


def tikhonov_augment(
    A: LinearOperator,
    L: LinearOperator,
    mu: float,
    G: LinearOperator | None = None,
) -> tuple[StackOperator, int]:
    """Fold ``mu * ||L G x||^2`` into the least-squares term.

    Returns the stacked operator ``[A; sqrt(2 mu) L G]`` and the number of
    zeros to append to the right-hand side, so that
    ``0.5 * ||A~ x - [b; 0]||^2 == 0.5 * ||A x - b||^2 + mu * ||L G x||^2``.
    """
    if mu < 0:
        raise ValueError("mu must be non-negative")
    reg = L if G is None else CompositionOperator(L, G)
    if reg.n_cols != A.n_cols:
        raise DimensionError(
            f"regularizer acts on {reg.n_cols} unknowns, operator on {A.n_cols}"
        )
    return StackOperator([(1.0, A), (math.sqrt(2.0 * mu), reg)]), reg.n_rows


def export_matrix_market(op: SparseOperator, path) -> None:
    """Write an explicit sparse operator as a real general Matrix Market file."""
    scipy.io.mmwrite(str(path), op.matrix.tocoo(), field="real", symmetry="general")
