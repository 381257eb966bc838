"""Patch dictionaries: patch extraction, the global dictionary operator, file I/O and ADMM learning."""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .linop import DimensionError, LinearOperator

__all__ = [
    "PatchGeometry",
    "Dictionary",
    "DictLearnConfig",
    "DictLearnResult",
    "DictionaryFormatError",
    "patchify",
    "unpatchify",
    "extract_patches",
    "DictionaryOperator",
    "global_dictionary_operator",
    "learn_dictionary_admm",
    "save_dictionary",
    "load_dictionary",
]

MAGIC = b"NNDICT1\n"
_HEADER = struct.Struct("<III")
_MAX_PAYLOAD = 2**31


@dataclass(frozen=True)
class PatchGeometry:
    M: int
    N: int
    p: int
    q: int

    def __post_init__(self):
        if min(self.M, self.N, self.p, self.q) < 1:
            raise ValueError("image and patch dimensions must be positive")
        if self.M % self.p or self.N % self.q:
            raise ValueError(
                f"patch size {self.p}x{self.q} does not divide image size {self.M}x{self.N}"
            )

    @property
    def r(self) -> int:
        """Number of non-overlapping patches."""
        return (self.M // self.p) * (self.N // self.q)

    @property
    def pq(self) -> int:
        return self.p * self.q


class Dictionary:
    """Non-negative patch basis: ``D`` is ``pq x s`` with entries in ``[0, 1]``, one atom per column."""

    def __init__(self, D, p: int, q: int):
        D = np.array(D, dtype=np.float64)
        if D.ndim != 2 or D.shape[0] != p * q:
            raise ValueError(f"dictionary must have p*q={p * q} rows, got shape {D.shape}")
        if not np.all((D >= 0) & (D <= 1)):
            raise ValueError("dictionary entries must lie in [0, 1]")
        if np.any(np.all(D == 0, axis=0)):
            raise ValueError("dictionary has an all-zero atom")
        D.setflags(write=False)
        self.D = D
        self.p = int(p)
        self.q = int(q)

    @property
    def s(self) -> int:
        return self.D.shape[1]

    def __repr__(self):
        return f"Dictionary(p={self.p}, q={self.q}, s={self.s})"


@dataclass
class DictLearnConfig:
    s: int
    beta: float = 0.1
    rho: float = 1.0
    iters: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("need at least one atom")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.iters < 1:
            raise ValueError("iters must be at least 1")


class DictLearnResult(NamedTuple):
    dictionary: Dictionary
    coefficients: np.ndarray
    history: list[dict]


class DictionaryFormatError(ValueError):
    pass


def _check_image(image, geom: PatchGeometry) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (geom.M, geom.N):
        raise DimensionError(f"image has shape {image.shape}, geometry expects {(geom.M, geom.N)}")
    return image


def patchify(image, geom: PatchGeometry) -> np.ndarray:
    """Stack the column-major vectorized ``p x q`` blocks as columns, blocks in column-major grid order."""
    image = _check_image(image, geom)
    mp, nq = geom.M // geom.p, geom.N // geom.q
    blocks = image.reshape(mp, geom.p, nq, geom.q)
    return blocks.transpose(3, 1, 2, 0).reshape(geom.pq, geom.r)


def unpatchify(patches, geom: PatchGeometry) -> np.ndarray:
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape != (geom.pq, geom.r):
        raise DimensionError(
            f"patch matrix has shape {patches.shape}, geometry expects {(geom.pq, geom.r)}"
        )
    mp, nq = geom.M // geom.p, geom.N // geom.q
    blocks = patches.reshape(geom.q, geom.p, nq, mp).transpose(3, 1, 2, 0)
    return blocks.reshape(geom.M, geom.N)


def extract_patches(image, p: int, q: int, stride: int | tuple[int, int] | None = None) -> np.ndarray:
    """All ``p x q`` patches on a regular grid with the given stride, as columns.

    ``stride=None`` means one patch (non-overlapping); smaller strides give
    overlapping training patches. Patches are ordered column-major over their
    top-left corners.
    """
    image = np.asarray(image, dtype=np.float64)
    M, N = image.shape
    if stride is None:
        stride = (p, q)
    elif np.isscalar(stride):
        stride = (int(stride), int(stride))
    si, sj = stride
    if si < 1 or sj < 1:
        raise ValueError("stride must be positive")
    rows = range(0, M - p + 1, si)
    cols = range(0, N - q + 1, sj)
    out = [image[i : i + p, j : j + q].ravel(order="F") for j in cols for i in rows]
    if not out:
        raise ValueError(f"image {M}x{N} is smaller than the patch {p}x{q}")
    return np.column_stack(out)


class DictionaryOperator(LinearOperator):
    """``G = P (I kron D)``: coefficients ``s x r`` (column-major) to a vectorized image.

    Neither the permutation nor the Kronecker product is formed; the map is
    ``x -> vec(unpatchify(D @ reshape(x, (s, r))))``.
    """

    kind = "dictionary-block"

    def __init__(self, dictionary: Dictionary, geom: PatchGeometry):
        if (dictionary.p, dictionary.q) != (geom.p, geom.q):
            raise DimensionError(
                f"dictionary patches are {dictionary.p}x{dictionary.q}, geometry uses {geom.p}x{geom.q}"
            )
        super().__init__(geom.M * geom.N, dictionary.s * geom.r)
        self.dictionary = dictionary
        self.geom = geom

    def _matvec(self, x):
        X = x.reshape(self.dictionary.s, self.geom.r, order="F")
        return unpatchify(self.dictionary.D @ X, self.geom).ravel(order="F")

    def _rmatvec(self, y):
        Y = y.reshape(self.geom.M, self.geom.N, order="F")
        return (self.dictionary.D.T @ patchify(Y, self.geom)).ravel(order="F")


def global_dictionary_operator(dictionary: Dictionary, geom: PatchGeometry) -> DictionaryOperator:
    return DictionaryOperator(dictionary, geom)


def learn_dictionary_admm(
    Ypatch, config: DictLearnConfig, patch_shape: tuple[int, int] | None = None
) -> DictLearnResult:
    """Non-negative sparse dictionary learning by scaled-form ADMM.

    Minimizes ``0.5 ||Y - U V||_F^2 + beta ||X||_1`` subject to ``U = D``,
    ``V = X``, ``D`` in the unit box and ``X >= 0``. Each sweep solves the
    two ridge-shifted least-squares problems for ``U`` and ``V``, projects
    onto the constraint sets for ``D`` and ``X`` and updates the scaled duals.

    ``history`` holds one dict per sweep with the data misfit and the
    constraint residuals ``||U - D||_F`` and ``||V - X||_F``. ``patch_shape``
    defaults to square patches when ``pq`` is a perfect square, else ``(pq, 1)``.
    """
    Y = np.asarray(Ypatch, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError("training patches must be a 2-D array")
    if np.any(Y < 0) or np.any(Y > 1):
        raise ValueError("training patches must have entries in [0, 1]")
    pq, n = Y.shape
    if patch_shape is None:
        side = int(round(pq**0.5))
        patch_shape = (side, side) if side * side == pq else (pq, 1)
    if patch_shape[0] * patch_shape[1] != pq:
        raise ValueError(f"patch shape {patch_shape} does not match {pq} rows")
    s, rho, beta = config.s, config.rho, config.beta
    rng = np.random.default_rng(config.seed)

    D = rng.uniform(0.0, 1.0, size=(pq, s))
    # least-squares coefficients for the random start, projected to the constraint set
    X = np.maximum(np.linalg.solve(D.T @ D + rho * np.eye(s), D.T @ Y), 0.0)
    U, V = D.copy(), X.copy()
    LU = np.zeros_like(D)
    LX = np.zeros_like(X)
    eye = np.eye(s)
    history = []
    for it in range(config.iters):
        U = np.linalg.solve(V @ V.T + rho * eye, V @ Y.T + rho * (D - LU).T).T
        V = np.linalg.solve(U.T @ U + rho * eye, U.T @ Y + rho * (X - LX))
        D = np.clip(U + LU, 0.0, 1.0)
        X = np.maximum(V + LX - beta / rho, 0.0)
        LU += U - D
        LX += V - X
        history.append(
            {
                "sweep": it + 1,
                "misfit": float(np.linalg.norm(Y - D @ X)),
                "objective": 0.5 * float(np.linalg.norm(Y - D @ X) ** 2) + beta * float(X.sum()),
                "primal_u": float(np.linalg.norm(U - D)),
                "primal_v": float(np.linalg.norm(V - X)),
            }
        )

    last = history[-1]
    if last["primal_u"] > 1e-3 or last["primal_v"] > 1e-3:
        warnings.warn(
            f"ADMM constraint residuals did not reach 1e-3 after {config.iters} sweeps: "
            f"||U-D||={last['primal_u']:.3g}, ||V-X||={last['primal_v']:.3g}",
            RuntimeWarning,
            stacklevel=2,
        )
    dead = np.max(np.abs(D), axis=0) < 1e-12
    if np.any(dead):
        D[:, dead] = 1.0 / pq
    return DictLearnResult(Dictionary(D, *patch_shape), X, history)


def save_dictionary(dictionary: Dictionary, path) -> None:
    """Write ``NNDICT1\\n``, then ``p, q, s`` as little-endian uint32, then ``D`` column-major float64."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(dictionary.p, dictionary.q, dictionary.s))
        fh.write(dictionary.D.astype("<f8").tobytes(order="F"))


def load_dictionary(path) -> Dictionary:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise DictionaryFormatError(f"{path}: not a dictionary file (bad magic)")
    head = raw[len(MAGIC) : len(MAGIC) + _HEADER.size]
    if len(head) != _HEADER.size:
        raise DictionaryFormatError(f"{path}: truncated header")
    p, q, s = _HEADER.unpack(head)
    count = p * q * s
    if count == 0 or count * 8 > _MAX_PAYLOAD:
        raise DictionaryFormatError(f"{path}: implausible shape p={p}, q={q}, s={s}")
    payload = raw[len(MAGIC) + _HEADER.size :]
    if len(payload) != count * 8:
        raise DictionaryFormatError(
            f"{path}: payload has {len(payload)} bytes, expected {count * 8}"
        )
    D = np.frombuffer(payload, dtype="<f8").reshape((p * q, s), order="F")
    if not np.all((D >= 0) & (D <= 1)):
        raise DictionaryFormatError(f"{path}: dictionary values outside [0, 1]")
    try:
        return Dictionary(D, p, q)
    except ValueError as exc:
        raise DictionaryFormatError(f"{path}: {exc}") from exc
