"""Forward models and test data for deblurring, completion, tomography and superresolution."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .dictionary import PatchGeometry
from .linop import (
    LinearOperator,
    SparseOperator,
    StackOperator,
    fd_patch,
    fd_patch_border,
    fd_pixel,
    gaussian_blur_operator,
    selection_operator,
)

__all__ = [
    "NoiseSpec",
    "ProblemInstance",
    "add_noise",
    "synthetic_image",
    "shepp_logan",
    "SHEPP_LOGAN_ELLIPSES",
    "parallel_beam_projector",
    "rotation_operator",
    "restriction_operator",
    "build_deblurring",
    "build_completion",
    "build_tomography",
    "build_superresolution",
]


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be non-negative")


@dataclass
class ProblemInstance:
    C: LinearOperator
    b: np.ndarray
    y_true: np.ndarray
    L: LinearOperator
    mu: float
    geom: PatchGeometry
    name: str = ""

    def __post_init__(self):
        if self.C.n_cols != self.y_true.size:
            raise ValueError("forward operator and ground truth disagree in size")
        if self.b.size != self.C.n_rows:
            raise ValueError("observations and forward operator disagree in size")
        if np.any(self.y_true < 0):
            raise ValueError("ground truth must be non-negative")

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.geom.M, self.geom.N)


def add_noise(b_clean, spec: NoiseSpec) -> np.ndarray:
    """Add white Gaussian noise scaled so that ``||noise|| / ||b_clean|| == spec.level``."""
    b_clean = np.asarray(b_clean, dtype=np.float64)
    if spec.level == 0:
        return b_clean.copy()
    e = np.random.default_rng(spec.seed).standard_normal(b_clean.size)
    return b_clean + spec.level * np.linalg.norm(b_clean) * e / np.linalg.norm(e)


def synthetic_image(N: int, seed: int = 0, n_blobs: int = 12) -> np.ndarray:
    """Smooth strictly positive test image in ``[0.05, 1]`` built from Gaussian blobs and a ramp."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:N, 0:N] / N
    img = 0.3 * xx + 0.2 * yy
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, 1, 2)
        w = rng.uniform(0.04, 0.2)
        img += rng.uniform(-0.6, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * w * w))
    img -= img.min()
    img /= img.max()
    return 0.05 + 0.95 * img


# (intensity, semi-axis x, semi-axis y, center x, center y, rotation in degrees)
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def shepp_logan(N: int, ellipses=SHEPP_LOGAN_ELLIPSES) -> np.ndarray:
    """Rasterize an ellipse phantom on ``[-1, 1]^2`` at pixel centers (row 0 at the top)."""
    if N < 16:
        raise ValueError("phantom needs N >= 16")
    coords = (2.0 * np.arange(N) + 1.0 - N) / N
    x = coords[None, :]
    y = -coords[:, None]
    img = np.zeros((N, N))
    for rho, ax, ay, x0, y0, deg in ellipses:
        phi = math.radians(deg)
        c, s = math.cos(phi), math.sin(phi)
        dx, dy = x - x0, y - y0
        u = dx * c + dy * s
        v = -dx * s + dy * c
        img += np.where((u / ax) ** 2 + (v / ay) ** 2 <= 1.0, rho, 0.0)
    return np.clip(img, 0.0, 1.0)


def parallel_beam_projector(N: int, n_rays: int, angles_deg: Sequence[float]) -> SparseOperator:
    """Exact ray/pixel intersection lengths for a parallel-beam scanner (Siddon).

    The image occupies ``[-N/2, N/2]^2`` with unit pixels. At angle ``theta``
    ray ``k`` is the line ``t_k n + s d`` with normal ``n = (cos, sin)``,
    direction ``d = (-sin, cos)`` and offsets ``t_k`` equispaced over a
    detector of width ``sqrt(2) N``; angle 0 therefore integrates image
    columns. Row ``k + a * n_rays`` holds ray ``k`` at angle ``a``.
    """
    if n_rays < 1:
        raise ValueError("need at least one ray")
    angles = np.asarray(angles_deg, dtype=np.float64)
    if np.any(angles < 0) or np.any(angles >= 180):
        raise ValueError("angles must lie in [0, 180)")
    width = math.sqrt(2.0) * N
    t = (np.arange(n_rays) - (n_rays - 1) / 2.0) * (width / n_rays)
    grid = -N / 2.0 + np.arange(N + 1)
    half = N / 2.0
    rows, cols, vals = [], [], []
    for a, deg in enumerate(angles):
        th = math.radians(deg)
        nx, ny = math.cos(th), math.sin(th)
        dx, dy = -ny, nx
        tx, ty = t * nx, t * ny
        crossings = []
        if abs(dx) > 1e-12:
            crossings.append((grid[None, :] - tx[:, None]) / dx)
        if abs(dy) > 1e-12:
            crossings.append((grid[None, :] - ty[:, None]) / dy)
        S = np.sort(np.concatenate(crossings, axis=1), axis=1)
        length = np.diff(S, axis=1)
        mid = 0.5 * (S[:, 1:] + S[:, :-1])
        px = tx[:, None] + mid * dx
        py = ty[:, None] + mid * dy
        col = np.floor(px + half).astype(np.int64)
        row = np.floor(half - py).astype(np.int64)
        ok = (length > 1e-12) & (col >= 0) & (col < N) & (row >= 0) & (row < N)
        ray_idx = np.broadcast_to(np.arange(n_rays)[:, None], ok.shape)
        rows.append(ray_idx[ok] + a * n_rays)
        cols.append(row[ok] + col[ok] * N)
        vals.append(length[ok])
    shape = (n_rays * len(angles), N * N)
    if rows:
        mat = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        )
    else:
        mat = sp.csr_matrix(shape)
    return SparseOperator(mat)


def rotation_operator(N: int, angle_deg: float) -> sp.csr_matrix:
    """Bilinear resampling that rotates an ``N x N`` image counterclockwise about its upper-left pixel.

    Samples falling outside the image contribute zero.
    """
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    cc, rr = np.meshgrid(np.arange(N, dtype=np.float64), np.arange(N, dtype=np.float64))
    rr = rr.ravel(order="F")
    cc = cc.ravel(order="F")
    src_r = cc * s + rr * c
    src_c = cc * c - rr * s
    r0 = np.floor(src_r)
    c0 = np.floor(src_c)
    fr = src_r - r0
    fc = src_c - c0
    out_idx = np.arange(N * N)
    rows, cols, vals = [], [], []
    for dr, dc, w in (
        (0, 0, (1 - fr) * (1 - fc)),
        (1, 0, fr * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 1, fr * fc),
    ):
        ri = r0 + dr
        ci = c0 + dc
        ok = (w > 0) & (ri >= 0) & (ri < N) & (ci >= 0) & (ci < N)
        rows.append(out_idx[ok])
        cols.append((ri[ok] + ci[ok] * N).astype(np.int64))
        vals.append(w[ok])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N * N, N * N)
    )


def restriction_operator(N: int, factor: int) -> sp.csr_matrix:
    """Average non-overlapping ``factor x factor`` blocks of a column-major ``N x N`` image."""
    if factor < 1 or N % factor:
        raise ValueError(f"factor {factor} does not divide {N}")
    n = N // factor
    R1 = sp.csr_matrix(
        (np.full(N, 1.0 / factor), (np.arange(N) // factor, np.arange(N))), shape=(n, N)
    )
    return sp.kron(R1, R1, format="csr")


def _square_image(image, N):
    if image is None:
        return synthetic_image(N)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square image, got shape {image.shape}")
    if N is not None and image.shape[0] != N:
        raise ValueError(f"image is {image.shape[0]}x{image.shape[0]}, expected {N}x{N}")
    return image


def build_deblurring(
    image=None,
    N: int | None = 256,
    bandwidth: int = 3,
    sigma: float = 4.0,
    beta: float = 1e-4,
    mu: float = 1e-4,
    patch: tuple[int, int] = (16, 16),
    seed: int = 0,
) -> ProblemInstance:
    y = _square_image(image, N)
    n = y.shape[0]
    C = gaussian_blur_operator(n, bandwidth, sigma)
    y_true = y.ravel(order="F")
    b = add_noise(C.apply(y_true), NoiseSpec(beta, seed))
    geom = PatchGeometry(n, n, *patch)
    return ProblemInstance(C, b, y_true, fd_pixel(n, n), mu, geom, "deblur")


def build_completion(
    image=None,
    N: int | None = 128,
    remove_frac: float = 0.6,
    mu: float = 1e-4,
    patch: tuple[int, int] = (16, 16),
    seed: int = 0,
) -> ProblemInstance:
    if not 0 <= remove_frac < 1:
        raise ValueError("remove_frac must lie in [0, 1)")
    y = _square_image(image, N)
    n = y.shape[0]
    npix = n * n
    n_kept = int(round((1.0 - remove_frac) * npix))
    kept = np.sort(np.random.default_rng(seed).choice(npix, size=n_kept, replace=False))
    C = selection_operator(npix, kept)
    y_true = y.ravel(order="F")
    geom = PatchGeometry(n, n, *patch)
    return ProblemInstance(C, C.apply(y_true), y_true, fd_pixel(n, n), mu, geom, "complete")


def build_tomography(
    N: int = 256,
    mu: float = 1.0,
    n_angles: int = 100,
    image=None,
    noise: NoiseSpec | None = None,
    patch: tuple[int, int] = (16, 16),
) -> ProblemInstance:
    y = shepp_logan(N) if image is None else _square_image(image, N)
    n_rays = int(math.floor(math.sqrt(2.0) * N))
    angles = np.linspace(0.0, 179.0, n_angles)
    C = parallel_beam_projector(N, n_rays, angles)
    y_true = y.ravel(order="F")
    b = C.apply(y_true)
    if noise is not None:
        b = add_noise(b, noise)
    geom = PatchGeometry(N, N, *patch)
    return ProblemInstance(C, b, y_true, fd_patch(N, N, *patch), mu, geom, "tomo")


def build_superresolution(
    image=None,
    N: int | None = 512,
    n_frames: int = 10,
    factor: int = 8,
    mu: float = 1e-2,
    angle_step: float = 0.5,
    patch: tuple[int, int] = (16, 16),
) -> ProblemInstance:
    """Stack of ``R S_i`` with ``S_i`` a rotation by ``i * angle_step`` degrees (``S_0`` is the identity)."""
    y = _square_image(image, N)
    n = y.shape[0]
    if n % factor:
        raise ValueError(f"factor {factor} does not divide {n}")
    R = restriction_operator(n, factor)
    frames = [
        (1.0, SparseOperator(R @ rotation_operator(n, i * angle_step))) for i in range(n_frames)
    ]
    C = StackOperator(frames)
    y_true = y.ravel(order="F")
    geom = PatchGeometry(n, n, *patch)
    return ProblemInstance(
        C, C.apply(y_true), y_true, fd_patch_border(n, n, *patch), mu, geom, "superres"
    )
