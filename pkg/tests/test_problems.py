import math

import numpy as np
import pytest

from nnsparse.linop import to_dense
from nnsparse.problems import (
    SHEPP_LOGAN_ELLIPSES,
    NoiseSpec,
    add_noise,
    build_completion,
    build_deblurring,
    build_superresolution,
    build_tomography,
    parallel_beam_projector,
    restriction_operator,
    rotation_operator,
    shepp_logan,
    synthetic_image,
)


def clipped_length(px0, py0, dx, dy, xmin, xmax, ymin, ymax):
    """Length of the line ``(px0, py0) + s (dx, dy)`` inside an axis-aligned box (Liang-Barsky)."""
    lo, hi = -math.inf, math.inf
    for p0, d, a, b in ((px0, dx, xmin, xmax), (py0, dy, ymin, ymax)):
        if abs(d) < 1e-15:
            if p0 < a or p0 > b:
                return 0.0
            continue
        s1, s2 = (a - p0) / d, (b - p0) / d
        lo, hi = max(lo, min(s1, s2)), min(hi, max(s1, s2))
    return max(hi - lo, 0.0) * math.hypot(dx, dy)


def brute_projector_row(N, t, deg):
    th = math.radians(deg)
    nx, ny = math.cos(th), math.sin(th)
    row = np.zeros(N * N)
    for i in range(N):
        for j in range(N):
            xmin, xmax = -N / 2 + j, -N / 2 + j + 1
            ymax, ymin = N / 2 - i, N / 2 - i - 1
            row[i + j * N] = clipped_length(t * nx, t * ny, -ny, nx, xmin, xmax, ymin, ymax)
    return row


def ray_offsets(N, n_rays):
    width = math.sqrt(2) * N
    return (np.arange(n_rays) - (n_rays - 1) / 2) * width / n_rays


# noise

def test_noise_zero_level():
    b = np.arange(5.0)
    np.testing.assert_array_equal(add_noise(b, NoiseSpec(0.0, 3)), b)


@pytest.mark.parametrize("level", [1e-4, 0.01, 0.5])
def test_noise_relative_level(level):
    b = np.random.default_rng(0).uniform(size=50)
    noisy = add_noise(b, NoiseSpec(level, 11))
    assert np.linalg.norm(noisy - b) / np.linalg.norm(b) == pytest.approx(level, rel=1e-12)


def test_noise_deterministic():
    b = np.linspace(1, 2, 30)
    np.testing.assert_array_equal(add_noise(b, NoiseSpec(0.1, 4)), add_noise(b, NoiseSpec(0.1, 4)))
    assert not np.array_equal(add_noise(b, NoiseSpec(0.1, 4)), add_noise(b, NoiseSpec(0.1, 5)))
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)


# synthetic image

def test_synthetic_image_range_and_determinism():
    img = synthetic_image(32, seed=2)
    assert img.shape == (32, 32)
    assert img.min() >= 0.05 - 1e-15 and img.max() <= 1.0 + 1e-15
    np.testing.assert_array_equal(img, synthetic_image(32, seed=2))


# deblurring

def test_deblurring_full_scale_shape_and_density():
    prob = build_deblurring(N=256)
    assert prob.C.shape == (65536, 65536)
    density = prob.C.A.nnz * prob.C.B.nnz / 65536**2
    assert density == pytest.approx(3.8e-4, rel=0.01)
    assert prob.L.n_rows == 2 * 256 * 255


def test_deblurring_constant_image_interior():
    prob = build_deblurring(np.full((8, 8), 0.5), N=8, beta=0.0, patch=(4, 4))
    blurred = prob.b.reshape(8, 8, order="F")
    C1_row = np.array([math.exp(-abs(k) / 32) for k in (-2, -1, 0, 1, 2)])
    assert blurred[2:6, 2:6] == pytest.approx(0.5 * C1_row.sum() ** 2, rel=1e-14)
    assert np.ptp(blurred[2:6, 2:6]) < 1e-14


def test_deblurring_rejects_wrong_size():
    with pytest.raises(ValueError):
        build_deblurring(np.ones((8, 8)), N=16)


# completion

def test_completion_shape_and_count():
    prob = build_completion(N=128, remove_frac=0.6)
    assert prob.C.shape == (6554, 16384)
    assert round(0.4 * 16384) == 6554
    np.testing.assert_array_equal(prob.b, prob.y_true[prob.C.kept])


def test_completion_no_removal_is_identity():
    img = synthetic_image(16)
    prob = build_completion(img, N=16, remove_frac=0.0, patch=(4, 4))
    np.testing.assert_array_equal(prob.b, prob.y_true)
    assert prob.C.shape == (256, 256)


def test_completion_seed_controls_mask():
    a = build_completion(N=16, patch=(4, 4), seed=1)
    b = build_completion(N=16, patch=(4, 4), seed=1)
    c = build_completion(N=16, patch=(4, 4), seed=2)
    np.testing.assert_array_equal(a.C.kept, b.C.kept)
    assert not np.array_equal(a.C.kept, c.C.kept)


# phantom

def test_phantom_center_and_corners():
    img = shepp_logan(64)
    assert img[32, 32] > 0
    assert img[0, 0] == img[0, -1] == img[-1, 0] == img[-1, -1] == 0
    assert img.min() >= 0 and img.max() <= 1


def test_phantom_mirror_equivariance():
    mirrored = tuple((rho, ax, ay, -x0, y0, -deg) for rho, ax, ay, x0, y0, deg in SHEPP_LOGAN_ELLIPSES)
    for N in (64, 65):
        np.testing.assert_array_equal(shepp_logan(N, mirrored), np.fliplr(shepp_logan(N)))


def test_phantom_mass_scales_with_area():
    m1 = shepp_logan(128).sum()
    m2 = shepp_logan(256).sum()
    assert m2 / m1 == pytest.approx(4.0, rel=0.02)


# tomography

def test_tomography_full_scale_shape():
    prob = build_tomography(256)
    assert prob.C.shape == (36200, 65536)
    sino = prob.b.reshape(362, 100, order="F")
    assert sino.shape == (362, 100)


def test_projector_matches_clipping_oracle_small():
    # an even ray count keeps every ray off the pixel grid lines
    N, n_rays = 8, 10
    angles = [0.0, 17.0, 45.0, 90.0, 123.4, 179.0]
    C = to_dense(parallel_beam_projector(N, n_rays, angles))
    t = ray_offsets(N, n_rays)
    for a, deg in enumerate(angles):
        for k in range(n_rays):
            np.testing.assert_allclose(C[k + a * n_rays], brute_projector_row(N, t[k], deg), atol=1e-12)


def test_tomography_data_matches_clipping_oracle():
    prob = build_tomography(64, mu=1.0)
    n_rays = int(math.floor(math.sqrt(2) * 64))
    angles = np.linspace(0, 179, 100)
    t = ray_offsets(64, n_rays)
    rng = np.random.default_rng(0)
    for row in rng.choice(prob.b.size, 40, replace=False):
        k, a = row % n_rays, row // n_rays
        expected = brute_projector_row(64, t[k], angles[a]) @ prob.y_true
        assert prob.b[row] == pytest.approx(expected, abs=1e-11)


def test_projector_angle_zero_column_sums():
    N = 16
    n_rays = int(math.floor(math.sqrt(2) * N))
    img = np.random.default_rng(1).uniform(size=(N, N))
    C = parallel_beam_projector(N, n_rays, [0.0])
    b = C.apply(img.ravel(order="F"))
    for k, t in enumerate(ray_offsets(N, n_rays)):
        col = math.floor(t + N / 2)
        expected = img[:, col].sum() if 0 <= col < N else 0.0
        assert b[k] == pytest.approx(expected, abs=1e-12)


def disk_phantom(N, R, oversample=4):
    """Cell averages of the indicator of a centered disk of radius ``R`` (pixel units)."""
    sub = (np.arange(N * oversample) + 0.5) / oversample - N / 2
    X, Y = np.meshgrid(sub, -sub)
    inside = (X**2 + Y**2 <= R * R).astype(float)
    return inside.reshape(N, oversample, N, oversample).mean(axis=(1, 3))


def test_projector_disk_chord_lengths():
    N, R = 64, 24.0
    n_rays = int(math.floor(math.sqrt(2) * N))
    angles = np.linspace(0, 179, 100)
    b = parallel_beam_projector(N, n_rays, angles).apply(disk_phantom(N, R).ravel(order="F"))
    t = ray_offsets(N, n_rays)
    chord = 2 * np.sqrt(np.maximum(R * R - t**2, 0.0))
    err = np.abs(b.reshape(n_rays, len(angles), order="F") - chord[:, None])
    assert err.max() <= 2.0


def test_projector_weights_nonnegative_and_bounded():
    N = 16
    C = parallel_beam_projector(N, 22, np.linspace(0, 179, 13))
    assert np.all(C.values >= 0)
    row_sums = np.asarray(C.matrix.sum(axis=1)).ravel()
    assert row_sums.max() <= math.sqrt(2) * N + 1e-12


def test_projector_zero_image():
    prob = build_tomography(16, patch=(4, 4))
    np.testing.assert_array_equal(prob.C.apply(np.zeros(256)), 0.0)
    with pytest.raises(ValueError):
        parallel_beam_projector(8, 5, [180.0])


def test_tomography_optional_noise():
    clean = build_tomography(16, patch=(4, 4))
    noisy = build_tomography(16, patch=(4, 4), noise=NoiseSpec(0.01, 0))
    assert np.linalg.norm(noisy.b - clean.b) / np.linalg.norm(clean.b) == pytest.approx(0.01, rel=1e-12)


# superresolution

def test_superresolution_full_scale_shape():
    prob = build_superresolution(N=512)
    assert prob.C.shape == (40960, 262144)


def test_restriction_block_means():
    N, f = 16, 4
    img = np.random.default_rng(2).uniform(size=(N, N))
    R = restriction_operator(N, f)
    low = (R @ img.ravel(order="F")).reshape(N // f, N // f, order="F")
    oracle = img.reshape(N // f, f, N // f, f).mean(axis=(1, 3))
    np.testing.assert_allclose(low, oracle, atol=1e-15)
    assert np.all(R.data == 1 / f**2) and np.all(np.diff(R.indptr) == f * f)
    with pytest.raises(ValueError):
        restriction_operator(10, 3)


def test_restriction_preserves_constants():
    R = restriction_operator(8, 2)
    np.testing.assert_allclose(R @ np.full(64, 0.3), 0.3, atol=1e-15)


def test_superresolution_first_frame_is_block_mean():
    img = synthetic_image(32, seed=3)
    prob = build_superresolution(img, N=32, n_frames=3, factor=4, patch=(8, 8))
    first = prob.b[:64].reshape(8, 8, order="F")
    np.testing.assert_allclose(first, img.reshape(8, 4, 8, 4).mean(axis=(1, 3)), atol=1e-15)
    assert prob.C.shape == (3 * 64, 1024)
    with pytest.raises(ValueError):
        build_superresolution(img, N=32, factor=5)


def test_rotation_zero_is_identity_and_rows_are_convex():
    np.testing.assert_array_equal(rotation_operator(6, 0.0).toarray(), np.eye(36))
    S = rotation_operator(12, 7.5)
    assert np.all(S.data > 0)
    assert np.asarray(S.sum(axis=1)).max() <= 1 + 1e-12


def test_rotation_quarter_turn_maps_upper_left_pixel():
    S = rotation_operator(5, 90.0).toarray()
    img = np.zeros((5, 5))
    img[0, 3] = 1.0
    out = (S @ img.ravel(order="F")).reshape(5, 5, order="F")
    # counterclockwise about the upper-left pixel: source (r, c) = (c_out, -r_out)
    assert out.sum() == pytest.approx(0.0)
    img = np.zeros((5, 5))
    img[3, 0] = 1.0
    out = (S @ img.ravel(order="F")).reshape(5, 5, order="F")
    assert out[0, 3] == pytest.approx(1.0)


@pytest.mark.parametrize(
    "prob",
    [
        build_deblurring(N=16, patch=(4, 4)),
        build_completion(N=16, patch=(4, 4)),
        build_tomography(16, patch=(4, 4)),
        build_superresolution(N=16, n_frames=3, factor=4, patch=(4, 4)),
    ],
    ids=["deblur", "complete", "tomo", "superres"],
)
def test_forward_operators_adjoint_and_dense(prob):
    rng = np.random.default_rng(3)
    dense = to_dense(prob.C)
    x = rng.standard_normal(prob.C.n_cols)
    y = rng.standard_normal(prob.C.n_rows)
    np.testing.assert_allclose(prob.C.apply(x), dense @ x, atol=1e-12)
    np.testing.assert_allclose(prob.C.apply_adjoint(y), dense.T @ y, atol=1e-12)
