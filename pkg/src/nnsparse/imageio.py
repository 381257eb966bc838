"""Binary PGM (P5) reading and writing, 8- and 16-bit."""
from __future__ import annotations

import re

import numpy as np

__all__ = ["ImageFormatError", "read_pgm", "write_pgm", "write_csv_matrix"]

_TOKEN = re.compile(rb"(?:\s+|#[^\n]*\n)*([^\s#]+)")


class ImageFormatError(ValueError):
    pass


def read_pgm(path) -> np.ndarray:
    """Return the image scaled to ``[0, 1]`` by its maxval."""
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise ImageFormatError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise ImageFormatError(f"{path}: only binary PGM (P5) is supported")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height
    if len(raw) - pos < n * dtype.itemsize:
        raise ImageFormatError(f"{path}: raster has fewer than {n} samples")
    data = np.frombuffer(raw, dtype=dtype, count=n, offset=pos)
    return data.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, image, bits: int = 8) -> None:
    """Clip ``image`` to ``[0, 1]``, quantize and write it as P5."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("PGM images are two-dimensional")
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(image, 0.0, 1.0) * maxval)
    data = q.astype(np.dtype("u1") if bits == 8 else np.dtype(">u2"))
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        fh.write(data.tobytes())


def write_csv_matrix(path, matrix) -> None:
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
