"""Forward operators and sampling utilities.

The Radon transform is discretized as rotate-then-sum: for each angle the
image is resampled with bilinear interpolation on the rotated grid and the
columns are summed into detector bins. All interpolation weights are
materialized once into a sparse matrix, so the operator is exactly linear
and its adjoint is exactly the transpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._rng import STREAM_NOISE, generator


class RadonOperator:
    """Parallel-beam projections at m uniformly spaced angles in [0, pi).

    Angles are theta_j = j*pi/m. Detector bins equal the image side, so a
    sinogram is an (m, size) array. Square images only; pixels outside the
    inscribed disk are included (no masking).
    """

    def __init__(self, size: int, n_angles: int):
        if size < 2:
            raise ValueError("image side must be >= 2")
        if n_angles < 1:
            raise ValueError("need at least one angle")
        self.height = size
        self.width = size
        self.n_angles = n_angles
        self.angles = np.arange(n_angles) * np.pi / n_angles
        self._mat = _projection_matrix(size, self.angles)
        self._mat_t = self._mat.T.tocsr()

    def apply(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (self.height, self.width):
            raise ValueError(
                f"image shape {image.shape} does not match operator "
                f"{self.height}x{self.width}"
            )
        return (self._mat @ image.ravel()).reshape(self.n_angles, self.height)

    def adjoint(self, sino: np.ndarray) -> np.ndarray:
        sino = np.asarray(sino, dtype=np.float64)
        if sino.shape != (self.n_angles, self.height):
            raise ValueError(
                f"sinogram shape {sino.shape} does not match operator "
                f"({self.n_angles}, {self.height})"
            )
        return (self._mat_t @ sino.ravel()).reshape(self.height, self.width)


def _projection_matrix(size: int, angles: np.ndarray) -> sp.csr_matrix:
    """Stack per-angle bilinear rotation weights into one sparse map."""
    n = size
    center = (n - 1) / 2.0
    cols, rows = np.meshgrid(np.arange(n), np.arange(n))
    xc = (cols - center).ravel()
    yc = (rows - center).ravel()
    bin_of_target = cols.ravel()  # detector bin = target column
    row_chunks, col_chunks, val_chunks = [], [], []
    for j, theta in enumerate(angles):
        c, s = np.cos(theta), np.sin(theta)
        sx = c * xc - s * yc + center
        sy = s * xc + c * yc + center
        x0 = np.floor(sx).astype(np.int64)
        y0 = np.floor(sy).astype(np.int64)
        fx = sx - x0
        fy = sy - y0
        for dx, dy, w in (
            (0, 0, (1 - fx) * (1 - fy)),
            (1, 0, fx * (1 - fy)),
            (0, 1, (1 - fx) * fy),
            (1, 1, fx * fy),
        ):
            ix = x0 + dx
            iy = y0 + dy
            ok = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n) & (w > 0)
            row_chunks.append(j * n + bin_of_target[ok])
            col_chunks.append(iy[ok] * n + ix[ok])
            val_chunks.append(w[ok])
    mat = sp.coo_matrix(
        (
            np.concatenate(val_chunks),
            (np.concatenate(row_chunks), np.concatenate(col_chunks)),
        ),
        shape=(len(angles) * n, n * n),
    )
    return mat.tocsr()


@dataclass
class NoiseSpec:
    sigma: float
    seed: int

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise standard deviation must be nonnegative")


def add_noise(sino: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Add seeded i.i.d. Gaussian noise; sigma=0 returns the input unchanged."""
    sino = np.asarray(sino, dtype=np.float64)
    rng = generator(spec.seed, STREAM_NOISE)
    return sino + spec.sigma * rng.standard_normal(sino.shape)


def box_downsample(image: np.ndarray, f: int) -> np.ndarray:
    """Mean over f x f blocks; f must divide both spatial extents."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return box_downsample(image[:, :, None], f)[:, :, 0]
    if image.ndim != 3:
        raise ValueError(f"expected HxW or HxWxC image, got shape {image.shape}")
    h, w, c = image.shape
    if f < 1 or h % f or w % f:
        raise ValueError(f"factor {f} does not divide image extents {h}x{w}")
    return image.reshape(h // f, f, w // f, f, c).mean(axis=(1, 3))


def coord_grid(h: int, w: int) -> np.ndarray:
    """Pixel-center coordinates in [-1, 1]^2, row-major, rows are (x, y).

    x = (2j+1)/w - 1 for column j, y = (2i+1)/h - 1 for row i.
    """
    if h < 1 or w < 1:
        raise ValueError("grid extents must be >= 1")
    x = (2.0 * np.arange(w) + 1.0) / w - 1.0
    y = (2.0 * np.arange(h) + 1.0) / h - 1.0
    xg, yg = np.meshgrid(x, y)
    return np.stack([xg.ravel(), yg.ravel()], axis=1)
