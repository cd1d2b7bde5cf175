"""Procedural head phantom for tomography experiments.

A Shepp-Logan-style arrangement of ellipses rendered at any size, so the
test suite needs no external data. Edges are softened by 4x supersampling
to keep the raster deterministic yet not aliased.
"""

from __future__ import annotations

import numpy as np

# (intensity delta, semi-axis a, semi-axis b, center x, center y, rotation deg)
_ELLIPSES = [
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
]

_SUPERSAMPLE = 4


def phantom(size: int) -> np.ndarray:
    """Grayscale head phantom in [0, 1], shape (size, size)."""
    if size < 1:
        raise ValueError("phantom size must be >= 1")
    n = size * _SUPERSAMPLE
    coords = (2.0 * np.arange(n) + 1.0) / n - 1.0
    xg, yg = np.meshgrid(coords, coords)
    img = np.zeros((n, n))
    for value, a, b, x0, y0, deg in _ELLIPSES:
        phi = np.deg2rad(deg)
        c, s = np.cos(phi), np.sin(phi)
        xr = (xg - x0) * c + (yg - y0) * s
        yr = -(xg - x0) * s + (yg - y0) * c
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    img = img.reshape(size, _SUPERSAMPLE, size, _SUPERSAMPLE).mean(axis=(1, 3))
    return np.clip(img, 0.0, 1.0)
