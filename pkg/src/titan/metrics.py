"""Image quality metrics and the grid-sampled Lipschitz estimator.

The Lipschitz constant of a coordinate model is estimated the same way it
is reported: evaluate the model's coordinate Jacobian at every pixel
center of a fine grid, take the largest singular value per pixel via the
closed form for k x 2 matrices, and report the maximum over the grid.
Normalization statistics are frozen to the full-grid values while
differentiating with respect to position, so pixels decouple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .operators import coord_grid

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class QualityReport:
    psnr_db: float
    ssim: float
    identical: bool


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """10 log10(max_val^2 / MSE); +inf when the inputs are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(
            f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    sw = np.lib.stride_tricks.sliding_window_view
    shape = (SSIM_WINDOW, SSIM_WINDOW)
    mu_a = np.einsum("ijkl,kl->ij", sw(a, shape), win)
    mu_b = np.einsum("ijkl,kl->ij", sw(b, shape), win)
    m_aa = np.einsum("ijkl,kl->ij", sw(a * a, shape), win)
    m_bb = np.einsum("ijkl,kl->ij", sw(b * b, shape), win)
    m_ab = np.einsum("ijkl,kl->ij", sw(a * b, shape), win)
    var_a = m_aa - mu_a * mu_a
    var_b = m_bb - mu_b * mu_b
    cov = m_ab - mu_a * mu_b
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM, Gaussian-weighted 11x11 windows on unit dynamic range.

    Only windows fully inside the image contribute. Multichannel images
    are scored per channel and averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return _ssim_channel(a, b)
    if a.ndim == 3:
        return float(np.mean([_ssim_channel(a[:, :, c], b[:, :, c])
                              for c in range(a.shape[2])]))
    raise ValueError(f"expected HxW or HxWxC images, got shape {a.shape}")


def quality_report(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> QualityReport:
    p = psnr(a, b, max_val)
    return QualityReport(psnr_db=p, ssim=ssim(a, b), identical=math.isinf(p))


# ---------------------------------------------------------------------------
# coordinate Jacobians and Lipschitz estimation
# ---------------------------------------------------------------------------

def _out_channels(model, coords, norm_stats):
    probe = model.forward(coords[:1], None, norm_stats=norm_stats, trainable=False) \
        if norm_stats is not None else model.forward(coords[:1], None, trainable=False)
    return probe.value.shape[1]


def coordinate_jacobian(model, coords: np.ndarray, norm_stats=None,
                        chunk: int = 8192) -> np.ndarray:
    """Per-row Jacobians d out[n]/d coords[n], shape (N, k_d, 2).

    Uses one backward pass per output channel per chunk: with frozen
    normalization statistics the rows are independent, so the gradient of
    a column sum recovers every row's Jacobian at once. Models with
    normalization layers must supply `norm_stats`.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if getattr(model, "normalized", False) and norm_stats is None:
        raise ValueError(
            "per-pixel Jacobians of a normalized model need frozen statistics; "
            "pass norm_stats from a reference grid forward"
        )
    n = coords.shape[0]
    kd = _out_channels(model, coords, norm_stats)
    jac = np.empty((n, kd, 2))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        block = coords[lo:hi]
        for c in range(kd):
            tape = ad.Tape()
            xv = tape.leaf(block, name="coords", trainable=True)
            if norm_stats is not None:
                out = model.forward(xv, tape, norm_stats=norm_stats, trainable=False)
            else:
                out = model.forward(xv, tape, trainable=False)
            pick = np.zeros((kd, 1))
            pick[c, 0] = 1.0
            col = ad.matmul(out, pick, tape)
            ad.scale(ad.mean(col, tape), float(hi - lo), tape)
            jac[lo:hi, c, :] = ad.backward(tape)["coords"]
    return jac


def jacobian_at(model, x, norm_stats=None) -> np.ndarray:
    """Exact reverse-mode Jacobian at one coordinate, shape (k_d, 2)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, 2)
    return coordinate_jacobian(model, x, norm_stats=norm_stats)[0]


def sigma_max_2col(jac: np.ndarray) -> np.ndarray:
    """Largest singular value of one or many k x 2 matrices, closed form.

    For J with Gram matrix [[a, b], [b, c]], sigma_max is
    sqrt(((a+c) + sqrt((a-c)^2 + 4 b^2)) / 2).
    """
    jac = np.asarray(jac, dtype=np.float64)
    single = jac.ndim == 2
    if single:
        jac = jac[None]
    a = np.einsum("nkc,nkc->nc", jac, jac)  # column norms squared: (N, 2)
    b = np.einsum("nk,nk->n", jac[:, :, 0], jac[:, :, 1])
    tr = a[:, 0] + a[:, 1]
    disc = np.sqrt((a[:, 0] - a[:, 1]) ** 2 + 4.0 * b * b)
    smax = np.sqrt(np.maximum(0.5 * (tr + disc), 0.0))
    return float(smax[0]) if single else smax


@dataclass
class LipschitzReport:
    constant: float
    argmax: tuple[float, float]
    field: np.ndarray  # per-pixel sigma_max, shape (H, W)


def lipschitz_estimate(model, h: int, w: int) -> LipschitzReport:
    """Grid-sampled Lipschitz constant over the h x w pixel-center grid.

    Normalization statistics, when the model has them, come from one
    full-grid forward and are then treated as constants per pixel.
    """
    grid = coord_grid(h, w)
    norm_stats = None
    if getattr(model, "normalized", False):
        _, norm_stats = model.forward(grid, None, trainable=False, want_stats=True)
    jac = coordinate_jacobian(model, grid, norm_stats=norm_stats)
    field = sigma_max_2col(jac).reshape(h, w)
    idx = int(np.argmax(field))
    return LipschitzReport(
        constant=float(field.ravel()[idx]),
        argmax=(float(grid[idx, 0]), float(grid[idx, 1])),
        field=field,
    )
