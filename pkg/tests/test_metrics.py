"""PSNR/SSIM and Lipschitz-estimator tests."""

import math

import numpy as np
import pytest

from titan import autodiff as ad
from titan.metrics import (
    coordinate_jacobian,
    jacobian_at,
    lipschitz_estimate,
    psnr,
    quality_report,
    sigma_max_2col,
    ssim,
)
from titan.models import SirenConfig, TitanConfig, siren_init, titan_forward, titan_init
from titan.operators import coord_grid


class _LinearModel:
    """I(x) = A x; Jacobian is A everywhere."""

    normalized = False

    def __init__(self, a):
        self.a = np.asarray(a, dtype=np.float64)

    def forward(self, coords, tape, *, trainable=True, norm_stats=None, want_stats=False):
        out = ad.matmul(coords if isinstance(coords, ad.Var) else ad.Var(np.asarray(coords, float)),
                        self.a.T, tape)
        return (out, []) if want_stats else out


class _SineModel:
    """I(x) = sin(alpha w . x), one channel."""

    normalized = False

    def __init__(self, w, alpha):
        self.w = np.asarray(w, dtype=np.float64).reshape(2, 1)
        self.alpha = float(alpha)

    def forward(self, coords, tape, *, trainable=True, norm_stats=None, want_stats=False):
        x = coords if isinstance(coords, ad.Var) else ad.Var(np.asarray(coords, float))
        out = ad.sin(ad.scale(ad.matmul(x, self.w, tape), self.alpha, tape), tape)
        return (out, []) if want_stats else out


class TestPsnr:
    def test_identical_inputs_flagged(self):
        img = np.random.default_rng(0).uniform(size=(16, 16))
        report = quality_report(img, img.copy())
        assert report.identical
        assert math.isinf(report.psnr_db)
        assert report.ssim == 1.0

    def test_constant_images_example(self):
        a = np.full((8, 8), 0.5)
        b = np.full((8, 8), 0.75)
        assert abs(psnr(a, b) - 10 * math.log10(1 / 0.0625)) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(12, 12)), rng.uniform(size=(12, 12))
        assert psnr(a, b) == psnr(b, a)

    def test_translation_invariance(self):
        rng = np.random.default_rng(2)
        a, b = rng.uniform(size=(12, 12)), rng.uniform(size=(12, 12))
        assert abs(psnr(a + 0.25, b + 0.25) - psnr(a, b)) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((5, 5)))


class TestSsim:
    def test_self_similarity_is_one(self):
        img = np.random.default_rng(3).uniform(size=(32, 32))
        assert ssim(img, img.copy()) == 1.0

    def test_constant_vs_constant_luminance_collapse(self):
        value = ssim(np.zeros((32, 32)), np.ones((32, 32)))
        assert 0.0 < value < 2e-4

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(size=(24, 24))
        b = np.clip(a + 0.2 * rng.normal(size=(24, 24)), 0, 1)
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_matches_reference_implementation(self):
        skimage_metrics = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(5)
        for _ in range(3):
            a = rng.uniform(size=(48, 48))
            b = np.clip(a + 0.15 * rng.normal(size=(48, 48)), 0, 1)
            ref = skimage_metrics.structural_similarity(
                a, b, gaussian_weights=True, sigma=1.5,
                use_sample_covariance=False, data_range=1.0,
            )
            assert abs(ssim(a, b) - ref) < 1e-10

    def test_multichannel_averages(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(size=(16, 16, 3))
        b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
        per_channel = [ssim(a[:, :, c], b[:, :, c]) for c in range(3)]
        assert abs(ssim(a, b) - np.mean(per_channel)) < 1e-12

    def test_window_larger_than_image_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestSigmaMax:
    def test_matches_power_iteration(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            j = rng.normal(size=(5, 2))
            closed = sigma_max_2col(j)
            g = j.T @ j
            v = rng.normal(size=2)
            for _ in range(500):
                v = g @ v
                v /= np.linalg.norm(v)
            power = math.sqrt(float(v @ g @ v))
            assert abs(closed - power) < 1e-10


class TestJacobian:
    def test_linear_model_exact(self):
        a = np.array([[1.0, 2.0], [3.0, -4.0], [0.5, 0.0]])
        model = _LinearModel(a)
        jac = jacobian_at(model, (0.3, -0.7))
        assert np.allclose(jac, a, atol=1e-14, rtol=0)

    def test_sine_model_closed_form(self):
        w = np.array([0.8, -0.6])
        alpha = 5.0
        model = _SineModel(w, alpha)
        for x in [(0.1, 0.2), (-0.5, 0.4), (0.9, -0.9)]:
            jac = jacobian_at(model, x)
            t = alpha * (w @ np.asarray(x))
            expected = alpha * math.cos(t) * w
            assert np.allclose(jac[0], expected, atol=1e-12)

    def test_matches_finite_differences(self):
        model = siren_init(SirenConfig(hidden_layers=2, width=8, out_channels=2, seed=0))
        rng = np.random.default_rng(8)
        step = 1e-6
        for _ in range(5):
            x = rng.uniform(-0.8, 0.8, size=2)
            jac = jacobian_at(model, x)
            for axis in range(2):
                bump = np.zeros(2)
                bump[axis] = step
                hi = model.forward((x + bump).reshape(1, 2), None, trainable=False).value[0]
                lo = model.forward((x - bump).reshape(1, 2), None, trainable=False).value[0]
                fd = (hi - lo) / (2 * step)
                err = np.abs(jac[:, axis] - fd) / np.maximum(1.0, np.abs(fd))
                assert err.max() < 1e-4

    def test_titan_requires_frozen_stats(self):
        model = titan_init(TitanConfig(depth=2, channels=4, out_channels=1, seed=0))
        with pytest.raises(ValueError, match="statistics"):
            jacobian_at(model, (0.0, 0.0))

    def test_titan_jacobian_with_stats_matches_fd(self):
        model = titan_init(TitanConfig(depth=2, channels=6, out_channels=1, seed=1))
        grid = coord_grid(16, 16)
        _, stats = titan_forward(model, grid, None, want_stats=True)
        rng = np.random.default_rng(9)
        step = 1e-6
        for _ in range(4):
            x = rng.uniform(-0.7, 0.7, size=2)
            jac = jacobian_at(model, x, norm_stats=stats)
            for axis in range(2):
                bump = np.zeros(2)
                bump[axis] = step
                hi = titan_forward(model, (x + bump).reshape(1, 2), None,
                                   norm_stats=stats, trainable=False).value[0]
                lo = titan_forward(model, (x - bump).reshape(1, 2), None,
                                   norm_stats=stats, trainable=False).value[0]
                fd = (hi - lo) / (2 * step)
                err = np.abs(jac[:, axis] - fd) / np.maximum(1.0, np.abs(fd))
                assert err.max() < 1e-4


class TestLipschitzEstimate:
    def test_linear_model_constant_field(self):
        a = np.array([[2.0, 1.0], [0.0, -3.0]])
        model = _LinearModel(a)
        report = lipschitz_estimate(model, 8, 8)
        expected = np.linalg.svd(a, compute_uv=False)[0]
        assert np.allclose(report.field, expected, atol=1e-12)
        assert abs(report.constant - expected) < 1e-12

    def test_estimate_dominates_sampled_slopes(self):
        model = titan_init(TitanConfig(depth=3, channels=8, out_channels=1, seed=2))
        h = w = 48
        report = lipschitz_estimate(model, h, w)
        grid = coord_grid(h, w)
        _, stats = titan_forward(model, grid, None, want_stats=True)
        out = titan_forward(model, grid, None, norm_stats=stats,
                            trainable=False).value.reshape(h, w)
        dx = grid[1, 0] - grid[0, 0]
        slopes_h = np.abs(np.diff(out, axis=1)) / dx
        slopes_v = np.abs(np.diff(out, axis=0)) / dx
        max_slope = max(slopes_h.max(), slopes_v.max())
        assert max_slope <= report.constant * 1.05

    def test_refinement_never_shrinks_the_max(self):
        # a 3x finer pixel-center grid contains the coarse centers
        model = siren_init(SirenConfig(hidden_layers=2, width=12, out_channels=1, seed=3))
        coarse = lipschitz_estimate(model, 8, 8)
        fine = lipschitz_estimate(model, 24, 24)
        shared = fine.field[1::3, 1::3]
        assert np.allclose(shared, coarse.field, atol=1e-10, rtol=0)
        assert fine.constant >= coarse.constant - 1e-12

    def test_argmax_matches_field(self):
        model = siren_init(SirenConfig(hidden_layers=2, width=6, out_channels=2, seed=4))
        report = lipschitz_estimate(model, 10, 10)
        grid = coord_grid(10, 10)
        idx = int(np.argmax(report.field))
        assert report.argmax == (grid[idx, 0], grid[idx, 1])
        assert report.constant == report.field.ravel()[idx]

    def test_batched_jacobian_matches_single_points(self):
        model = siren_init(SirenConfig(hidden_layers=2, width=7, out_channels=2, seed=5))
        coords = coord_grid(5, 5)
        batch = coordinate_jacobian(model, coords)
        for i in (0, 7, 24):
            single = jacobian_at(model, coords[i])
            assert np.allclose(batch[i], single, atol=1e-12)
