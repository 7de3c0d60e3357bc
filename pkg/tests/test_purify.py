import numpy as np
import pytest

from purlab.metrics import psnr
from purlab.models import AutoencoderParams, FeatureNetParams
from purlab.purify import (EDIT_TASK, STYLE_TASK, PurifyConfig, PurifyDiverged,
                           apply_baseline, combo_baseline,
                           gaussian_noise_baseline, impress_purify,
                           jpeg_baseline, lowpass_baseline, resize_baseline)
from purlab.rng import SeedStream


@pytest.fixture(scope="module")
def ae():
    return AutoencoderParams.init(SeedStream(0))


@pytest.fixture(scope="module")
def fn():
    return FeatureNetParams.init(SeedStream(0), num_classes=4)


def image(seed, lo=-0.9, hi=0.9):
    return np.random.default_rng(seed).uniform(lo, hi, (3, 32, 32))


def smooth(seed):
    rng = np.random.default_rng(seed)
    u, v = np.meshgrid(np.linspace(0, 1, 32), np.linspace(0, 1, 32))
    return np.stack([0.6 * np.sin(2 * np.pi * (u + c * v) + rng.uniform(0, 3))
                     for c in (0.5, 1.0, 1.5)])


class TestPurifyDefaults:
    def test_style_task_defaults(self):
        assert STYLE_TASK.lpips_budget == 0.1
        assert STYLE_TASK.alpha == 0.1
        assert STYLE_TASK.steps == 3000
        assert STYLE_TASK.lr == 1e-2
        assert STYLE_TASK.optimizer == "adam"

    def test_edit_task_defaults(self):
        assert EDIT_TASK.lpips_budget == 0.1
        assert EDIT_TASK.alpha == 1e-2
        assert EDIT_TASK.steps == 1000
        assert EDIT_TASK.lr == 5e-3


class TestImpressMechanics:
    def test_zero_steps_returns_noisy_init(self, ae, fn):
        x = image(0)
        cfg = PurifyConfig(steps=0, init_sigma=0.05, seed=3)
        res = impress_purify(ae, fn, x, cfg)
        noise = SeedStream(3).stream("purify-init").normal((1, 3, 32, 32))
        expected = np.clip(x[None] + 0.05 * noise, -1, 1)[0]
        np.testing.assert_array_equal(res.x_pur, expected)

    def test_combined_loss_non_increasing_start_to_end(self, ae, fn):
        x = image(1)
        res = impress_purify(ae, fn, x, PurifyConfig(steps=40, lr=1e-2,
                                                     seed=0))
        assert res.trajectory[-1, 2] <= res.trajectory[0, 2]

    def test_output_in_range_and_shape(self, ae, fn):
        x = image(2)
        res = impress_purify(ae, fn, x, PurifyConfig(steps=10, seed=0))
        assert res.x_pur.shape == (3, 32, 32)
        assert res.x_pur.min() >= -1.0 and res.x_pur.max() <= 1.0

    def test_snapshots_cover_first_and_last(self, ae, fn):
        res = impress_purify(ae, fn, image(3),
                             PurifyConfig(steps=25, snapshot_every=10, seed=0))
        steps = [s for s, _ in res.snapshots]
        assert steps[0] == 0 and steps[-1] == 25

    def test_hinge_saturation_at_large_alpha(self, ae, fn):
        from purlab.metrics import lpips_proxy
        x = image(4)
        cfg = PurifyConfig(alpha=100.0, lpips_budget=0.05, steps=150,
                           lr=1e-2, seed=0)
        res = impress_purify(ae, fn, x, cfg)
        assert lpips_proxy(fn, res.x_pur, x) <= 0.05 + 0.01

    def test_nan_aborts_with_diagnostic(self, fn):
        broken = AutoencoderParams.init(SeedStream(1))
        broken.params["dec.w3"].data[:] = np.nan
        with pytest.raises(PurifyDiverged, match="step 0"):
            impress_purify(broken, fn, image(5), PurifyConfig(steps=3))

    def test_deterministic_per_seed(self, ae, fn):
        x = image(6)
        a = impress_purify(ae, fn, x, PurifyConfig(steps=15, seed=9))
        b = impress_purify(ae, fn, x, PurifyConfig(steps=15, seed=9))
        np.testing.assert_array_equal(a.x_pur, b.x_pur)
        np.testing.assert_array_equal(a.trajectory, b.trajectory)


class TestJpeg:
    def test_high_quality_smooth_image_high_psnr(self):
        x = smooth(0)
        assert psnr(x, jpeg_baseline(x, quality=100)) > 35.0

    def test_output_in_range(self):
        out = jpeg_baseline(image(7))
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_default_quality_is_15(self):
        import inspect
        sig = inspect.signature(jpeg_baseline)
        assert sig.parameters["quality"].default == 15

    def test_quality_validated(self):
        with pytest.raises(ValueError, match="quality"):
            jpeg_baseline(image(8), quality=0)

    def test_deterministic(self):
        x = image(9)
        np.testing.assert_array_equal(jpeg_baseline(x), jpeg_baseline(x))


class TestNoise:
    def test_zero_variance_identity(self):
        x = image(10)
        np.testing.assert_array_equal(gaussian_noise_baseline(x, 0.0), x)

    def test_default_variance(self):
        import inspect
        assert inspect.signature(gaussian_noise_baseline) \
            .parameters["variance"].default == 0.15

    def test_empirical_variance_matches_nominal(self):
        # pre-clip noise over ~3e4 pixels: sample variance within 5%
        x = np.zeros((10, 3, 32, 32))
        out = gaussian_noise_baseline(x, 0.15, seed=0)
        added = out - x
        assert abs(added.var() - 0.15) / 0.15 < 0.05


class TestResize:
    def test_constant_image_unchanged(self):
        x = np.full((3, 32, 32), 0.3)
        np.testing.assert_allclose(resize_baseline(x), x, atol=1e-12)

    def test_output_in_range(self):
        out = resize_baseline(image(11))
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_checkerboard_flattened_smooth_preserved(self):
        checker = np.indices((32, 32)).sum(axis=0) % 2
        x_checker = np.stack([(checker * 1.6 - 0.8)] * 3)
        x_smooth = smooth(1)
        assert np.isfinite(psnr(x_checker, resize_baseline(x_checker)))
        assert psnr(x_checker, resize_baseline(x_checker)) < \
            psnr(x_smooth, resize_baseline(x_smooth))


class TestLowpass:
    def test_constant_unchanged(self):
        x = np.full((3, 32, 32), -0.2)
        np.testing.assert_allclose(lowpass_baseline(x), x, atol=1e-12)

    def test_default_sigma_one(self):
        import inspect
        assert inspect.signature(lowpass_baseline).parameters["sigma"].default == 1.0

    def test_nyquist_energy_reduced_on_noise(self):
        x = image(12)
        out = lowpass_baseline(x)
        spec_in = np.abs(np.fft.rfft2(x))
        spec_out = np.abs(np.fft.rfft2(out))
        # top-quarter band energy strictly reduced
        assert spec_out[:, 24:, :].sum() < spec_in[:, 24:, :].sum()
        assert spec_out[:, :, 12:].sum() < spec_in[:, :, 12:].sum()


class TestCombo:
    def test_mirrors_coarse_structure(self):
        # left half bright, right half dark: after the chain the bright
        # side must appear on the right
        x = np.full((3, 32, 32), -0.8)
        x[:, :, :16] = 0.8
        out = combo_baseline(x)
        assert out[:, :, 16:].mean() > 0.4
        assert out[:, :, :16].mean() < -0.4

    def test_output_in_range(self):
        out = combo_baseline(image(13))
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_dispatch_table(self):
        x = image(14)
        np.testing.assert_array_equal(apply_baseline("jpeg", x),
                                      jpeg_baseline(x))
        with pytest.raises(ValueError, match="unknown baseline"):
            apply_baseline("diffpure", x)
