import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resmark import autodiff as ag
from resmark import transforms as tf
from resmark.autodiff import Tensor
from resmark.errors import InvalidArgumentError, InvalidStateError

from .conftest import gradcheck
from ._oracles import rotate180_indices


def smooth_image(rng, c=2, h=12, w=12):
    """A bandlimited test image comfortably inside (0, 1)."""
    raw = rng.normal(size=(c, h, w))
    img = tf.blur(raw.astype(np.float64) * 0.15 + 0.5, 1.5)
    return np.clip(img, 0.05, 0.95)


class TestSpecValidation:
    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidArgumentError):
            tf.TransformSpec("sepia", ())

    @pytest.mark.parametrize(
        "factory,bad",
        [
            (tf.TransformSpec.gaussian_noise, -0.1),
            (tf.TransformSpec.brightness, 1.5),
            (tf.TransformSpec.blur, -1.0),
            (tf.TransformSpec.contrast, -0.5),
            (tf.TransformSpec.pixel_dropout, 130.0),
        ],
    )
    def test_bad_parameters_rejected(self, factory, bad):
        with pytest.raises(InvalidArgumentError):
            factory(bad)

    def test_jpeg_quality_range(self):
        with pytest.raises(InvalidArgumentError):
            tf.TransformSpec.jpeg_like(0)
        with pytest.raises(InvalidArgumentError):
            tf.TransformSpec.jpeg_like(101)

    def test_differentiability_flags(self):
        assert tf.TransformSpec.rotation(1.0).differentiable
        assert tf.TransformSpec.blur(1.0).differentiable
        assert not tf.TransformSpec.jpeg_like(50).differentiable
        assert not tf.TransformSpec.pixel_dropout(30).differentiable

    def test_empty_pipeline_rejected(self):
        with pytest.raises(InvalidArgumentError):
            tf.TransformPipeline(specs=(), mode="composition")


class TestGaussianNoise:
    def test_sigma_zero_identity(self, rng):
        s = rng.random((3, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(tf.gaussian_noise(s, 0.0, rng), s)

    def test_negative_sigma_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            tf.gaussian_noise(rng.random((3, 8, 8)), -1.0, rng)

    def test_empirical_std_matches(self):
        rng = np.random.default_rng(0)
        s = np.full((1, 100, 100), 0.5, dtype=np.float32)
        # pre-clip noise moment check on a mid-gray image over 1e5+ samples
        noisy = np.stack([tf.gaussian_noise(s, 0.1, rng) for _ in range(12)])
        std = (noisy - 0.5).std()
        assert abs(std - 0.1) / 0.1 < 0.1

    def test_range_closure(self):
        rng = np.random.default_rng(1)
        s = rng.random((3, 16, 16)).astype(np.float32)
        out = tf.gaussian_noise(s, 0.5, rng)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestRotate:
    def test_angle_zero_identity(self, rng):
        s = rng.random((3, 9, 9)).astype(np.float32)
        np.testing.assert_array_equal(tf.rotate(s, 0.0), s)

    def test_pi_is_exact_permutation(self):
        s = np.arange(4, dtype=np.float32).reshape(1, 2, 2) / 4.0
        out = tf.rotate(s, np.pi)
        perm = rotate180_indices(2, 2)
        np.testing.assert_array_equal(out[0], s[0].ravel()[perm])

    def test_pi_large_grid_exact(self, rng):
        s = rng.random((2, 6, 6)).astype(np.float32)
        out = tf.rotate(s, np.pi)
        np.testing.assert_allclose(out, s[:, ::-1, ::-1], atol=1e-7)

    def test_inverse_rotation_on_inscribed_disk(self, rng):
        s = smooth_image(rng, c=1, h=16, w=16)
        back = tf.rotate(tf.rotate(s, 0.7), -0.7)
        yy, xx = np.mgrid[0:16, 0:16]
        cy = cx = 7.5
        disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= (6.0) ** 2
        err = np.abs(back[0] - s[0])[disk]
        assert err.max() <= 0.1

    def test_infinite_angle_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            tf.rotate(rng.random((1, 4, 4)), np.inf)

    def test_gradient(self, rng):
        s = Tensor(smooth_image(rng, 1, 7, 7), requires_grad=True, dtype=np.float64)
        gradcheck(lambda: ag.sum_all(ag.mul(tf.rotate(ag.reshape(s, (1, 1, 7, 7)), 0.4),
                                            tf.rotate(ag.reshape(s, (1, 1, 7, 7)), 0.4))), [s])


class TestCropResize:
    def test_zero_crop_identity(self, rng):
        s = rng.random((3, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(tf.crop_resize(s, 0, 0, rng), s)

    def test_constant_preserved(self, rng):
        s = np.full((3, 12, 12), 0.42, dtype=np.float32)
        out = tf.crop_resize(s, 5, 3, rng)
        np.testing.assert_allclose(out, 0.42, atol=1e-6)

    def test_crop_too_large_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            tf.crop_resize(rng.random((1, 8, 8)), 8, 0, rng)

    def test_offsets_reproducible(self, rng):
        s = rng.random((2, 3, 10, 10)).astype(np.float32)
        a = tf.crop_resize(s, 3, 3, offsets=([1, 2], [0, 3]))
        b = tf.crop_resize(s, 3, 3, offsets=([1, 2], [0, 3]))
        np.testing.assert_array_equal(a, b)

    def test_gradient(self, rng):
        s = Tensor(smooth_image(rng, 1, 8, 8)[None], requires_grad=True, dtype=np.float64)
        gradcheck(
            lambda: ag.sum_all(ag.mul(tf.crop_resize(s, 3, 2, offsets=(1, 2)),
                                      tf.crop_resize(s, 3, 2, offsets=(1, 2)))),
            [s],
        )


class TestHflip:
    def test_double_flip_identity(self, rng):
        s = rng.random((3, 6, 6)).astype(np.float32)
        once = tf.hflip(s, flip=True)
        twice = tf.hflip(once, flip=True)
        np.testing.assert_array_equal(twice, s)

    def test_symmetric_image_unchanged(self, rng):
        half = rng.random((1, 4, 3)).astype(np.float32)
        s = np.concatenate([half, half[:, :, ::-1]], axis=2)
        np.testing.assert_allclose(tf.hflip(s, flip=True), s, atol=1e-7)

    def test_flip_frequency(self):
        rng = np.random.default_rng(5)
        s = np.zeros((10000, 1, 1, 2), dtype=np.float32)
        s[:, :, :, 0] = 1.0
        out = tf.hflip(s, rng)
        flipped = out[:, 0, 0, 1] == 1.0
        assert 0.48 <= flipped.mean() <= 0.52

    def test_gradient(self, rng):
        s = Tensor(smooth_image(rng, 1, 5, 5)[None], requires_grad=True, dtype=np.float64)
        gradcheck(lambda: ag.sum_all(ag.mul(tf.hflip(s, flip=True), tf.hflip(s, flip=True))), [s])


class TestBrightness:
    def test_zero_identity(self, rng):
        s = rng.random((3, 5, 5)).astype(np.float32)
        np.testing.assert_array_equal(tf.brightness(s, 0.0), s)

    def test_full_whitening(self, rng):
        out = tf.brightness(rng.random((3, 5, 5)).astype(np.float32), 1.0)
        np.testing.assert_allclose(out, 1.0, atol=1e-6)

    def test_linear_blend_value(self):
        s = np.full((1, 4, 4), 0.5, dtype=np.float32)
        out = tf.brightness(s, 0.1)
        np.testing.assert_allclose(out, 0.55, atol=1e-6)

    def test_out_of_range_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            tf.brightness(rng.random((1, 4, 4)), 1.0001)

    def test_gradient(self, rng):
        s = Tensor(smooth_image(rng, 1, 5, 5)[None], requires_grad=True, dtype=np.float64)
        gradcheck(lambda: ag.sum_all(ag.mul(tf.brightness(s, 0.3), tf.brightness(s, 0.3))), [s])


class TestBlur:
    def test_sigma_zero_identity(self, rng):
        s = rng.random((3, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(tf.blur(s, 0.0), s)

    def test_constant_preserved(self):
        s = np.full((2, 9, 9), 0.37, dtype=np.float32)
        np.testing.assert_allclose(tf.blur(s, 1.0), 0.37, atol=1e-6)

    def test_kernel_radius_and_normalization(self):
        k = tf.gaussian_kernel1d(1.0)
        assert k.size == 2 * 3 + 1
        assert abs(k.sum() - 1.0) < 1e-12

    def test_smooths_variance(self, rng):
        s = rng.random((1, 16, 16)).astype(np.float32)
        out = tf.blur(s, 1.0)
        assert out.var() < s.var()

    def test_gradient(self, rng):
        s = Tensor(smooth_image(rng, 1, 6, 6)[None], requires_grad=True, dtype=np.float64)
        gradcheck(lambda: ag.sum_all(ag.mul(tf.blur(s, 0.7), tf.blur(s, 0.7))), [s])


class TestContrast:
    def test_factor_one_identity(self, rng):
        s = rng.random((3, 5, 5)).astype(np.float32)
        np.testing.assert_array_equal(tf.contrast(s, 1.0), s)

    def test_factor_zero_collapses_to_mean(self, rng):
        s = rng.random((3, 5, 5)).astype(np.float32)
        out = tf.contrast(s, 0.0)
        assert np.ptp(out) < 1e-6
        assert abs(out.mean() - s.mean()) < 1e-5

    def test_eval_value_usable(self, rng):
        out = tf.contrast(rng.random((3, 8, 8)).astype(np.float32), 0.7)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_gradient(self, rng):
        s = Tensor(smooth_image(rng, 1, 5, 5)[None], requires_grad=True, dtype=np.float64)
        gradcheck(lambda: ag.sum_all(ag.mul(tf.contrast(s, 0.6), tf.contrast(s, 0.6))), [s])


class TestJpegLike:
    def test_quality_100_near_lossless_on_smooth(self, rng):
        s = smooth_image(rng, 3, 32, 32).astype(np.float32)
        out = tf.jpeg_like(s, 100)
        assert np.abs(out - s).max() <= 2.0 / 255.0

    def test_constant_stays_constant(self):
        s = np.full((3, 16, 16), 0.5, dtype=np.float32)
        out = tf.jpeg_like(s, 50)
        assert np.ptp(out) == 0.0

    def test_non_multiple_of_eight_shapes(self, rng):
        s = rng.random((1, 10, 13)).astype(np.float32)
        out = tf.jpeg_like(s, 50)
        assert out.shape == s.shape
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_quality_bounds_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            tf.jpeg_like(rng.random((1, 8, 8)), 0)

    def test_rejects_gradient_context(self, rng):
        s = Tensor(rng.random((1, 1, 8, 8)), requires_grad=True)
        with pytest.raises(InvalidStateError, match="evaluation-only"):
            tf.jpeg_like(s, 50)


class TestPixelDropout:
    def test_keep_all(self, rng):
        s_hat = rng.random((3, 6, 6)).astype(np.float32)
        s = rng.random((3, 6, 6)).astype(np.float32)
        np.testing.assert_array_equal(tf.pixel_dropout(s_hat, s, 100.0, rng), s_hat)

    def test_keep_none(self, rng):
        s_hat = rng.random((3, 6, 6)).astype(np.float32)
        s = rng.random((3, 6, 6)).astype(np.float32)
        np.testing.assert_array_equal(tf.pixel_dropout(s_hat, s, 0.0, rng), s)

    def test_mask_shared_across_channels(self):
        rng = np.random.default_rng(3)
        s_hat = np.ones((3, 8, 8), dtype=np.float32)
        s = np.zeros((3, 8, 8), dtype=np.float32)
        out = tf.pixel_dropout(s_hat, s, 50.0, rng)
        assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            tf.pixel_dropout(np.zeros((3, 4, 4)), np.zeros((3, 5, 5)), 50.0, rng)

    def test_rejects_gradient_context(self, rng):
        s_hat = Tensor(rng.random((1, 1, 4, 4)), requires_grad=True)
        with pytest.raises(InvalidStateError):
            tf.pixel_dropout(s_hat, Tensor(np.zeros((1, 1, 4, 4))), 30.0, rng)


class TestPipeline:
    def composition_pipe(self, seed=0):
        return tf.TransformPipeline(
            specs=(
                tf.TransformSpec.gaussian_noise(0.25),
                tf.TransformSpec.rotation(np.pi / 2),
                tf.TransformSpec.crop(10, 10),
                tf.TransformSpec.hflip(),
                tf.TransformSpec.brightness(0.1),
            ),
            mode="composition",
            seed=seed,
        )

    def test_identity_noise_pipeline(self, rng):
        pipe = tf.TransformPipeline(specs=(tf.TransformSpec.gaussian_noise(0.0),), seed=1)
        s = rng.random((3, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(tf.apply_pipeline(pipe, s), s)

    def test_composition_applies_and_stays_in_range(self, rng):
        s = rng.random((2, 3, 32, 32)).astype(np.float32)
        out = tf.apply_pipeline(self.composition_pipe(), s)
        assert out.shape == s.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert not np.array_equal(out, s)

    def test_seed_determinism(self, rng):
        s = rng.random((2, 3, 32, 32)).astype(np.float32)
        pipe = self.composition_pipe(seed=42)
        a = tf.apply_pipeline(pipe, s)
        b = tf.apply_pipeline(pipe, s)
        np.testing.assert_array_equal(a, b)

    def test_single_random_draws_one(self):
        pipe = tf.TransformPipeline(
            specs=(tf.TransformSpec.contrast(0.0), tf.TransformSpec.gaussian_noise(0.0)),
            mode="single_random",
            seed=0,
        )
        s = (np.arange(16, dtype=np.float32) / 16.0).reshape(1, 4, 4)
        seen = set()
        rng = np.random.default_rng(0)
        for _ in range(40):
            out = tf.apply_pipeline(pipe, s, rng=rng)
            # contrast(0) collapses to a constant; noise(0) is the identity
            seen.add("flat" if np.ptp(out) < 1e-6 else "identity")
            assert np.ptp(out) < 1e-6 or np.array_equal(out, s)
        assert seen == {"flat", "identity"}

    def test_instance_reuse_applies_same_transform(self, rng):
        pipe = self.composition_pipe(seed=3)
        gen = np.random.default_rng(3)
        inst = tf.sample_pipeline_instance(pipe, (2, 3, 32, 32), gen)
        a = rng.random((2, 3, 32, 32)).astype(np.float32)
        one = tf.apply_pipeline_instance(inst, a)
        two = tf.apply_pipeline_instance(inst, a)
        np.testing.assert_array_equal(one, two)

    def test_eval_only_spec_in_gradient_context_fails(self, rng):
        pipe = tf.TransformPipeline(specs=(tf.TransformSpec.jpeg_like(50),), seed=0)
        s = Tensor(rng.random((1, 3, 16, 16)), requires_grad=True)
        with pytest.raises(InvalidStateError):
            tf.apply_pipeline(pipe, s)

    def test_dropout_requires_original(self, rng):
        pipe = tf.TransformPipeline(specs=(tf.TransformSpec.pixel_dropout(30.0),), seed=0)
        s = rng.random((1, 3, 8, 8)).astype(np.float32)
        with pytest.raises(InvalidArgumentError, match="original"):
            tf.apply_pipeline(pipe, s)
        out = tf.apply_pipeline(pipe, s, original=np.zeros_like(s))
        assert out.shape == s.shape


@settings(max_examples=25, deadline=None)
@given(
    kind=st.sampled_from(
        ["gaussian_noise", "rotation", "crop", "hflip", "brightness", "blur", "contrast",
         "jpeg_like"]
    ),
    seed=st.integers(0, 2**20),
)
def test_range_closure_property(kind, seed):
    """Every transform maps [0,1] signals into [0,1]."""
    rng = np.random.default_rng(seed)
    s = rng.random((1, 3, 16, 16)).astype(np.float32)
    spec = {
        "gaussian_noise": tf.TransformSpec.gaussian_noise(0.4),
        "rotation": tf.TransformSpec.rotation(np.pi),
        "crop": tf.TransformSpec.crop(5, 5),
        "hflip": tf.TransformSpec.hflip(),
        "brightness": tf.TransformSpec.brightness(0.8),
        "blur": tf.TransformSpec.blur(2.0),
        "contrast": tf.TransformSpec.contrast(1.8),
        "jpeg_like": tf.TransformSpec.jpeg_like(30),
    }[kind]
    out = tf.apply_spec(spec, s, rng)
    assert out.min() >= 0.0
    assert out.max() <= 1.0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_identity_parameters_property(seed):
    """Identity-parameter transforms reproduce the input within tolerance."""
    rng = np.random.default_rng(seed)
    s = rng.random((2, 12, 12)).astype(np.float32)
    np.testing.assert_array_equal(tf.gaussian_noise(s, 0.0, rng), s)
    np.testing.assert_array_equal(tf.rotate(s, 0.0), s)
    np.testing.assert_array_equal(tf.crop_resize(s, 0, 0, rng), s)
    np.testing.assert_array_equal(tf.brightness(s, 0.0), s)
    np.testing.assert_array_equal(tf.blur(s, 0.0), s)
    np.testing.assert_array_equal(tf.contrast(s, 1.0), s)
    np.testing.assert_allclose(tf.pixel_dropout(s, np.zeros_like(s), 100.0, rng), s)
    smooth = np.clip(tf.blur(s, 1.5), 0.05, 0.95).astype(np.float32)
    assert np.abs(tf.jpeg_like(smooth, 100) - smooth).max() <= 2.0 / 255.0
