import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranqa.dataset import synth_pristine
from ranqa.distortions import (
    FAMILIES,
    SEVERITY,
    DistortionSpec,
    Family,
    apply,
    gaussian_blur,
    haar2d,
    ihaar2d,
    jp2k_like,
    jpeg_like,
    quant_table,
    white_noise,
)
from ranqa.metrics import ssim


@pytest.fixture(scope="module")
def images():
    return [synth_pristine(np.random.default_rng([7, i]), 64) for i in range(4)]


def test_blur_constant_image_unchanged() -> None:
    img = np.full((20, 20, 3), 0.3)
    assert np.allclose(gaussian_blur(img, 2.0), img, atol=1e-12)


def test_blur_sigma_zero_is_identity(images) -> None:
    assert np.array_equal(gaussian_blur(images[0], 0.0), images[0])


def test_blur_impulse_matches_outer_product() -> None:
    img = np.zeros((31, 31, 3))
    img[15, 15] = 1.0
    out = gaussian_blur(img, 1.5)
    # independent kernel: radius ceil(4.5) = 5
    x = np.arange(-5, 6)
    k = np.exp(-x ** 2 / (2 * 1.5 ** 2))
    k /= k.sum()
    expect = np.outer(k, k)
    for c in range(3):
        assert out[10:21, 10:21, c] == pytest.approx(expect, abs=1e-12)
    assert out[:10].max() == 0.0


def test_blur_rejects_negative_sigma() -> None:
    with pytest.raises(ValueError):
        gaussian_blur(np.zeros((4, 4, 3)), -1.0)


def test_noise_identity_and_determinism(images) -> None:
    assert np.array_equal(white_noise(images[0], 0.0, 3), images[0])
    assert np.array_equal(white_noise(images[0], 0.1, 3), white_noise(images[0], 0.1, 3))
    assert not np.array_equal(white_noise(images[0], 0.1, 3), white_noise(images[0], 0.1, 4))


def test_noise_std_on_mid_gray() -> None:
    img = np.full((512, 512, 3), 0.5)
    diff = white_noise(img, 0.05, 11) - img
    assert 0.045 <= diff.std() <= 0.055
    assert abs(diff.mean()) < 1e-3


def test_quant_table_quality_scaling() -> None:
    assert np.all(quant_table(100) == 1)
    assert quant_table(50)[0, 0] == 16
    assert quant_table(10)[0, 0] == 80


def test_jpeg_quality_100_is_nearly_lossless(images) -> None:
    for img in images:
        assert ssim(jpeg_like(img, 100), img) > 0.99


def test_jpeg_deterministic_and_bounded(images) -> None:
    a = jpeg_like(images[1], 18)
    assert np.array_equal(a, jpeg_like(images[1], 18))
    assert a.min() >= 0 and a.max() <= 1


def test_jpeg_pads_odd_sizes() -> None:
    img = np.random.default_rng(0).uniform(0, 1, (13, 21, 3))
    assert jpeg_like(img, 60).shape == img.shape


@pytest.mark.parametrize("q", [0, 101, 50.5])
def test_jpeg_rejects_bad_quality(q) -> None:
    with pytest.raises(ValueError):
        jpeg_like(np.zeros((8, 8, 3)), q)


def test_haar_is_orthonormal() -> None:
    plane = np.random.default_rng(1).normal(size=(32, 48))
    coef = haar2d(plane)
    assert np.sum(coef ** 2) == pytest.approx(np.sum(plane ** 2), rel=1e-12)
    assert np.abs(ihaar2d(coef) - plane).max() < 1e-12


def test_jp2k_keep_all_reconstructs(images) -> None:
    assert np.abs(jp2k_like(images[2], 1.0) - images[2]).max() < 1e-6


def test_jp2k_constant_image_unchanged() -> None:
    img = np.full((40, 24, 3), 0.6)
    assert np.abs(jp2k_like(img, 0.012) - img).max() < 1e-12


def test_jp2k_non_multiple_dims_preserved() -> None:
    img = np.random.default_rng(2).uniform(0, 1, (37, 50, 3))
    assert jp2k_like(img, 0.1).shape == img.shape


@pytest.mark.parametrize("f", [0.0, 1.5, -0.1])
def test_jp2k_rejects_bad_fraction(f) -> None:
    with pytest.raises(ValueError):
        jp2k_like(np.zeros((16, 16, 3)), f)


def test_spec_level_range() -> None:
    with pytest.raises(ValueError):
        DistortionSpec(Family.JPEG, 0)
    with pytest.raises(ValueError):
        DistortionSpec(Family.JPEG, 6)
    assert DistortionSpec("JpegLike", 3).parameter == 35


def test_apply_none_and_determinism(images) -> None:
    out = apply(None, images[0])
    assert np.array_equal(out, images[0]) and out is not images[0]
    spec = DistortionSpec(Family.WHITE_NOISE, 1, seed=5)
    assert np.array_equal(apply(spec, images[0]), apply(spec, images[0]))


def test_severity_ladders_have_five_levels() -> None:
    assert set(SEVERITY) == set(FAMILIES)
    assert all(len(v) == 5 for v in SEVERITY.values())


@pytest.mark.parametrize("family", FAMILIES)
def test_family_mean_ssim_decreases(images, family) -> None:
    means = [np.mean([ssim(apply(DistortionSpec(family, lv, seed=i), img), img) for i, img in enumerate(images)])
             for lv in range(1, 6)]
    assert all(a > b for a, b in zip(means, means[1:]))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(1, 5), st.integers(0, 2 ** 32 - 1), st.integers(8, 40))
def test_outputs_stay_in_range_and_shape(family, level, seed, size) -> None:
    img = np.random.default_rng(seed).uniform(0, 1, (size, size + 3, 3))
    out = apply(DistortionSpec(family, level, seed), img)
    assert out.shape == img.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert not math.isnan(out.sum())
