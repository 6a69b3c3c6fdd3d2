import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranqa.dataset import synth_pristine
from ranqa.distortions import DistortionSpec, Family, apply
from ranqa.metrics import fsim, luma, patch_pseudo_labels, phase_congruency, psnr, ssim


@pytest.fixture(scope="module")
def img():
    return synth_pristine(np.random.default_rng(3), 64)


def test_psnr_identity_is_inf(img) -> None:
    assert psnr(img, img) == math.inf


def test_psnr_constant_offset() -> None:
    a = np.random.default_rng(0).uniform(0, 0.9, (16, 16, 3))
    assert psnr(a, a + 16 / 255) == pytest.approx(24.048, abs=1e-3)


def test_psnr_matches_direct_mse() -> None:
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0, 1, (2, 24, 20, 3))
    mse = ((a - b) ** 2).mean() * 255 ** 2
    assert psnr(a, b) == pytest.approx(10 * math.log10(255 ** 2 / mse), abs=1e-9)


def test_psnr_shape_mismatch() -> None:
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim_identity_exact(img) -> None:
    assert ssim(img, img) == 1.0


def test_ssim_symmetric(img) -> None:
    other = apply(DistortionSpec(Family.WHITE_NOISE, 3, 1), img)
    assert ssim(img, other) == ssim(other, img)


def _ssim_loops(a, b):
    x, y = luma(a), luma(b)
    g = np.exp(-(np.arange(11) - 5) ** 2 / 4.5)
    win = np.outer(g, g) / g.sum() ** 2
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            mx, my = (win * px).sum(), (win * py).sum()
            vx = (win * (px - mx) ** 2).sum()
            vy = (win * (py - my) ** 2).sum()
            cxy = (win * (px - mx) * (py - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_ssim_matches_windowed_loop_oracle() -> None:
    rng = np.random.default_rng(4)
    a = rng.uniform(0, 1, (19, 23, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(_ssim_loops(a, b), abs=1e-9)


def test_ssim_too_small() -> None:
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 30, 3)), np.zeros((10, 30, 3)))


def test_ssim_blur_ordering(img) -> None:
    lo = ssim(apply(DistortionSpec(Family.GAUSSIAN_BLUR, 1), img), img)
    hi = ssim(apply(DistortionSpec(Family.GAUSSIAN_BLUR, 5), img), img)
    assert hi < lo < 1.0


def test_fsim_identity(img) -> None:
    score, mass = fsim(img, img)
    assert score == 1.0
    assert mass > 0


def test_fsim_constant_pair() -> None:
    z = np.zeros((32, 32, 3))
    assert fsim(z, z) == (1.0, 0.0)


def test_fsim_symmetric_and_bounded(img) -> None:
    other = apply(DistortionSpec(Family.JPEG, 4), img)
    s1, m1 = fsim(img, other)
    s2, m2 = fsim(other, img)
    assert s1 == pytest.approx(s2, abs=1e-12)
    assert m1 == pytest.approx(m2, rel=1e-12)
    assert 0 < s1 < 1


def test_fsim_offset_invariance(img) -> None:
    a = 0.8 * img + 0.05
    b = apply(DistortionSpec(Family.WHITE_NOISE, 2, 0), a)
    b = np.clip(b, 0.0, 0.85)
    s0 = fsim(a, b)[0]
    s1 = fsim(a + 0.1, b + 0.1)[0]
    assert s1 == pytest.approx(s0, abs=1e-3)


def test_fsim_rejects_small_images() -> None:
    with pytest.raises(ValueError):
        fsim(np.zeros((16, 40, 3)), np.zeros((16, 40, 3)))


def test_phase_congruency_range(img) -> None:
    pc = phase_congruency(luma(img))
    assert pc.shape == (64, 64)
    assert pc.min() >= 0 and pc.max() <= 1 + 1e-9


@pytest.mark.parametrize("family", list(Family))
def test_fsim_decreases_with_level(img, family) -> None:
    scores = [fsim(apply(DistortionSpec(family, lv, 9), img), img)[0] for lv in (1, 3, 5)]
    assert scores[0] > scores[1] > scores[2]


def test_pseudo_labels() -> None:
    p = synth_pristine(np.random.default_rng(5), 64)
    assert patch_pseudo_labels(p, p).s0 == 1.0
    z = np.zeros((64, 64, 3))
    lab = patch_pseudo_labels(z, z)
    assert (lab.s0, lab.w0) == (1.0, 0.0)
    n1 = patch_pseudo_labels(apply(DistortionSpec(Family.WHITE_NOISE, 1, 2), p), p)
    n5 = patch_pseudo_labels(apply(DistortionSpec(Family.WHITE_NOISE, 5, 2), p), p)
    assert n5.s0 < n1.s0
    assert n1.w0 > 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_metrics_symmetric_on_random_pairs(seed) -> None:
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 1, (2, 32, 32, 3))
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    s, _ = fsim(a, b)
    assert 0 < s <= 1
