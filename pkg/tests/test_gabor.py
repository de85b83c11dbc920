import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentfp.gabor import GaborBankConfig, enhance, gabor_enhance, gabor_kernel
from latentfp.imaging import FrequencyMap, GrayImage, OrientationField

from oracles import gabor_formula, grating, pearson


def _matched(shape, period, theta, block=16):
    bh, bw = -(-shape[0] // block), -(-shape[1] // block)
    return (OrientationField(block, np.full((bh, bw), theta), np.ones((bh, bw))),
            FrequencyMap(block, np.full((bh, bw), 1.0 / period)))


def _noisy(shape, period, theta, noise_var, seed):
    clean = grating(shape, period, theta)
    rng = np.random.default_rng(seed)
    return clean, np.clip(clean + rng.normal(0, math.sqrt(noise_var), shape), 0, 1)


@pytest.mark.parametrize("theta, freq", [(0.0, 0.1), (0.3, 0.125), (1.2, 1 / 3), (2.9, 1 / 25), (math.pi / 2, 0.09)])
def test_kernel_matches_formula(theta, freq):
    cfg = GaborBankConfig()
    k = gabor_kernel(theta, freq, cfg)
    assert k.shape == (2 * cfg.kernel_radius + 1,) * 2
    assert np.max(np.abs(k - gabor_formula(theta, freq, 4.0, 4.0, cfg.kernel_radius))) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0, math.pi), st.floats(1 / 25, 1 / 3), st.floats(1.0, 6.0), st.floats(1.0, 6.0))
def test_kernel_even_and_zero_mean(theta, freq, sx, sy):
    k = gabor_kernel(theta, freq, GaborBankConfig(sigma_x=sx, sigma_y=sy))
    assert np.array_equal(k, k[::-1, ::-1]) or np.max(np.abs(k - k[::-1, ::-1])) <= 1e-15
    assert abs(k.sum()) <= 1e-9


def test_kernel_rejects_out_of_window_frequency():
    with pytest.raises(ValueError):
        gabor_kernel(0.0, 0.5)
    with pytest.raises(ValueError):
        gabor_kernel(0.0, 0.01)


def test_config_rejects_truncating_radius():
    with pytest.raises(ValueError):
        GaborBankConfig(sigma_x=4, kernel_radius=10)
    assert GaborBankConfig(sigma_x=2.2, sigma_y=1).kernel_radius == 7


def test_matched_grating_never_degrades():
    clean = grating((96, 96), 9, 0.6)
    o, f = _matched(clean.shape, 9, 0.6)
    out = enhance(GrayImage(clean), o, f).pixels
    assert pearson(out, clean) >= 0.99


def test_noisy_grating_gain():
    clean, noisy = _noisy((128, 128), 9, 0.6, 0.2, seed=0)
    o, f = _matched(clean.shape, 9, 0.6)
    out = enhance(GrayImage(noisy), o, f).pixels
    assert pearson(out, clean) >= pearson(noisy, clean) + 0.05


@pytest.mark.parametrize("seed", range(4))
def test_noisy_grating_gain_with_estimated_fields(seed):
    theta = [0.2, 0.9, 1.6, 2.5][seed]
    clean, noisy = _noisy((128, 128), [8, 9, 10, 11][seed], theta, 0.04, seed)
    out = gabor_enhance(GrayImage(noisy)).pixels
    assert pearson(out, clean) >= pearson(noisy, clean) + 0.05


def test_constant_image_passes_through():
    px = np.full((64, 64), 0.42)
    assert np.array_equal(gabor_enhance(GrayImage(px)).pixels, px)


def test_undefined_blocks_pass_through():
    clean = grating((64, 64), 9, 0.0)
    o, f = _matched(clean.shape, 9, 0.0)
    f.freq[0, :] = 0.0
    out = enhance(GrayImage(clean), o, f).pixels
    assert np.array_equal(out[:16], clean[:16])


def test_rotation_consistency():
    _, noisy = _noisy((128, 128), 9, 0.5, 0.02, seed=5)
    a = gabor_enhance(GrayImage(noisy)).pixels
    b = np.rot90(gabor_enhance(GrayImage(np.rot90(noisy).copy())).pixels, -1)
    r = GaborBankConfig().kernel_radius + 16
    assert np.max(np.abs(a - b)[r:-r, r:-r]) <= 2 / 255


def test_spectral_peak_share_increases():
    clean, noisy = _noisy((128, 128), 8, 0.0, 0.05, seed=6)
    o, f = _matched(clean.shape, 8, 0.0)
    out = enhance(GrayImage(noisy), o, f).pixels

    def share(px):
        p = np.abs(np.fft.fft2(px - px.mean())) ** 2
        peak = p[16, 0] + p[-16, 0]  # 128 / 8 cycles along the rows
        return peak / p.sum()

    assert share(out) > share(noisy)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (48, 48), elements=st.floats(0, 1)))
def test_output_range(px):
    out = gabor_enhance(GrayImage(px)).pixels
    assert np.all(np.isfinite(out)) and out.min() >= 0 and out.max() <= 1
