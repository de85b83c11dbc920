"""Contextual Gabor filtering tuned to local ridge orientation and frequency."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from latentfp.imaging import (
    MAX_FREQ,
    MIN_FREQ,
    FrequencyMap,
    GrayImage,
    OrientationField,
    estimate_frequency,
    estimate_orientation,
    smooth_orientation,
)


@dataclass(frozen=True)
class GaborBankConfig:
    sigma_x: float = 4.0
    sigma_y: float = 4.0
    n_orientations: int = 16
    kernel_radius: int | None = None
    curvature_window: int = 3
    block_size: int = 16

    def __post_init__(self):
        need = math.ceil(3 * max(self.sigma_x, self.sigma_y))
        if self.kernel_radius is None:
            object.__setattr__(self, "kernel_radius", need)
        elif self.kernel_radius < need:
            raise ValueError(f"kernel_radius {self.kernel_radius} truncates the envelope; need >= {need}")
        if self.n_orientations < 1:
            raise ValueError("n_orientations must be positive")


def gabor_kernel(theta: float, freq: float, cfg: GaborBankConfig = GaborBankConfig()) -> np.ndarray:
    """Even Gabor kernel for ridges running along ``theta``; ``x'`` is the ridge normal.

    The DC component is removed by subtracting a multiple of the envelope, so
    the taps sum to zero while the kernel still decays to zero at its rim.
    """
    if not (MIN_FREQ - 1e-12 <= freq <= MAX_FREQ + 1e-12):
        raise ValueError(f"frequency {freq} outside [{MIN_FREQ:.4f}, {MAX_FREQ:.4f}] cycles/px")
    r = cfg.kernel_radius
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    xn = -x * np.sin(theta) + y * np.cos(theta)
    yr = x * np.cos(theta) + y * np.sin(theta)
    env = np.exp(-0.5 * (xn ** 2 / cfg.sigma_x ** 2 + yr ** 2 / cfg.sigma_y ** 2))
    g = env * np.cos(2 * np.pi * freq * xn)
    return g - env * (g.sum() / env.sum())


def _quantize(theta: float, n: int) -> float:
    step = np.pi / n
    return (round(theta / step) % n) * step


def enhance(img: GrayImage, orient: OrientationField, freq: FrequencyMap,
            cfg: GaborBankConfig = GaborBankConfig()) -> GrayImage:
    """Filter each block with the kernel matching its (smoothed) orientation and frequency.

    Blocks without a valid frequency keep their input pixels. Filter responses
    are mapped to [0, 1] around 0.5 using the 99.5th percentile magnitude.
    """
    if orient.theta.shape != freq.freq.shape or orient.block_size != freq.block_size:
        raise ValueError("orientation and frequency must share one block grid")
    px = img.pixels
    h, w = px.shape
    block = orient.block_size
    theta = smooth_orientation(orient, cfg.curvature_window).theta
    r = cfg.kernel_radius
    # Outside the image the signal is taken as the image mean; responses near the
    # border are rescaled by the share of kernel energy that falls inside.
    windows = sliding_window_view(np.pad(px - px.mean(), r), (2 * r + 1, 2 * r + 1))
    inside = sliding_window_view(np.pad(np.ones_like(px), r), (2 * r + 1, 2 * r + 1))
    response = np.zeros_like(px)
    filtered = np.zeros(px.shape, dtype=bool)
    cache: dict[tuple[float, float], np.ndarray] = {}
    for by, bx in zip(*np.nonzero(freq.freq > 0)):
        f = float(freq.freq[by, bx])
        key = (_quantize(float(theta[by, bx]), cfg.n_orientations), round(f, 3))
        kern = cache.get(key)
        if kern is None:
            kern = cache[key] = gabor_kernel(key[0], min(max(key[1], MIN_FREQ), MAX_FREQ), cfg)
        ys, xs = slice(by * block, min((by + 1) * block, h)), slice(bx * block, min((bx + 1) * block, w))
        energy = kern * kern
        share = np.tensordot(inside[ys, xs], energy, axes=([2, 3], [0, 1])) / energy.sum()
        response[ys, xs] = np.tensordot(windows[ys, xs], kern, axes=([2, 3], [0, 1])) / share
        filtered[ys, xs] = True
    out = px.copy()
    if filtered.any():
        scale = np.percentile(np.abs(response[filtered]), 99.5)
        if scale > 1e-12:
            out[filtered] = 0.5 + 0.5 * np.clip(response[filtered] / scale, -1.0, 1.0)
        else:
            out[filtered] = 0.5
    return GrayImage(out, img.dpi)


def gabor_enhance(img: GrayImage, cfg: GaborBankConfig = GaborBankConfig()) -> GrayImage:
    """Estimate orientation and frequency, then apply :func:`enhance`."""
    orient = estimate_orientation(img, cfg.block_size)
    freq = estimate_frequency(img, smooth_orientation(orient, cfg.curvature_window))
    return enhance(img, orient, freq, cfg)
