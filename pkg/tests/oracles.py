"""Slow reference implementations used only to cross-check the package."""
from __future__ import annotations

import itertools
import math

import numpy as np


def conv2d_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int, pad: int) -> np.ndarray:
    """Direct summation over batch, output channel, output pixel and kernel taps."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    oh = (H + 2 * pad - k) // stride + 1
    ow = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, O, oh, ow))
    for n in range(B):
        for o in range(O):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(C):
                        for di in range(k):
                            for dj in range(k):
                                yi = i * stride + di - pad
                                xj = j * stride + dj - pad
                                if 0 <= yi < H and 0 <= xj < W:
                                    acc += x[n, c, yi, xj] * w[o, c, di, dj]
                    out[n, o, i, j] = acc
    return out


def max_pool_enum(x: np.ndarray) -> np.ndarray:
    B, C, H, W = x.shape
    out = np.empty((B, C, H // 2, W // 2))
    for n, c, i, j in itertools.product(range(B), range(C), range(H // 2), range(W // 2)):
        out[n, c, i, j] = max(x[n, c, 2 * i + a, 2 * j + b] for a in (0, 1) for b in (0, 1))
    return out


def upsample_enum(x: np.ndarray) -> np.ndarray:
    B, C, H, W = x.shape
    out = np.empty((B, C, 2 * H, 2 * W))
    for n, c, i, j in itertools.product(range(B), range(C), range(2 * H), range(2 * W)):
        out[n, c, i, j] = x[n, c, i // 2, j // 2]
    return out


def gabor_formula(theta: float, freq: float, sx: float, sy: float, radius: int) -> np.ndarray:
    """Tap-by-tap even Gabor with the envelope-weighted mean removed."""
    size = 2 * radius + 1
    g = np.empty((size, size))
    env = np.empty((size, size))
    for r in range(size):
        for c in range(size):
            x, y = c - radius, r - radius
            xn = -x * math.sin(theta) + y * math.cos(theta)
            yr = x * math.cos(theta) + y * math.sin(theta)
            e = math.exp(-0.5 * (xn * xn / (sx * sx) + yr * yr / (sy * sy)))
            env[r, c] = e
            g[r, c] = e * math.cos(2 * math.pi * freq * xn)
    return g - env * (g.sum() / env.sum())


def crossing_number_enum(ring: list[int]) -> int:
    """CN from the 8 ring bits listed clockwise."""
    return sum(abs(ring[i] - ring[(i + 1) % 8]) for i in range(8)) // 2


def best_assignment_size(admissible: list[tuple[int, int]], n_gt: int, n_ex: int) -> int:
    """Maximum one-to-one pairing size by exhaustive search over gt rows."""
    options = {i: [j for (a, j) in admissible if a == i] for i in range(n_gt)}
    best = 0

    def rec(i: int, used: frozenset, size: int):
        nonlocal best
        if size + (n_gt - i) <= best:
            return
        if i == n_gt:
            best = max(best, size)
            return
        for j in options[i]:
            if j not in used:
                rec(i + 1, used | {j}, size + 1)
        rec(i + 1, used, size)

    rec(0, frozenset(), 0)
    return best


def cmc_enum(scores: np.ndarray, mate_cols: list[int]) -> np.ndarray:
    """Rank every probe by scanning its row; the mate wins ties."""
    P, G = scores.shape
    ranks = []
    for p in range(P):
        m = scores[p, mate_cols[p]]
        r = 1
        for g in range(G):
            if scores[p, g] > m:
                r += 1
        ranks.append(r)
    return np.array([sum(1 for r in ranks if r <= k) / P for k in range(1, G + 1)])


def grating(shape, period: float, theta: float, phase: float = 0.0) -> np.ndarray:
    """Clean sinusoid in [0, 1] whose ridges run along ``theta``."""
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    normal = -x * math.sin(theta) + y * math.cos(theta)
    return 0.5 + 0.5 * np.cos(2 * math.pi * normal / period + phase)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.corrcoef(a.ravel(), b.ravel())[0, 1])
