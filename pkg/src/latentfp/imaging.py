"""Grayscale fingerprint images and the classical ridge-analysis steps.

Conventions: pixels are floats in [0, 1], row-major ``(height, width)``;
ridges are dark. Angles are measured from the +x (column) axis toward +y
(row index, pointing down), so ridge directions live in [0, pi).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from latentfp.errors import DataError, FormatError, ShapeError

MIN_PERIOD, MAX_PERIOD = 3.0, 25.0
MIN_FREQ, MAX_FREQ = 1.0 / MAX_PERIOD, 1.0 / MIN_PERIOD


@dataclass
class GrayImage:
    pixels: np.ndarray
    dpi: int = 500

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ShapeError(f"GrayImage needs a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("GrayImage pixels must be finite and lie in [0, 1]")
        self.pixels = px
        if self.dpi <= 0:
            raise ValueError("dpi must be positive")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape  # type: ignore[return-value]

    @classmethod
    def clipped(cls, arr, dpi: int = 500) -> "GrayImage":
        return cls(np.clip(np.nan_to_num(np.asarray(arr, dtype=np.float64), nan=0.5), 0.0, 1.0), dpi)

    def to_uint8(self) -> np.ndarray:
        return np.round(self.pixels * 255.0).astype(np.uint8)


@dataclass
class OrientationField:
    block_size: int
    theta: np.ndarray
    coherence: np.ndarray

    def at_pixels(self, shape: tuple[int, int]) -> np.ndarray:
        return _expand_blocks(self.theta, self.block_size, shape)


@dataclass
class FrequencyMap:
    block_size: int
    freq: np.ndarray

    def at_pixels(self, shape: tuple[int, int]) -> np.ndarray:
        return _expand_blocks(self.freq, self.block_size, shape)


def _expand_blocks(grid: np.ndarray, block: int, shape: tuple[int, int]) -> np.ndarray:
    full = np.repeat(np.repeat(grid, block, axis=0), block, axis=1)
    return full[: shape[0], : shape[1]]


# ------------------------------------------------------------------------ I/O

_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pnm_header(blob: bytes, fields: int) -> tuple[list[bytes], int]:
    pos, tokens = 0, []
    for _ in range(fields):
        m = _PNM_TOKEN.match(blob, pos)
        if m is None:
            raise FormatError("truncated PGM header", pos)
        tokens.append(m.group(1))
        pos = m.end()
    if pos >= len(blob) or blob[pos:pos + 1] not in b" \t\r\n":
        raise FormatError("missing whitespace after PGM header", pos)
    return tokens, pos + 1


def decode_pgm(blob: bytes) -> tuple[np.ndarray, int]:
    """Parse an 8-bit binary PGM; returns uint8 array and the dpi comment (default 500)."""
    if blob[:2] != b"P5":
        raise FormatError(f"unsupported magic {blob[:2]!r}, expected P5", 0)
    tokens, pos = _read_pnm_header(blob, 4)
    offsets = [blob.find(t) for t in tokens]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        bad = next(i for i, t in enumerate(tokens[1:], 1) if not t.isdigit())
        raise FormatError(f"non-numeric header field {tokens[bad]!r}", offsets[bad]) from None
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid dimensions {width}x{height}", offsets[1])
    if maxval != 255:
        raise FormatError(f"unsupported bit depth: maxval {maxval} (only 255)", offsets[3])
    need = width * height
    if len(blob) - pos < need:
        raise FormatError(f"pixel data truncated: need {need} bytes, have {len(blob) - pos}", len(blob))
    dpi = 500
    m = re.search(rb"#\s*dpi\s*[=:]?\s*(\d+)", blob[:pos])
    if m:
        dpi = int(m.group(1))
    arr = np.frombuffer(blob, dtype=np.uint8, count=need, offset=pos).reshape(height, width)
    return arr.copy(), dpi


def encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n# dpi {img.dpi}\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.to_uint8().tobytes()


def load_image(path: str | Path) -> GrayImage:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image not found: {path}")
    blob = path.read_bytes()
    if blob[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(path)
    arr, dpi = decode_pgm(blob)
    return GrayImage(arr / 255.0, dpi)


def _load_png(path: Path) -> GrayImage:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "1", "P"):
            raise FormatError(f"unsupported PNG mode {im.mode!r}; only 8-bit grayscale is read", 25)
        arr = np.asarray(im.convert("L"), dtype=np.float64)
        dpi = im.info.get("dpi", (500, 500))[0]
    return GrayImage(arr / 255.0, int(round(dpi)) or 500)


def save_image(img: GrayImage, path: str | Path) -> None:
    path = Path(path)
    if not path.parent.is_dir():
        raise DataError(f"output directory does not exist: {path.parent}")
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(img.to_uint8(), mode="L").save(path, dpi=(img.dpi, img.dpi))
    else:
        path.write_bytes(encode_pgm(img))


# ---------------------------------------------------------------- normalize

def normalize(img: GrayImage, target_mean: float = 0.5, target_var: float = 0.04) -> GrayImage:
    """Mean/variance normalization applied symmetrically around the image mean, then clamped."""
    px = img.pixels
    m, v = px.mean(), px.var()
    if v <= 1e-12:
        raise ValueError("cannot normalize a zero-variance image")
    out = target_mean + (px - m) * np.sqrt(target_var / v)
    return GrayImage(np.clip(out, 0.0, 1.0), img.dpi)


# --------------------------------------------------------------- orientation

def _block_sums(a: np.ndarray, block: int) -> np.ndarray:
    h, w = a.shape
    bh, bw = -(-h // block), -(-w // block)
    padded = np.zeros((bh * block, bw * block))
    padded[:h, :w] = a
    return padded.reshape(bh, block, bw, block).sum(axis=(1, 3))


def estimate_orientation(img: GrayImage, block_size: int = 16) -> OrientationField:
    """Least-squares ridge orientation from Sobel gradients, per block."""
    if block_size < 8:
        raise ValueError("block_size must be >= 8")
    px = img.pixels
    gx = ndimage.sobel(px, axis=1, mode="reflect")
    gy = ndimage.sobel(px, axis=0, mode="reflect")
    gxy = _block_sums(2.0 * gx * gy, block_size)
    gdiff = _block_sums(gx * gx - gy * gy, block_size)
    gsum = _block_sums(gx * gx + gy * gy, block_size)
    theta = np.mod(np.pi / 2 + 0.5 * np.arctan2(gxy, gdiff), np.pi)
    with np.errstate(invalid="ignore", divide="ignore"):
        coh = np.where(gsum > 1e-12, np.hypot(gxy, gdiff) / gsum, 0.0)
    return OrientationField(block_size, theta, np.clip(coh, 0.0, 1.0))


def smooth_orientation(field_: OrientationField, window: int = 3) -> OrientationField:
    """Average doubled-angle vectors over ``window`` x ``window`` blocks, weighted by coherence."""
    if window <= 1:
        return field_
    w = field_.coherence + 1e-9
    c = ndimage.uniform_filter(w * np.cos(2 * field_.theta), window, mode="nearest")
    s = ndimage.uniform_filter(w * np.sin(2 * field_.theta), window, mode="nearest")
    theta = np.mod(0.5 * np.arctan2(s, c), np.pi)
    return OrientationField(field_.block_size, theta, field_.coherence.copy())


# ---------------------------------------------------------------- frequency

def _signature_period(signature: np.ndarray) -> float:
    """Mean spacing between interior local maxima of a 1-D signature; 0 if undefined."""
    if signature.size < 5 or np.ptp(signature) < 1e-6:
        return 0.0
    s = signature
    peaks = np.flatnonzero((s[1:-1] > s[:-2]) & (s[1:-1] >= s[2:])) + 1
    # drop shallow wiggles
    if peaks.size:
        peaks = peaks[s[peaks] - s.min() > 0.25 * np.ptp(s)]
    if peaks.size < 2:
        return 0.0
    return float(peaks[-1] - peaks[0]) / (peaks.size - 1)


def estimate_frequency(img: GrayImage, orientation: OrientationField,
                       window: int | None = None, min_coherence: float = 0.0) -> FrequencyMap:
    """Ridge frequency per block from the x-signature across the ridges.

    Pixels in a ``window`` square around each block centre are binned by their
    signed distance along the ridge normal; the mean peak spacing of the
    binned profile is the ridge period.
    """
    block = orientation.block_size
    window = window or 2 * block
    px = img.pixels
    h, w = px.shape
    bh, bw = orientation.theta.shape
    freq = np.zeros((bh, bw))
    half = window // 2
    off = np.arange(-half, window - half)
    dy, dx = np.meshgrid(off, off, indexing="ij")
    for by in range(bh):
        for bx in range(bw):
            if orientation.coherence[by, bx] < min_coherence:
                continue
            cy = min(by * block + block // 2, h - 1)
            cx = min(bx * block + block // 2, w - 1)
            ys, xs = cy + dy, cx + dx
            inside = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
            if inside.sum() < window:
                continue
            th = orientation.theta[by, bx]
            # coordinate across the ridges (normal to ridge direction)
            u = (-np.sin(th) * dx + np.cos(th) * dy)[inside]
            vals = px[ys[inside], xs[inside]]
            bins = np.round(u - u.min()).astype(int)
            counts = np.bincount(bins)
            sums = np.bincount(bins, weights=vals)
            ok = counts > 0
            sig = np.interp(np.arange(counts.size), np.flatnonzero(ok), sums[ok] / counts[ok])
            period = _signature_period(sig)
            if MIN_PERIOD - 1e-9 <= period <= MAX_PERIOD + 1e-9:
                freq[by, bx] = 1.0 / period
    return FrequencyMap(block, freq)


# ------------------------------------------------------------- binarization

def _local_mean(px: np.ndarray, size: int) -> np.ndarray:
    """Mean over a ``size`` x ``size`` window (reflect-padded) via an integral image."""
    lo = size // 2
    hi = size - lo
    p = np.pad(px, ((lo, hi), (lo, hi)), mode="reflect")
    ii = np.zeros((p.shape[0] + 1, p.shape[1] + 1))
    ii[1:, 1:] = p.cumsum(0).cumsum(1)
    h, w = px.shape
    s = ii[size:size + h, size:size + w] - ii[:h, size:size + w] - ii[size:size + h, :w] + ii[:h, :w]
    return s / (size * size)


def binarize(img: GrayImage, window: int = 16) -> GrayImage:
    """Ridge (dark) -> 1, background -> 0 against the local mean; ties go to background."""
    px = img.pixels
    mean = _local_mean(px, window)
    tol = 1e-9 * max(1.0, float(np.abs(px).max()))
    return GrayImage((px < mean - tol).astype(np.float64), img.dpi)


# ----------------------------------------------------------------- thinning

def _neighbours(b: np.ndarray) -> list[np.ndarray]:
    """P2..P9 clockwise from north, on a zero-padded copy."""
    p = np.pad(b, 1)
    h, w = b.shape
    return [
        p[0:h, 1:w + 1], p[0:h, 2:w + 2], p[1:h + 1, 2:w + 2], p[2:h + 2, 2:w + 2],
        p[2:h + 2, 1:w + 1], p[2:h + 2, 0:w], p[1:h + 1, 0:w], p[0:h, 0:w],
    ]


def _zhang_suen_pass(b: np.ndarray) -> bool:
    changed = False
    for step in (0, 1):
        n = _neighbours(b)
        p2, p3, p4, p5, p6, p7, p8, p9 = n
        count = sum(n)
        ring = n + [p2]
        transitions = sum((ring[i] == 0) & (ring[i + 1] == 1) for i in range(8))
        if step == 0:
            c = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
        else:
            c = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
        kill = (b == 1) & (count >= 2) & (count <= 6) & (transitions == 1) & c
        if kill.any():
            b[kill] = 0
            changed = True
    return changed


def _ring_bits(code: int) -> list[int]:
    return [(code >> i) & 1 for i in range(8)]


def _simple_table() -> np.ndarray:
    """Lookup over 8-neighbour codes: True where deleting the centre keeps topology
    (one 8-connected foreground component and one 4-adjacent background component)."""
    # ring order P2..P9 as offsets (dy, dx)
    offs = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
    table = np.zeros(256, dtype=bool)
    for code in range(256):
        bits = _ring_bits(code)
        fg = {offs[i] for i in range(8) if bits[i]}
        bg4 = {o for i, o in enumerate(offs) if not bits[i] and (o[0] == 0 or o[1] == 0)}
        bg = {offs[i] for i in range(8) if not bits[i]}
        table[code] = (
            len(fg) >= 2
            and _components(fg, diag=True) == 1
            and _components(bg, diag=False, seeds=bg4) == 1
        )
    return table


def _components(cells: set, diag: bool, seeds: set | None = None) -> int:
    """Connected components of ``cells`` (within the 3x3 ring); count only those touching ``seeds``."""
    todo, comps = set(cells), 0
    while todo:
        start = todo.pop()
        comp, stack = {start}, [start]
        while stack:
            y, x = stack.pop()
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if (dy, dx) == (0, 0) or (not diag and dy and dx):
                        continue
                    q = (y + dy, x + dx)
                    if q in todo:
                        todo.discard(q)
                        comp.add(q)
                        stack.append(q)
        if seeds is None or comp & seeds:
            comps += 1
    return comps


_SIMPLE = _simple_table()


def _ring_code(b: np.ndarray, y: int, x: int) -> int:
    h, w = b.shape
    offs = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
    code = 0
    for i, (dy, dx) in enumerate(offs):
        yy, xx = y + dy, x + dx
        if 0 <= yy < h and 0 <= xx < w and b[yy, xx]:
            code |= 1 << i
    return code


def _break_squares(b: np.ndarray) -> bool:
    """Delete simple pixels of 2x2 all-ridge blocks, scanning in row-major order."""
    changed = False
    while True:
        sq = b[:-1, :-1] & b[:-1, 1:] & b[1:, :-1] & b[1:, 1:]
        if not sq.any():
            return changed
        progress = False
        for y, x in zip(*np.nonzero(sq)):
            if not (b[y, x] and b[y, x + 1] and b[y + 1, x] and b[y + 1, x + 1]):
                continue
            for py, px_ in ((y, x), (y, x + 1), (y + 1, x), (y + 1, x + 1)):
                if _SIMPLE[_ring_code(b, py, px_)]:
                    b[py, px_] = 0
                    progress = changed = True
                    break
        if not progress:
            return changed


def thin(binary: GrayImage) -> GrayImage:
    """Zhang-Suen thinning to a fixpoint, with leftover 2x2 blocks broken by simple-point deletion."""
    px = binary.pixels
    if not np.all((px == 0.0) | (px == 1.0)):
        raise ValueError("thin() needs a strictly 0/1 image")
    b = px.astype(np.uint8)
    while True:
        while _zhang_suen_pass(b):
            pass
        if not _break_squares(b):
            break
    return GrayImage(b.astype(np.float64), binary.dpi)
