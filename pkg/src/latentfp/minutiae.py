"""Crossing-number minutiae extraction, ground-truth pairing and rendering."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from latentfp.errors import DataError, FormatError
from latentfp.imaging import GrayImage, binarize, thin

ENDING, BIFURCATION = "ending", "bifurcation"
KINDS = (ENDING, BIFURCATION)
TWO_PI = 2 * math.pi
TEMPLATE_HEADER = "#LFPM v1"

# ring order P2..P9, clockwise from north, as (dy, dx)
RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass(frozen=True)
class Minutia:
    x: float
    y: float
    direction: float
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown minutia kind {self.kind!r}")


def angle_diff(a: float, b: float) -> float:
    """Absolute angular difference in [0, pi], angles compared mod 2*pi."""
    d = abs(a - b) % TWO_PI
    return min(d, TWO_PI - d)


# ------------------------------------------------------------- extraction

def crossing_number(code: int) -> int:
    """Half the number of 0/1 changes around the ring encoded by bits P2..P9 of ``code``."""
    bits = [(code >> i) & 1 for i in range(8)]
    return sum(abs(bits[i] - bits[(i + 1) % 8]) for i in range(8)) // 2


CN_TABLE = np.array([crossing_number(c) for c in range(256)], dtype=np.int8)


def ring_codes(skel: np.ndarray) -> np.ndarray:
    p = np.pad(skel.astype(np.uint8), 1)
    h, w = skel.shape
    code = np.zeros((h, w), dtype=np.int32)
    for i, (dy, dx) in enumerate(RING):
        code |= p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w].astype(np.int32) << i
    return code


@dataclass(frozen=True)
class ExtractorConfig:
    smoothing_sigma: float = 1.0
    binarize_window: int = 16
    min_component_px: int = 12
    border_px: int = 8
    trace_px: int = 5
    prune_px: float = 5.0


def ridge_map(img: GrayImage, cfg: ExtractorConfig = ExtractorConfig()) -> np.ndarray:
    """Smoothed, binarized ridge map with small ridge and valley specks removed, as a bool array."""
    px = img.pixels
    if cfg.smoothing_sigma > 0:
        px = ndimage.gaussian_filter(px, cfg.smoothing_sigma, mode="reflect")
    ridges = binarize(GrayImage(np.clip(px, 0, 1), img.dpi), cfg.binarize_window).pixels > 0.5
    if cfg.min_component_px > 1:
        ridges = _drop_small(ridges, cfg.min_component_px)
        ridges = ~_drop_small(~ridges, cfg.min_component_px)
    return ridges


def skeletonize(img: GrayImage, cfg: ExtractorConfig = ExtractorConfig()) -> np.ndarray:
    """Thinned :func:`ridge_map` as a bool array."""
    return thin(GrayImage(ridge_map(img, cfg).astype(np.float64), img.dpi)).pixels > 0.5


def _drop_small(mask: np.ndarray, min_px: int) -> np.ndarray:
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    if n == 0:
        return mask
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_px
    keep[0] = False
    return keep[labels]


def _trace(skel: np.ndarray, start: tuple[int, int], first: tuple[int, int], blocked: set, steps: int) -> tuple[int, int]:
    """Walk from ``first`` away from ``start`` for up to ``steps`` pixels; returns the last pixel."""
    h, w = skel.shape
    visited = {start, first} | blocked
    cur = first
    for _ in range(steps - 1):
        nxt = None
        for dy, dx in sorted(RING, key=lambda o: abs(o[0]) + abs(o[1])):
            q = (cur[0] + dy, cur[1] + dx)
            if 0 <= q[0] < h and 0 <= q[1] < w and skel[q] and q not in visited:
                nxt = q
                break
        if nxt is None:
            break
        visited.add(nxt)
        cur = nxt
    return cur


def _branch_starts(skel: np.ndarray, y: int, x: int) -> list[tuple[int, int]]:
    """One pixel per run of set ring neighbours, preferring 4-neighbours."""
    h, w = skel.shape
    on = [0 <= y + dy < h and 0 <= x + dx < w and bool(skel[y + dy, x + dx]) for dy, dx in RING]
    if all(on) or not any(on):
        return []
    start = next(i for i in range(8) if not on[i])
    runs: list[list[int]] = []
    for k in range(1, 9):
        i = (start + k) % 8
        if on[i]:
            if runs and on[(i - 1) % 8]:
                runs[-1].append(i)
            else:
                runs.append([i])
    out = []
    for run in runs:
        best = min(run, key=lambda i: i % 2)  # even ring index = 4-neighbour
        out.append((y + RING[best][0], x + RING[best][1]))
    return out


def _direction(origin: tuple[int, int], tip: tuple[int, int]) -> float | None:
    dy, dx = tip[0] - origin[0], tip[1] - origin[1]
    if dy == 0 and dx == 0:
        return None
    return math.atan2(dy, dx) % TWO_PI


def _centroid(skel: np.ndarray, y: int, x: int) -> tuple[float, float]:
    y0, y1 = max(y - 1, 0), min(y + 2, skel.shape[0])
    x0, x1 = max(x - 1, 0), min(x + 2, skel.shape[1])
    ys, xs = np.nonzero(skel[y0:y1, x0:x1])
    return float(xs.mean() + x0), float(ys.mean() + y0)


def minutiae_from_skeleton(skel: np.ndarray, cfg: ExtractorConfig = ExtractorConfig()) -> list[Minutia]:
    skel = skel.astype(bool)
    h, w = skel.shape
    cn = np.where(skel, CN_TABLE[ring_codes(skel)], 0)
    inner = np.zeros_like(skel)
    b = cfg.border_px
    inner[b:h - b, b:w - b] = True
    found: list[Minutia] = []

    for y, x in zip(*np.nonzero((cn == 1) & inner)):
        starts = _branch_starts(skel, y, x)
        if len(starts) != 1:
            continue
        tip = _trace(skel, (y, x), starts[0], set(), cfg.trace_px)
        d = _direction((y, x), tip)
        if d is not None:
            cx, cy = _centroid(skel, y, x)
            found.append(Minutia(cx, cy, d, ENDING))

    # adjacent junction pixels describe one bifurcation
    labels, n = ndimage.label((cn == 3) & inner, structure=np.ones((3, 3)))
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        y, x = int(ys[0]), int(xs[0])
        starts = [s for s in _branch_starts(skel, y, x) if labels[s] != lab]
        cluster = set(zip(ys.tolist(), xs.tolist()))
        if len(ys) > 1:
            starts = []
            for cy_, cx_ in cluster:
                for s in _branch_starts(skel, cy_, cx_):
                    if s not in cluster and s not in starts:
                        starts.append(s)
        if len(starts) != 3:
            continue
        dirs = []
        for s in starts:
            tip = _trace(skel, (y, x), s, cluster | (set(starts) - {s}), cfg.trace_px)
            dirs.append(_direction((y, x), tip))
        if any(d is None for d in dirs):
            continue
        # the two branches closest in angle form the fork, the third is the stem;
        # averaging the fork bisector with the reversed stem damps junction skew
        pairs = [(angle_diff(dirs[i], dirs[j]), i, j) for i, j in ((0, 1), (0, 2), (1, 2))]
        _, i, j = min(pairs)
        stem = ({0, 1, 2} - {i, j}).pop()
        bx = math.cos(dirs[i]) + math.cos(dirs[j])
        by = math.sin(dirs[i]) + math.sin(dirs[j])
        nb = math.hypot(bx, by)
        if nb < 1e-12:
            continue
        vx = bx / nb - math.cos(dirs[stem])
        vy = by / nb - math.sin(dirs[stem])
        if abs(vx) < 1e-12 and abs(vy) < 1e-12:
            continue
        found.append(Minutia(float(xs.mean()), float(ys.mean()), math.atan2(vy, vx) % TWO_PI, BIFURCATION))

    found = _prune(found, cfg.prune_px)
    return sorted(found, key=lambda m: (m.y, m.x, m.kind, m.direction))


def _prune(ms: list[Minutia], radius: float) -> list[Minutia]:
    """Drop both members of any pair closer than ``radius`` whose directions oppose each other."""
    drop = set()
    for i in range(len(ms)):
        for j in range(i + 1, len(ms)):
            a, b = ms[i], ms[j]
            if math.hypot(a.x - b.x, a.y - b.y) < radius and angle_diff(a.direction, b.direction) > 2 * math.pi / 3:
                drop.update((i, j))
    return [m for k, m in enumerate(ms) if k not in drop]


def extract_minutiae(img: GrayImage, cfg: ExtractorConfig = ExtractorConfig()) -> list[Minutia]:
    """Minutiae sorted by (y, x)."""
    return minutiae_from_skeleton(skeletonize(img, cfg), cfg)


# ---------------------------------------------------------------- matching

@dataclass
class MatchReport:
    genuine_recovered: int
    fake_introduced: int
    pairs: list[tuple[int, int, float, float]] = field(default_factory=list)
    n_gt: int = 0
    n_extracted: int = 0

    def __add__(self, other: "MatchReport") -> "MatchReport":
        return MatchReport(
            self.genuine_recovered + other.genuine_recovered,
            self.fake_introduced + other.fake_introduced,
            [],
            self.n_gt + other.n_gt,
            self.n_extracted + other.n_extracted,
        )

    def to_tsv(self) -> str:
        lines = [
            f"genuine_recovered\t{self.genuine_recovered}",
            f"fake_introduced\t{self.fake_introduced}",
            f"n_gt\t{self.n_gt}",
            f"n_extracted\t{self.n_extracted}",
            "#gt_index\textracted_index\tdistance_px\tangle_diff_rad",
        ]
        lines += [f"{i}\t{j}\t{d:.6f}\t{a:.6f}" for i, j, d, a in self.pairs]
        return "\n".join(lines) + "\n"


# Published counts over the full benchmark, kept for side-by-side display only.
PUBLISHED_COUNTS = {
    "FingerGAN (published)": (1431, 11039),
    "GAN enhancer (published)": (1982, 8361),
}


def render_table(columns: dict[str, MatchReport], include_published: bool = True) -> str:
    """Two-row comparison table of genuine/fake counts, one column per method."""
    cols = {name: (r.genuine_recovered, r.fake_introduced) for name, r in columns.items()}
    if include_published:
        cols.update(PUBLISHED_COUNTS)
    names = list(cols)
    width = max([len(n) for n in names] + [8])
    head = f"{'':<28}" + "".join(f"{n:>{width + 2}}" for n in names)
    rows = [head]
    for label, k in (("Genuine minutiae recovered", 0), ("Fake minutiae introduced", 1)):
        rows.append(f"{label:<28}" + "".join(f"{cols[n][k]:>{width + 2}}" for n in names))
    return "\n".join(rows)


def match_minutiae(gt: Sequence[Minutia], extracted: Sequence[Minutia],
                   tol_px: float = 12.0, tol_rad: float = math.pi / 6) -> MatchReport:
    """Greedy nearest-first one-to-one pairing (ties: smaller distance, then smaller gt index)."""
    if tol_px <= 0 or not (0 < tol_rad <= math.pi):
        raise ValueError("need tol_px > 0 and tol_rad in (0, pi]")
    cands = candidate_pairs(gt, extracted, tol_px, tol_rad)
    used_g, used_e, pairs = set(), set(), []
    for d, i, j, a in cands:
        if i in used_g or j in used_e:
            continue
        used_g.add(i)
        used_e.add(j)
        pairs.append((i, j, d, a))
    return MatchReport(len(pairs), len(extracted) - len(pairs), pairs, len(gt), len(extracted))


def candidate_pairs(gt: Sequence[Minutia], extracted: Sequence[Minutia], tol_px: float, tol_rad: float):
    """Admissible (distance, gt_index, extracted_index, angle_diff), sorted for greedy pairing."""
    if not gt or not extracted:
        return []
    g = np.array([(m.x, m.y, m.direction) for m in gt])
    e = np.array([(m.x, m.y, m.direction) for m in extracted])
    gk = np.array([m.kind for m in gt])
    ek = np.array([m.kind for m in extracted])
    dist = np.hypot(g[:, None, 0] - e[None, :, 0], g[:, None, 1] - e[None, :, 1])
    da = np.abs(g[:, None, 2] - e[None, :, 2]) % TWO_PI
    da = np.minimum(da, TWO_PI - da)
    ok = (dist <= tol_px) & (da <= tol_rad) & (gk[:, None] == ek[None, :])
    ii, jj = np.nonzero(ok)
    out = [(float(dist[i, j]), int(i), int(j), float(da[i, j])) for i, j in zip(ii, jj)]
    out.sort(key=lambda t: (t[0], t[1], t[2]))
    return out


# ---------------------------------------------------------------- templates

def format_template(ms: Iterable[Minutia]) -> str:
    lines = [TEMPLATE_HEADER]
    lines += [f"{m.x!r}\t{m.y!r}\t{m.direction!r}\t{m.kind}" for m in ms]
    return "\n".join(lines) + "\n"


def parse_template(text: str, source: str = "<template>") -> list[Minutia]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TEMPLATE_HEADER:
        raise FormatError(f"{source}: missing {TEMPLATE_HEADER!r} header", 0)
    out = []
    offset = len(lines[0]) + 1
    for line in lines[1:]:
        if line.strip():
            parts = line.split("\t")
            try:
                if len(parts) != 4:
                    raise ValueError(f"expected 4 fields, got {len(parts)}")
                out.append(Minutia(float(parts[0]), float(parts[1]), float(parts[2]), parts[3]))
            except ValueError as exc:
                raise FormatError(f"{source}: {exc}", offset) from None
        offset += len(line) + 1
    return out


def save_template(ms: Iterable[Minutia], path: str | Path) -> None:
    path = Path(path)
    if not path.parent.is_dir():
        raise DataError(f"directory does not exist: {path.parent}")
    path.write_text(format_template(ms), encoding="utf-8")


def load_template(path: str | Path) -> list[Minutia]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"template not found: {path}")
    return parse_template(path.read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------- rendering

RED = (255, 0, 0)
BLUE = (0, 0, 255)


def render_minutiae(img: GrayImage, minutiae: Sequence[Minutia], radius: float = 4.0, tick: float = 6.0) -> np.ndarray:
    """8-bit RGB overlay: endings as red circles, bifurcations blue, each with a direction tick."""
    gray = img.to_uint8()
    rgb = np.stack([gray, gray, gray], axis=-1)
    h, w = gray.shape
    for m in minutiae:
        color = RED if m.kind == ENDING else BLUE
        y0, y1 = max(int(m.y - tick - 1), 0), min(int(m.y + tick + 2), h)
        x0, x1 = max(int(m.x - tick - 1), 0), min(int(m.x + tick + 2), w)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        ring = np.abs(np.hypot(xx - m.x, yy - m.y) - radius) < 0.6
        rgb[y0:y1, x0:x1][ring] = color
        for t in np.linspace(radius, tick, 8):
            px = int(round(m.x + t * math.cos(m.direction)))
            py = int(round(m.y + t * math.sin(m.direction)))
            if 0 <= px < w and 0 <= py < h and math.hypot(px - m.x, py - m.y) <= tick:
                rgb[py, px] = color
    return rgb


def encode_ppm(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def save_rgb(rgb: np.ndarray, path: str | Path) -> None:
    """PNG for ``.png`` paths, binary PPM otherwise."""
    path = Path(path)
    if not path.parent.is_dir():
        raise DataError(f"directory does not exist: {path.parent}")
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")
    else:
        path.write_bytes(encode_ppm(rgb))
