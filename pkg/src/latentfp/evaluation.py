"""Minutiae-based identification: pairwise similarity, score matrices and CMC curves."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from latentfp.errors import DataError
from latentfp.minutiae import BIFURCATION, Minutia

TWO_PI = 2 * math.pi

# Rank-1 identification rates reported for the full benchmark; display only.
PUBLISHED_RANK1 = {
    "GAN enhancer (published)": 0.48,
    "FingerGAN (published)": 0.35,
}


@dataclass(frozen=True)
class SimilarityConfig:
    tol_px: float = 12.0
    tol_rad: float = math.pi / 6
    rotation_step_deg: float = 10.0
    weight_px: float = 4.0
    chunk: int = 256


def _as_array(ms: Sequence[Minutia]) -> tuple[np.ndarray, np.ndarray]:
    if not ms:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int8)
    arr = np.array([(m.x, m.y, m.direction) for m in ms], dtype=np.float64)
    kinds = np.array([m.kind == BIFURCATION for m in ms], dtype=np.int8)
    return arr, kinds


def _directed(a, ka, b, kb, cfg: SimilarityConfig) -> tuple[float, float]:
    """Best alignment score moving ``a`` onto ``b``, and the rotation that achieves it.

    Every same-kind pair (i, j) proposes a rotation (their direction
    difference snapped to the rotation grid) and the translation that then
    lands ``a[i]`` on ``b[j]``. Each proposal is scored by greedy
    nearest-first pairing under the match tolerances.
    """
    if len(a) == 0 or len(b) == 0:
        return 0.0, 0.0
    step = math.radians(cfg.rotation_step_deg)
    n_rot = max(1, int(round(TWO_PI / step)))
    same = ka[:, None] == kb[None, :]
    ii, jj = np.nonzero(same)
    if len(ii) == 0:
        return 0.0, 0.0
    rot = np.rint(((b[jj, 2] - a[ii, 2]) % TWO_PI) / step).astype(np.int64) % n_rot
    best, best_theta = 0.0, 0.0
    for r in np.unique(rot):
        theta = r * step
        c, s = math.cos(theta), math.sin(theta)
        ax = c * a[:, 0] - s * a[:, 1]
        ay = s * a[:, 0] + c * a[:, 1]
        da = np.abs((a[:, 2] + theta)[:, None] - b[None, :, 2]) % TWO_PI
        da = np.minimum(da, TWO_PI - da)
        pi, pj = np.nonzero(same & (da <= cfg.tol_rad))
        if len(pi) == 0:
            continue
        sel = rot == r
        tx = b[jj[sel], 0] - ax[ii[sel]]
        ty = b[jj[sel], 1] - ay[ii[sel]]
        # only kind- and angle-compatible pairs can score, so distances are taken for those alone
        px, py = ax[pi], ay[pi]
        qx, qy = b[pj, 0], b[pj, 1]
        for k0 in range(0, len(tx), cfg.chunk):
            sl = slice(k0, k0 + cfg.chunk)
            score = _score_translations(px, py, qx, qy, pi, pj, tx[sl], ty[sl], cfg)
            if score > best:
                best, best_theta = score, theta
    return best, best_theta


def _score_translations(px, py, qx, qy, pi, pj, tx, ty, cfg: SimilarityConfig) -> float:
    """Greedy pairing score for each translation; ``(pi, pj)`` are the admissible index pairs."""
    dist = np.hypot(px[None, :] + tx[:, None] - qx[None, :], py[None, :] + ty[:, None] - qy[None, :])
    tt, kk = np.nonzero(dist <= cfg.tol_px)
    if len(tt) == 0:
        return 0.0
    d = dist[tt, kk]
    ai, bj = pi[kk], pj[kk]
    order = np.lexsort((bj, ai, d, tt))
    best = 0.0
    cur_t, used_a, used_b, score = -1, set(), set(), 0.0
    for k in order:
        t = tt[k]
        if t != cur_t:
            best = max(best, score)
            cur_t, used_a, used_b, score = t, set(), set(), 0.0
        i, j = ai[k], bj[k]
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        score += 1.0 / (1.0 + d[k] / cfg.weight_px)
    return max(best, score)


def similarity(a: Sequence[Minutia], b: Sequence[Minutia], cfg: SimilarityConfig = SimilarityConfig()) -> float:
    """Symmetric alignment score >= 0: the better of aligning a onto b and b onto a."""
    pa, ka = _as_array(a)
    pb, kb = _as_array(b)
    return max(_directed(pa, ka, pb, kb, cfg)[0], _directed(pb, kb, pa, ka, cfg)[0])


def align(a: Sequence[Minutia], b: Sequence[Minutia], cfg: SimilarityConfig = SimilarityConfig()) -> tuple[float, float]:
    """Score and rotation (radians, on the rotation grid) of the best alignment of ``a`` onto ``b``."""
    pa, ka = _as_array(a)
    pb, kb = _as_array(b)
    return _directed(pa, ka, pb, kb, cfg)


# ------------------------------------------------------------ score matrix

@dataclass
class ScoreMatrix:
    probes: list[str]
    gallery: list[str]
    scores: np.ndarray
    mate: list[str]

    def __post_init__(self):
        if self.scores.shape != (len(self.probes), len(self.gallery)):
            raise ValueError("score matrix shape does not match probe/gallery ids")
        missing = [p for p, m in zip(self.probes, self.mate) if m not in self.gallery]
        if missing:
            raise DataError(f"probe(s) without a mate in the gallery: {missing[:5]}")

    def to_tsv(self) -> str:
        lines = ["probe\tmate\t" + "\t".join(self.gallery)]
        for p, m, row in zip(self.probes, self.mate, self.scores):
            lines.append(f"{p}\t{m}\t" + "\t".join(f"{v:.9g}" for v in row))
        return "\n".join(lines) + "\n"


def build_score_matrix(probe_templates: Mapping[str, Sequence[Minutia]],
                       gallery_templates: Mapping[str, Sequence[Minutia]],
                       mate_map: Mapping[str, str],
                       cfg: SimilarityConfig = SimilarityConfig()) -> ScoreMatrix:
    """All-pairs similarity in the mappings' insertion order."""
    if not probe_templates or not gallery_templates:
        raise DataError("score matrix needs non-empty probe and gallery sets")
    probes, gallery = list(probe_templates), list(gallery_templates)
    for p in probes:
        if p not in mate_map:
            raise DataError(f"probe {p!r} has no mate assignment")
        if mate_map[p] not in gallery_templates:
            raise DataError(f"mate {mate_map[p]!r} of probe {p!r} is not in the gallery")
    scores = np.zeros((len(probes), len(gallery)))
    for i, p in enumerate(probes):
        for j, g in enumerate(gallery):
            scores[i, j] = similarity(probe_templates[p], gallery_templates[g], cfg)
    return ScoreMatrix(probes, gallery, scores, [mate_map[p] for p in probes])


# -------------------------------------------------------------------- CMC

@dataclass
class CMCCurve:
    rates: np.ndarray
    label: str = "curve"

    def rank1(self) -> float:
        return float(self.rates[0]) if len(self.rates) else 0.0

    def __eq__(self, other) -> bool:
        return (isinstance(other, CMCCurve) and self.label == other.label
                and np.array_equal(self.rates, other.rates))


def mate_ranks(matrix: ScoreMatrix) -> np.ndarray:
    """1 + number of gallery entries scoring strictly above the mate (the mate wins ties)."""
    gallery = np.array(matrix.gallery, dtype=object)
    ranks = np.empty(len(matrix.probes), dtype=np.int64)
    for i, m in enumerate(matrix.mate):
        row = matrix.scores[i]
        mate_score = row[gallery == m].max()
        ranks[i] = 1 + int(np.sum(row > mate_score))
    return ranks


def cmc(matrix: ScoreMatrix, label: str = "curve") -> CMCCurve:
    ranks = mate_ranks(matrix)
    k = np.arange(1, len(matrix.gallery) + 1)
    rates = (ranks[None, :] <= k[:, None]).mean(axis=1)
    return CMCCurve(rates.astype(np.float64), label)


def format_cmc_tsv(curves: Sequence[CMCCurve]) -> str:
    n = max(len(c.rates) for c in curves)
    lines = ["rank\t" + "\t".join(c.label for c in curves)]
    for k in range(n):
        cells = [repr(float(c.rates[k])) if k < len(c.rates) else "" for c in curves]
        lines.append(f"{k + 1}\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"


def parse_cmc_tsv(text: str) -> list[CMCCurve]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("rank\t"):
        raise DataError("CMC data must start with a 'rank' header")
    labels = lines[0].split("\t")[1:]
    cols: list[list[float]] = [[] for _ in labels]
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split("\t")[1:]
        for c, cell in enumerate(cells):
            if cell:
                cols[c].append(float(cell))
    return [CMCCurve(np.array(v), lab) for lab, v in zip(labels, cols)]


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_cmc_svg(curves: Sequence[CMCCurve], references: Mapping[str, float] | None = None,
                   width: int = 480, height: int = 320) -> str:
    """Self-contained SVG chart of identification rate against rank.

    ``references`` are drawn as hollow markers at rank 1.
    """
    left, right, top, bottom = 50, 170, 20, 40
    pw, ph = width - left - right, height - top - bottom
    n = max(len(c.rates) for c in curves)

    def sx(rank: float) -> float:
        return left + (pw * (rank - 1) / (n - 1) if n > 1 else pw / 2)

    def sy(rate: float) -> float:
        return top + ph * (1.0 - rate)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in range(0, 11, 2):
        y = sy(t / 10)
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" font-size="10" text-anchor="end">{t / 10:.1f}</text>')
    for rank in sorted({1, n, max(1, n // 2)}):
        out.append(f'<text x="{sx(rank):.2f}" y="{top + ph + 14}" font-size="10" text-anchor="middle">{rank}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 8}" font-size="11" text-anchor="middle">rank</text>')
    out.append(f'<text x="12" y="{top + ph / 2:.2f}" font-size="11" text-anchor="middle" '
               f'transform="rotate(-90 12 {top + ph / 2:.2f})">identification rate</text>')
    legend_y = top + 10
    for i, c in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(k + 1):.2f},{sy(float(r)):.2f}" for k, r in enumerate(c.rates))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        out.append(f'<rect x="{left + pw + 12}" y="{legend_y - 8}" width="12" height="3" fill="{color}"/>')
        out.append(f'<text x="{left + pw + 28}" y="{legend_y - 4}" font-size="10">{_escape(c.label)}</text>')
        legend_y += 16
    for i, (lab, rate) in enumerate((references or {}).items()):
        color = _PALETTE[(len(curves) + i) % len(_PALETTE)]
        out.append(f'<circle cx="{sx(1):.2f}" cy="{sy(rate):.2f}" r="4" fill="none" stroke="{color}"/>')
        out.append(f'<circle cx="{left + pw + 18}" cy="{legend_y - 6}" r="4" fill="none" stroke="{color}"/>')
        out.append(f'<text x="{left + pw + 28}" y="{legend_y - 4}" font-size="10">{_escape(lab)} rank-1</text>')
        legend_y += 16
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_cmc_plot(curves: Sequence[CMCCurve], out_path: str | Path,
                  references: Mapping[str, float] | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.tsv`` and ``<stem>.svg`` next to ``out_path``; returns both paths."""
    if not curves:
        raise ValueError("emit_cmc_plot needs at least one curve")
    out_path = Path(out_path)
    if not out_path.parent.is_dir():
        raise DataError(f"directory does not exist: {out_path.parent}")
    tsv, svg = out_path.with_suffix(".tsv"), out_path.with_suffix(".svg")
    try:
        tsv.write_text(format_cmc_tsv(curves), encoding="utf-8")
        svg.write_text(render_cmc_svg(curves, references), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write CMC outputs: {exc}") from None
    return tsv, svg
