"""Synthetic master prints, latent degradation and paired corpus building.

Master prints are rendered from an analytic phase field
``cos(phase_background + sum_i s_i * atan2(y - y_i, x - x_i))``: each phase
vortex ``(x_i, y_i, s_i = +-1)`` produces exactly one minutia, so the planted
positions, kinds and directions are known in closed form.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from latentfp.errors import DataError, ShapeError
from latentfp.imaging import GrayImage, load_image, save_image
from latentfp.gabor import GaborBankConfig, gabor_enhance

ENDING, BIFURCATION = "ending", "bifurcation"


# ------------------------------------------------------------ master prints

@dataclass(frozen=True)
class Vortex:
    x: float
    y: float
    charge: int


@dataclass(frozen=True)
class MasterSpec:
    """Parameters of one synthetic finger (a 'subject')."""

    height: int
    width: int
    period: float
    center: tuple[float, float]
    warp_amp: float
    warp_wavelength: float
    warp_phase: float
    warp_angle: float
    vortices: tuple[Vortex, ...] = ()

    def background_phase(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        along = x * math.cos(self.warp_angle) + y * math.sin(self.warp_angle)
        warp = self.warp_amp * np.sin(2 * np.pi * along / self.warp_wavelength + self.warp_phase)
        return 2 * np.pi / self.period * (np.hypot(x - cx, y - cy) + warp)

    def phase(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ph = self.background_phase(x, y)
        for v in self.vortices:
            ph = ph + v.charge * np.arctan2(y - v.y, x - v.x)
        return ph


@dataclass(frozen=True)
class PlantedMinutia:
    x: float
    y: float
    direction: float
    kind: str


@dataclass(frozen=True)
class Impression:
    """Rigid re-placement of a finger: rotate by ``angle`` about the image centre, then shift."""

    angle: float = 0.0
    dx: float = 0.0
    dy: float = 0.0

    def to_finger(self, x, y, h: int, w: int):
        """Map image coordinates of this impression back to finger coordinates."""
        cx, cy = (w - 1) / 2, (h - 1) / 2
        c, s = math.cos(self.angle), math.sin(self.angle)
        qx, qy = x - cx - self.dx, y - cy - self.dy
        return c * qx + s * qy + cx, -s * qx + c * qy + cy

    def to_image(self, x, y, h: int, w: int):
        cx, cy = (w - 1) / 2, (h - 1) / 2
        c, s = math.cos(self.angle), math.sin(self.angle)
        qx, qy = x - cx, y - cy
        return c * qx - s * qy + cx + self.dx, s * qx + c * qy + cy + self.dy


def render_master(spec: MasterSpec, impression: Impression = Impression()) -> GrayImage:
    """Ridges dark: intensity ``0.5 + 0.5 cos(phase)``."""
    y, x = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    fx, fy = impression.to_finger(x, y, spec.height, spec.width)
    return GrayImage(np.clip(0.5 + 0.5 * np.cos(spec.phase(fx, fy)), 0.0, 1.0))


def _phase_gradient(spec: MasterSpec, x: float, y: float, h: float = 1e-3) -> np.ndarray:
    f = spec.background_phase
    gx = (f(np.array(x + h), np.array(y)) - f(np.array(x - h), np.array(y))) / (2 * h)
    gy = (f(np.array(x), np.array(y + h)) - f(np.array(x), np.array(y - h))) / (2 * h)
    return np.array([float(gx), float(gy)])


def _fork_side(spec: MasterSpec, v: Vortex) -> np.ndarray:
    """Unit vector pointing to the side of the vortex that holds one extra ridge period."""
    k = _phase_gradient(spec, v.x, v.y)
    k /= np.linalg.norm(k)
    e2 = np.array([-k[1], k[0]])
    return -v.charge * e2


def planted_minutiae(spec: MasterSpec, impression: Impression = Impression(), probe: float = 3.0) -> list[PlantedMinutia]:
    """Ground-truth minutiae of a rendered master, in image coordinates.

    Along the fork side the inserted line is a ridge (dark) for an ending and
    a valley for a bifurcation. Direction points into the fork side in both
    cases: along the ridge for endings, between the branches for bifurcations.
    """
    out = []
    for v in spec.vortices:
        fd = _fork_side(spec, v)
        px, py = v.x + probe * fd[0], v.y + probe * fd[1]
        dark = math.cos(float(spec.phase(np.array(px), np.array(py)))) < 0
        ix, iy = impression.to_image(v.x, v.y, spec.height, spec.width)
        direction = math.atan2(fd[1], fd[0]) + impression.angle
        out.append(PlantedMinutia(float(ix), float(iy), direction % (2 * math.pi), ENDING if dark else BIFURCATION))
    return out


def random_master(seed: int, height: int = 192, width: int = 192, n_minutiae: int = 12,
                  period: tuple[float, float] = (8.0, 10.0), margin: int = 20,
                  min_spacing: float = 24.0) -> MasterSpec:
    """Random curved-ridge finger with ``n_minutiae`` planted vortices (alternating charge).

    Vortices are drawn inside ``margin`` at least ``min_spacing`` apart, then each
    slides by at most half a ridge period while its kind is settled.
    """
    rng = np.random.default_rng(seed)
    size = max(height, width)
    ang = rng.uniform(0, 2 * np.pi)
    dist = rng.uniform(1.2, 2.5) * size
    center = (width / 2 + dist * math.cos(ang), height / 2 + dist * math.sin(ang))
    spec = MasterSpec(
        height=height,
        width=width,
        period=float(rng.uniform(*period)),
        center=center,
        warp_amp=float(rng.uniform(2.0, 6.0)),
        warp_wavelength=float(rng.uniform(1.0, 2.0) * size),
        warp_phase=float(rng.uniform(0, 2 * np.pi)),
        warp_angle=float(rng.uniform(0, np.pi)),
    )
    points: list[tuple[float, float]] = []
    tries = 0
    while len(points) < n_minutiae and tries < 10000:
        tries += 1
        p = (rng.uniform(margin, width - margin), rng.uniform(margin, height - margin))
        if all(math.hypot(p[0] - q[0], p[1] - q[1]) >= min_spacing for q in points):
            points.append(p)
    kinds = rng.integers(0, 2, size=len(points))
    vortices = [Vortex(x, y, 1 if i % 2 == 0 else -1) for i, (x, y) in enumerate(points)]
    spec = replace(spec, vortices=tuple(vortices))
    return _settle_kinds(spec, [ENDING if k else BIFURCATION for k in kinds])


def _settle_kinds(spec: MasterSpec, kinds: Sequence[str], rounds: int = 3) -> MasterSpec:
    """Slide each vortex across the ridges so the inserted line sits on a ridge centre
    (ending) or valley centre (bifurcation), removing kind ambiguity."""
    vortices = list(spec.vortices)
    for _ in range(rounds):
        current = replace(spec, vortices=tuple(vortices))
        moved = []
        for v, kind in zip(vortices, kinds):
            fd = _fork_side(current, v)
            k = _phase_gradient(current, v.x, v.y)
            kn = np.linalg.norm(k)
            ph = float(current.phase(np.array(v.x + 3 * fd[0]), np.array(v.y + 3 * fd[1])))
            target = math.pi if kind == ENDING else 0.0
            err = math.remainder(target - ph, 2 * math.pi)
            step = err / kn * (k / kn)
            moved.append(Vortex(v.x + float(step[0]), v.y + float(step[1]), v.charge))
        vortices = moved
    return replace(spec, vortices=tuple(vortices))


# ---------------------------------------------------------------- degradation

@dataclass(frozen=True)
class NoiseRecipe:
    seed: int = 0
    line_count: int = 0
    line_width_px: tuple[float, float] = (1.0, 3.0)
    blob_count: int = 0
    blob_sigma_px: tuple[float, float] = (3.0, 8.0)
    occlusion_fraction: float = 0.0
    contrast_scale: float = 1.0
    background_amplitude: float = 0.0
    gaussian_sigma: float = 0.0
    speckle_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.occlusion_fraction < 1.0:
            raise ValueError("occlusion_fraction must lie in [0, 1)")
        if not 0.0 < self.contrast_scale <= 1.0:
            raise ValueError("contrast_scale must lie in (0, 1]")
        if not 0.0 <= self.background_amplitude <= 0.5:
            raise ValueError("background_amplitude must lie in [0, 0.5]")
        if self.gaussian_sigma < 0 or self.speckle_sigma < 0:
            raise ValueError("blur and speckle sigmas must be >= 0")

    @classmethod
    def sample(cls, seed: int) -> "NoiseRecipe":
        """Default-strength recipe drawn from ``seed``."""
        rng = np.random.default_rng([seed, 0x5EED])
        return cls(
            seed=seed,
            line_count=int(rng.integers(4, 9)),
            line_width_px=(1.5, 3.5),
            blob_count=int(rng.integers(3, 7)),
            blob_sigma_px=(3.0, 8.0),
            occlusion_fraction=float(rng.uniform(0.05, 0.15)),
            contrast_scale=float(rng.uniform(0.35, 0.6)),
            background_amplitude=float(rng.uniform(0.1, 0.25)),
            gaussian_sigma=float(rng.uniform(0.8, 1.5)),
            speckle_sigma=float(rng.uniform(0.2, 0.3)),
        )


def _value_noise(rng: np.random.Generator, shape: tuple[int, int], cell: int = 32) -> np.ndarray:
    """Smooth field in [-1, 1] from a coarse random lattice with cubic interpolation."""
    h, w = shape
    gh, gw = h // cell + 3, w // cell + 3
    lattice = rng.uniform(-1.0, 1.0, size=(gh, gw))
    y = np.arange(h) / cell + 1.0
    x = np.arange(w) / cell + 1.0
    yy, xx = np.meshgrid(y, x, indexing="ij")
    field_ = ndimage.map_coordinates(lattice, [yy, xx], order=3, mode="nearest")
    return np.clip(field_, -1.0, 1.0)


def _stroke_mask(rng, shape, width: float) -> np.ndarray:
    """Anti-aliased coverage of one straight stroke crossing the image."""
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    px, py = rng.uniform(0, w), rng.uniform(0, h)
    ang = rng.uniform(0, np.pi)
    d = np.abs(-(x - px) * math.sin(ang) + (y - py) * math.cos(ang))
    return np.clip(width / 2 + 0.5 - d, 0.0, 1.0)


def _convex_patch(rng, shape, area: float) -> np.ndarray:
    """Random ellipse (a convex patch) of roughly ``area`` pixels."""
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    cx, cy = rng.uniform(0, w), rng.uniform(0, h)
    aspect = rng.uniform(0.5, 2.0)
    a = math.sqrt(area * aspect / math.pi)
    b = area / (math.pi * a)
    ang = rng.uniform(0, np.pi)
    u = (x - cx) * math.cos(ang) + (y - cy) * math.sin(ang)
    v = -(x - cx) * math.sin(ang) + (y - cy) * math.cos(ang)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def occlusion_mask(rng: np.random.Generator, shape: tuple[int, int], fraction: float) -> np.ndarray:
    """Union of convex patches covering ``fraction`` of the pixels (to within one pixel in a hundred)."""
    h, w = shape
    total = h * w
    mask = np.zeros(shape, dtype=bool)
    if fraction <= 0:
        return mask
    target = fraction * total
    while mask.sum() < target - 0.005 * total:
        need = target - mask.sum()
        patch = _convex_patch(rng, shape, area=min(need, rng.uniform(0.02, 0.08) * total))
        trial = mask | patch
        # shrink-free acceptance: reject patches that overshoot the tolerance band
        if trial.sum() <= target + 0.005 * total:
            mask = trial
    return mask


@dataclass
class DegradeResult:
    image: GrayImage
    occluded: np.ndarray
    stroked: np.ndarray


def degrade(img: GrayImage, recipe: NoiseRecipe, return_masks: bool = False) -> GrayImage | DegradeResult:
    """Apply contrast loss, background field, strokes and blobs, occlusion, blur and speckle, in that order."""
    rng = np.random.default_rng([recipe.seed, 0xD16])
    px = img.pixels.copy()
    shape = px.shape
    px = 0.5 + (px - 0.5) * recipe.contrast_scale
    if recipe.background_amplitude > 0:
        px = px + recipe.background_amplitude * _value_noise(rng, shape)
    stroked = np.zeros(shape, dtype=bool)
    for _ in range(recipe.line_count):
        cover = _stroke_mask(rng, shape, rng.uniform(*recipe.line_width_px))
        level = rng.choice([rng.uniform(0.0, 0.2), rng.uniform(0.8, 1.0)])
        px = px * (1 - cover) + level * cover
        stroked |= cover > 0.5
    if recipe.blob_count:
        y, x = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
        for _ in range(recipe.blob_count):
            cx, cy = rng.uniform(0, shape[1]), rng.uniform(0, shape[0])
            sig = rng.uniform(*recipe.blob_sigma_px)
            alpha = 0.85 * np.exp(-0.5 * ((x - cx) ** 2 + (y - cy) ** 2) / sig ** 2)
            level = rng.uniform(0.0, 0.3)
            px = px * (1 - alpha) + level * alpha
            stroked |= alpha > 0.4
    occluded = occlusion_mask(rng, shape, recipe.occlusion_fraction)
    if occluded.any():
        px[occluded] = float(np.mean(px[~occluded])) if (~occluded).any() else 0.5
    if recipe.gaussian_sigma > 0:
        px = ndimage.gaussian_filter(px, recipe.gaussian_sigma, mode="reflect")
    if recipe.speckle_sigma > 0:
        px = px + rng.normal(0.0, recipe.speckle_sigma, size=shape)
    out = GrayImage(np.clip(px, 0.0, 1.0), img.dpi)
    if return_masks:
        return DegradeResult(out, occluded, stroked)
    return out


# -------------------------------------------------------------------- corpus

@dataclass
class CorpusEntry:
    latent_path: Path
    gt_path: Path
    subject_id: int
    impression_id: int
    seed: int
    recipe: NoiseRecipe | None = None


@dataclass
class CorpusManifest:
    entries: list[CorpusEntry] = field(default_factory=list)
    root: Path | None = None

    HEADER = "#latent_path\tgt_path\tsubject_id\timpression_id\tseed"

    def __len__(self) -> int:
        return len(self.entries)

    def to_tsv(self) -> str:
        lines = [self.HEADER]
        for e in self.entries:
            lines.append(f"{e.latent_path.as_posix()}\t{e.gt_path.as_posix()}\t{e.subject_id}\t{e.impression_id}\t{e.seed}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "CorpusManifest":
        """Parse a manifest; relative paths resolve against the manifest's directory."""
        path = Path(path)
        if not path.is_file():
            raise DataError(f"manifest not found: {path}")
        root = path.parent
        entries = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
            try:
                entries.append(CorpusEntry(Path(parts[0]), Path(parts[1]), int(parts[2]), int(parts[3]), int(parts[4])))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
        return cls(entries, root)

    def resolve(self, p: Path) -> Path:
        return p if p.is_absolute() or self.root is None else self.root / p

    def validate(self) -> None:
        for e in self.entries:
            lp, gp = self.resolve(e.latent_path), self.resolve(e.gt_path)
            if not lp.is_file() or not gp.is_file():
                raise DataError(f"missing corpus file: {lp if not lp.is_file() else gp}")

    def load_pair(self, entry: CorpusEntry) -> tuple[GrayImage, GrayImage]:
        latent = load_image(self.resolve(entry.latent_path))
        gt = load_image(self.resolve(entry.gt_path))
        if latent.shape != gt.shape:
            raise ShapeError(f"latent {latent.shape} and ground truth {gt.shape} differ for subject {entry.subject_id}")
        return latent, gt


def build_corpus(
    masters: Sequence[GrayImage],
    recipes_per_image: int | Sequence[NoiseRecipe],
    out_dir: str | Path,
    seed: int = 0,
    gabor: GaborBankConfig = GaborBankConfig(),
) -> CorpusManifest:
    """Write ground truths (Gabor-enhanced masters), latents and ``manifest.tsv`` under ``out_dir``."""
    if not masters:
        raise ValueError("build_corpus needs at least one master image")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"cannot write corpus to {out}: {exc}") from None
    shape = masters[0].shape
    manifest = CorpusManifest(root=out)
    for si, master in enumerate(masters):
        if master.shape != shape:
            raise ShapeError(f"master {si} is {master.shape}, expected {shape}")
        gt = gabor_enhance(master, gabor)
        gt_name = Path(f"s{si:03d}_gt.pgm")
        save_image(gt, out / gt_name)
        if isinstance(recipes_per_image, int):
            recipes = [NoiseRecipe.sample(seed * 1_000_003 + si * 1000 + r) for r in range(recipes_per_image)]
        else:
            recipes = list(recipes_per_image)
        for ri, recipe in enumerate(recipes):
            latent = degrade(master, recipe)
            lat_name = Path(f"s{si:03d}_i{ri:02d}_latent.pgm")
            save_image(latent, out / lat_name)
            manifest.entries.append(CorpusEntry(lat_name, gt_name, si, ri, recipe.seed, recipe))
    manifest.write(out / "manifest.tsv")
    return manifest


def recipe_dict(recipe: NoiseRecipe) -> dict:
    return asdict(recipe)
