"""Adversarial training of the enhancer and sliding-window inference."""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from latentfp.discriminator import Discriminator, DiscriminatorConfig
from latentfp.errors import DataError, NumericError, ShapeError
from latentfp.generator import Generator, GeneratorConfig
from latentfp.imaging import GrayImage, thin
from latentfp.minutiae import ridge_map
from latentfp.nn import ops
from latentfp.nn.checkpoint import encode_checkpoint, load_checkpoint, save_checkpoint
from latentfp.nn.tensor import Tensor, backward, no_grad


# ------------------------------------------------------------------ Adam

@dataclass
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, cfg: AdamConfig) -> None:
    """In-place bias-corrected Adam update of ``params``.

    Raises :class:`NumericError` naming the step if any gradient is not finite;
    parameters and moments are left untouched in that case.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params, grads and state lengths differ")
    step = state.step + 1
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {p.name or 'parameter'}", step)
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1 ** step, 1.0 - b2 ** step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    state.step = step


class Adam:
    def __init__(self, params: Sequence[Tensor], cfg: AdamConfig):
        self.params = list(params)
        self.cfg = cfg
        self.state = AdamState.zeros_like(self.params)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.cfg)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------- config

@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    window: int = 192
    max_steps: int = 1000
    recon_weight: float = 100.0
    adv_weight: float = 1.0
    skeleton_weight: float = 0.0
    seed: int = 0
    checkpoint_every: int = 0
    base_channels: int = 16
    depth: int = 4
    disc_base_channels: int = 16
    disc_blocks: int = 7
    augment: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.window % (2 ** self.depth):
            raise ValueError(f"window {self.window} must be divisible by {2 ** self.depth}")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be >= 1 and max_steps >= 0")

    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(depth=self.depth, base_channels=self.base_channels, seed=self.seed)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig.for_window(
            self.window, n_blocks=self.disc_blocks, base_channels=self.disc_base_channels, seed=self.seed + 1
        )

    def echo(self) -> list[str]:
        return [f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self)]

    @classmethod
    def from_mapping(cls, values: Mapping[str, str | int | float | bool], base: "TrainConfig | None" = None) -> "TrainConfig":
        """Coerce string values by field type; unknown keys are rejected."""
        base = base or cls()
        types = {f.name: type(getattr(base, f.name)) for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in types:
                raise ValueError(f"unknown training option {key!r}")
            kw[name] = _coerce(raw, types[name], key)
        return dataclasses.replace(base, **kw)


def _coerce(raw, typ, key):
    if not isinstance(raw, str):
        return typ(raw)
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw.strip())
    except ValueError:
        raise ValueError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def read_config_file(path: str | Path) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


# ------------------------------------------------------------------- log

@dataclass
class TrainRecord:
    step: int
    loss_G_adv: float
    loss_G_recon: float
    loss_D: float
    wall_ms: float


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)
    header: list[str] = field(default_factory=list)

    COLUMNS = ("step", "loss_G_adv", "loss_G_recon", "loss_D")

    def to_tsv(self) -> str:
        """Loss table; wall-clock times live in :meth:`timing_tsv` so this stays reproducible."""
        lines = [f"# {h}" for h in self.header]
        lines.append("\t".join(self.COLUMNS))
        for r in self.records:
            lines.append(f"{r.step}\t{r.loss_G_adv:.9e}\t{r.loss_G_recon:.9e}\t{r.loss_D:.9e}")
        return "\n".join(lines) + "\n"

    def timing_tsv(self) -> str:
        return "step\twall_ms\n" + "".join(f"{r.step}\t{r.wall_ms:.1f}\n" for r in self.records)


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    log: TrainLog


# ------------------------------------------------------------------ data

@dataclass
class PairSet:
    """In-memory aligned (latent, ground truth) images."""

    latents: list[np.ndarray]
    truths: list[np.ndarray]
    _skeletons: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_manifest(cls, manifest) -> "PairSet":
        if not len(manifest):
            raise DataError("training corpus is empty")
        manifest.validate()
        lat, gt = [], []
        for e in manifest.entries:
            a, b = manifest.load_pair(e)
            lat.append(a.pixels)
            gt.append(b.pixels)
        return cls(lat, gt)

    @classmethod
    def from_images(cls, pairs: Sequence[tuple[GrayImage, GrayImage]]) -> "PairSet":
        if not pairs:
            raise DataError("training corpus is empty")
        for a, b in pairs:
            if a.shape != b.shape:
                raise ShapeError(f"latent {a.shape} and ground truth {b.shape} differ")
        return cls([a.pixels for a, _ in pairs], [b.pixels for _, b in pairs])

    def check_window(self, window: int) -> None:
        for i, a in enumerate(self.latents):
            if min(a.shape) < window:
                raise ShapeError(f"pair {i} is {a.shape[0]}x{a.shape[1]}, smaller than window {window}")

    def skeleton_targets(self) -> list[np.ndarray]:
        """Per-pair centreline targets of the ground truth, computed once.

        Each entry is ``(2, H, W)``: plane 0 marks ridge and valley centreline
        pixels, plane 1 holds the value wanted there (0 on ridges, 1 on valleys).
        """
        if self._skeletons is None:
            self._skeletons = [skeleton_targets(t) for t in self.truths]
        return self._skeletons

    def sample(self, rng: np.random.Generator, batch: int, window: int, augment: bool,
               skeletons: bool = False) -> tuple[np.ndarray, ...]:
        """Random aligned crops; with ``skeletons`` also the matching centreline targets."""
        xs = np.empty((batch, 1, window, window))
        ys = np.empty((batch, 1, window, window))
        ss = np.empty((batch, 2, window, window)) if skeletons else None
        planes = self.skeleton_targets() if skeletons else None
        for b in range(batch):
            i = int(rng.integers(len(self.latents)))
            h, w = self.latents[i].shape
            y0 = int(rng.integers(h - window + 1))
            x0 = int(rng.integers(w - window + 1))
            crops = [self.latents[i][y0:y0 + window, x0:x0 + window], self.truths[i][y0:y0 + window, x0:x0 + window]]
            if planes is not None:
                crops += list(planes[i][:, y0:y0 + window, x0:x0 + window])
            if augment:
                k, flip = int(rng.integers(4)), bool(rng.integers(2))
                crops = [np.rot90(c, k) for c in crops]
                if flip:
                    crops = [c[:, ::-1] for c in crops]
            xs[b, 0], ys[b, 0] = crops[0], crops[1]
            if ss is not None:
                ss[b] = crops[2:]
        return (xs, ys, ss) if skeletons else (xs, ys)


def skeleton_targets(truth: np.ndarray) -> np.ndarray:
    """Ridge and valley centrelines of one ground-truth image, as the extractor binarizes it.

    Returns ``(2, H, W)``: a 0/1 mask of centreline pixels and the target
    intensity there, 0 on ridge centrelines and 1 on valley centrelines.
    Holding these pixels pins down ridge connectivity, which decides whether
    a fork reads as an ending or a bifurcation.
    """
    ridges = ridge_map(GrayImage(truth))
    ridge_skel = thin(GrayImage(ridges.astype(np.float64))).pixels > 0.5
    valley_skel = thin(GrayImage((~ridges).astype(np.float64))).pixels > 0.5
    out = np.zeros((2,) + truth.shape)
    out[0] = ridge_skel | valley_skel
    out[1] = valley_skel & ~ridge_skel
    return out


# ----------------------------------------------------------------- train

def _finite(step: int, **losses: float) -> None:
    bad = {k: v for k, v in losses.items() if not math.isfinite(v)}
    if bad:
        detail = ", ".join(f"{k}={v}" for k, v in bad.items())
        raise NumericError(f"non-finite loss at step {step}: {detail}", step)


def checkpoint_arrays(gen: Generator, disc: Discriminator) -> dict[str, np.ndarray]:
    arrays = {f"generator.{k}": v for k, v in gen.state_dict().items()}
    arrays.update({f"discriminator.{k}": v for k, v in disc.state_dict().items()})
    return arrays


def load_generator(path: str | Path, config: GeneratorConfig) -> Generator:
    arrays = load_checkpoint(path)
    gen = Generator(config)
    state = {k[len("generator."):]: v for k, v in arrays.items() if k.startswith("generator.")}
    if not state:
        state = arrays
    gen.load_state_dict(state)
    return gen


def train(
    corpus,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    on_step: Callable[[TrainRecord], bool | None] | None = None,
) -> TrainResult:
    """Alternate one discriminator step and one generator step per iteration.

    ``corpus`` is a :class:`~latentfp.synth.CorpusManifest` or a :class:`PairSet`.
    With ``out_dir`` set, ``init.lfp``, periodic ``step_NNNNNN.lfp`` and
    ``final.lfp`` checkpoints plus ``train_log.tsv`` / ``train_timing.tsv``
    are written there. ``on_step`` sees every record; returning True from it
    ends training after that step.
    """
    data = corpus if isinstance(corpus, PairSet) else PairSet.from_manifest(corpus)
    data.check_window(cfg.window)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create {out}: {exc}") from None

    gen = Generator(cfg.generator_config())
    disc = Discriminator(cfg.discriminator_config())
    gen.train()
    disc.train()
    opt_g = Adam(gen.parameters(), cfg.adam())
    opt_d = Adam(disc.parameters(), cfg.adam())
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    log = TrainLog(header=["latentfp train"] + cfg.echo())
    if out is not None:
        save_checkpoint(out / "init.lfp", checkpoint_arrays(gen, disc))

    for step in range(1, cfg.max_steps + 1):
        t0 = time.perf_counter()
        batch = data.sample(rng, cfg.batch_size, cfg.window, cfg.augment, skeletons=cfg.skeleton_weight > 0)
        xs, ys = batch[0], batch[1]
        latent, truth = Tensor(xs), Tensor(ys)

        fake = gen(latent)
        fake_const = Tensor(fake.data)

        # discriminator: real pairs -> 1, generated pairs -> 0
        opt_d.zero_grad()
        loss_d = ops.scale(ops.add(ops.bce_loss(disc(latent, truth), 1.0),
                                   ops.bce_loss(disc(latent, fake_const), 0.0)), 0.5)
        _finite(step, loss_D=loss_d.item())
        backward(loss_d)
        opt_d.step()

        # generator: non-saturating adversarial term plus weighted L1
        opt_g.zero_grad()
        adv = ops.bce_loss(disc(latent, fake), 1.0)
        recon = ops.l1_loss(fake, truth)
        loss_g = ops.add(ops.scale(adv, cfg.adv_weight), ops.scale(recon, cfg.recon_weight))
        if cfg.skeleton_weight > 0:
            mask, target = batch[2][:, :1], batch[2][:, 1:]
            count = max(float(mask.sum()), 1.0)
            on_skel = ops.sum_(ops.abs_(ops.mul(ops.sub(fake, Tensor(target)), Tensor(mask))))
            loss_g = ops.add(loss_g, ops.scale(on_skel, cfg.skeleton_weight / count))
        _finite(step, loss_G_adv=adv.item(), loss_G_recon=recon.item())
        backward(loss_g)
        opt_g.step()

        rec = TrainRecord(step, adv.item(), recon.item(), loss_d.item(), (time.perf_counter() - t0) * 1000)
        log.records.append(rec)
        stop = bool(on_step(rec)) if on_step is not None else False
        if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"step_{step:06d}.lfp", checkpoint_arrays(gen, disc))
        if stop:
            break

    if out is not None:
        save_checkpoint(out / "final.lfp", checkpoint_arrays(gen, disc))
        (out / "train_log.tsv").write_text(log.to_tsv(), encoding="utf-8")
        (out / "train_timing.tsv").write_text(log.timing_tsv(), encoding="utf-8")
    return TrainResult(gen, disc, log)


def initial_checkpoint(cfg: TrainConfig) -> bytes:
    """Bytes of the checkpoint a fresh run starts from."""
    return encode_checkpoint(checkpoint_arrays(Generator(cfg.generator_config()), Discriminator(cfg.discriminator_config())))


# ------------------------------------------------------------- inference

def raised_cosine(n: int) -> np.ndarray:
    """Strictly positive 2-D blending weight peaking at the tile centre."""
    w = 0.5 - 0.5 * np.cos(2 * np.pi * (np.arange(n) + 0.5) / n)
    return np.outer(w, w)


def _tile_starts(size: int, window: int, stride: int) -> list[int]:
    starts = list(range(0, size - window + 1, stride))
    if starts[-1] != size - window:
        starts.append(size - window)
    return starts


def enhance_full(img: GrayImage, gen: Generator, window: int = 192, stride: int | None = None,
                 batch_size: int = 8) -> GrayImage:
    """Enhance an arbitrary-size image tile by tile with batch norm in inference mode.

    Overlapping tiles are blended with a raised-cosine weight; pixels covered
    by a single tile take that tile's output unchanged. Images smaller than
    the window are reflect-padded and cropped back.
    """
    stride = window // 2 if stride is None else stride
    if stride < 1 or stride > window:
        raise ValueError("stride must lie in [1, window]")
    px = img.pixels
    h, w = px.shape
    ph, pw = max(window - h, 0), max(window - w, 0)
    if ph or pw:
        px = np.pad(px, ((0, ph), (0, pw)), mode="reflect" if min(h, w) > 1 else "edge")
    H, W = px.shape
    tiles = [(y, x) for y in _tile_starts(H, window, stride) for x in _tile_starts(W, window, stride)]
    weight = raised_cosine(window)
    acc = np.zeros((H, W))
    wsum = np.zeros((H, W))
    cover = np.zeros((H, W), dtype=np.int32)
    last = np.zeros((H, W))

    modes = [bn.training for bn in gen.batch_norms()]
    gen.eval()
    try:
        with no_grad():
            for i in range(0, len(tiles), batch_size):
                chunk = tiles[i:i + batch_size]
                batch = np.stack([px[y:y + window, x:x + window] for y, x in chunk])[:, None]
                outs = gen(Tensor(batch)).data[:, 0]
                for (y, x), o in zip(chunk, outs):
                    sl = (slice(y, y + window), slice(x, x + window))
                    acc[sl] += o * weight
                    wsum[sl] += weight
                    cover[sl] += 1
                    last[sl] = o
    finally:
        for bn, mode in zip(gen.batch_norms(), modes):
            bn.training = mode
    out = np.where(cover == 1, last, acc / np.maximum(wsum, 1e-300))
    return GrayImage(np.clip(out[:h, :w], 0.0, 1.0), img.dpi)
