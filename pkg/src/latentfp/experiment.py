"""Desk-scale train-and-evaluate run on synthetic data.

Trains the enhancer on one set of synthetic fingers, then on held-out
fingers compares minutiae recovered from raw latents with those recovered
after enhancement, and runs a small identification experiment.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from latentfp.evaluation import PUBLISHED_RANK1, CMCCurve, build_score_matrix, cmc, emit_cmc_plot
from latentfp.gabor import gabor_enhance
from latentfp.minutiae import MatchReport, Minutia, extract_minutiae, match_minutiae, render_table
from latentfp.synth import Impression, NoiseRecipe, build_corpus, degrade, random_master, render_master
from latentfp.training import TrainConfig, TrainResult, enhance_full, train


def _default_train() -> TrainConfig:
    return TrainConfig(window=64, batch_size=4, max_steps=2000, base_channels=8, disc_base_channels=8)


@dataclass
class DeskConfig:
    seed: int = 0
    size: int = 192
    minutiae: int = 12
    n_train_masters: int = 24
    train_recipes: int = 4
    n_test_masters: int = 8
    test_recipes: int = 4
    train: TrainConfig = field(default_factory=_default_train)
    stride: int | None = None
    run_cmc: bool = True
    n_probes: int = 16
    n_gallery: int = 32
    max_rotation_deg: float = 15.0
    max_shift_px: float = 10.0
    tol_px: float = 12.0
    tol_rad: float = math.pi / 6

    def with_steps(self, steps: int) -> "DeskConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, max_steps=steps))

    def echo(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "train"}
        out.update({f"train.{k}": getattr(self.train, k) for k in self.train.__dataclass_fields__})
        return out

    def _seed(self, group: int, i: int) -> int:
        return self.seed * 1_000_000 + group * 10_000 + i


@dataclass
class ExperimentResult:
    config: DeskConfig
    raw: MatchReport
    enhanced: MatchReport
    gabor: MatchReport
    curves: list[CMCCurve]
    training: TrainResult
    timings: dict[str, float]

    def genuine_gain(self) -> float:
        return self.enhanced.genuine_recovered / max(self.raw.genuine_recovered, 1) - 1.0

    def summary(self) -> str:
        lines = [
            "minutiae recovery on held-out latents "
            f"({self.config.n_test_masters} fingers x {self.config.test_recipes} recipes, "
            f"tol {self.config.tol_px:g} px / {self.config.tol_rad:.4f} rad, {self.raw.n_gt} ground-truth minutiae)",
            render_table({"raw latent": self.raw, "Gabor": self.gabor, "GAN enhanced": self.enhanced}),
            f"genuine gain of GAN over raw: {100 * self.genuine_gain():+.1f}%",
        ]
        if self.curves:
            lines.append("identification (rank-1): " + ", ".join(f"{c.label} {c.rank1():.3f}" for c in self.curves))
            lines.append("published rank-1 for reference: "
                         + ", ".join(f"{k} {v:.2f}" for k, v in PUBLISHED_RANK1.items()))
        lines.append("timings: " + ", ".join(f"{k} {v:.1f}s" for k, v in self.timings.items()))
        return "\n".join(lines) + "\n"


def _score(gt: list[Minutia], ms: list[Minutia], cfg: DeskConfig) -> MatchReport:
    return match_minutiae(gt, ms, cfg.tol_px, cfg.tol_rad)


def run_experiment(cfg: DeskConfig, work_dir: str | Path,
                   progress: Callable[[str], None] | None = None) -> ExperimentResult:
    say = progress or (lambda _msg: None)
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    def masters(group: int, n: int):
        return [render_master(random_master(cfg._seed(group, i), cfg.size, cfg.size, cfg.minutiae)) for i in range(n)]

    train_set = build_corpus(masters(1, cfg.n_train_masters), cfg.train_recipes, work / "train", seed=cfg._seed(1, 0))
    test_set = build_corpus(masters(2, cfg.n_test_masters), cfg.test_recipes, work / "test", seed=cfg._seed(2, 0))
    timings["corpus"] = time.perf_counter() - t0
    say(f"corpora: {len(train_set)} training pairs, {len(test_set)} held-out pairs")

    t1 = time.perf_counter()

    def on_step(rec):
        if rec.step % 100 == 0 or rec.step == cfg.train.max_steps:
            say(f"step {rec.step} adv {rec.loss_G_adv:.4f} recon {rec.loss_G_recon:.4f} D {rec.loss_D:.4f}")

    trained = train(train_set, cfg.train, work / "model", on_step=on_step)
    timings["train"] = time.perf_counter() - t1
    gen = trained.generator
    window = cfg.train.window
    stride = cfg.stride or window // 2

    t2 = time.perf_counter()
    raw = enhanced = gabor = MatchReport(0, 0)
    truth: dict[int, list[Minutia]] = {}
    for entry in test_set.entries:
        latent, gt = test_set.load_pair(entry)
        if entry.subject_id not in truth:
            truth[entry.subject_id] = extract_minutiae(gt)
        g = truth[entry.subject_id]
        raw = raw + _score(g, extract_minutiae(latent), cfg)
        gabor = gabor + _score(g, extract_minutiae(gabor_enhance(latent)), cfg)
        enhanced = enhanced + _score(g, extract_minutiae(enhance_full(latent, gen, window, stride)), cfg)
    timings["minutiae"] = time.perf_counter() - t2
    say(f"genuine/fake raw {raw.genuine_recovered}/{raw.fake_introduced}, "
        f"enhanced {enhanced.genuine_recovered}/{enhanced.fake_introduced}")

    curves: list[CMCCurve] = []
    if cfg.run_cmc:
        t3 = time.perf_counter()
        curves = identification(cfg, gen, work)
        timings["cmc"] = time.perf_counter() - t3
    timings["total"] = time.perf_counter() - t0
    result = ExperimentResult(cfg, raw, enhanced, gabor, curves, trained, timings)
    (work / "summary.txt").write_text(result.summary(), encoding="utf-8")
    return result


def identification(cfg: DeskConfig, gen, work: Path) -> list[CMCCurve]:
    """Raw and enhanced probe CMC curves against a gallery of clean enhanced prints."""
    rng = np.random.default_rng(cfg._seed(3, 0))
    specs = [random_master(cfg._seed(3, i + 1), cfg.size, cfg.size, cfg.minutiae) for i in range(cfg.n_gallery)]
    gallery = {f"g{i:03d}": extract_minutiae(gabor_enhance(render_master(s))) for i, s in enumerate(specs)}
    raw_t, enh_t, mates = {}, {}, {}
    window = cfg.train.window
    stride = cfg.stride or window // 2
    for i in range(cfg.n_probes):
        imp = Impression(
            angle=math.radians(float(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))),
            dx=float(rng.uniform(-cfg.max_shift_px, cfg.max_shift_px)),
            dy=float(rng.uniform(-cfg.max_shift_px, cfg.max_shift_px)),
        )
        latent = degrade(render_master(specs[i], imp), NoiseRecipe.sample(cfg._seed(4, i)))
        pid = f"p{i:03d}"
        raw_t[pid] = extract_minutiae(latent)
        enh_t[pid] = extract_minutiae(enhance_full(latent, gen, window, stride))
        mates[pid] = f"g{i:03d}"
    curves = [
        cmc(build_score_matrix(raw_t, gallery, mates), "raw latent"),
        cmc(build_score_matrix(enh_t, gallery, mates), "GAN enhanced"),
    ]
    emit_cmc_plot(curves, work / "cmc", references=PUBLISHED_RANK1)
    return curves
