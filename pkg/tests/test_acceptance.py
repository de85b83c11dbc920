"""Top-level acceptance criteria, one test each, every one reporting a PASS/FAIL line.

The end-to-end and identification criteria share one desk-scale experiment run,
which trains the default desk enhancer and takes the better part of half an hour
on one CPU core.
"""
import hashlib
import math
import time

import numpy as np
import pytest

from latentfp.discriminator import Discriminator
from latentfp.evaluation import CMCCurve, PUBLISHED_RANK1, ScoreMatrix, cmc, emit_cmc_plot
from latentfp.experiment import DeskConfig, run_experiment
from latentfp.gabor import gabor_enhance
from latentfp.generator import Generator
from latentfp.gradsuite import CASES, run_suite
from latentfp.imaging import GrayImage
from latentfp.minutiae import (
    BIFURCATION,
    ENDING,
    Minutia,
    candidate_pairs,
    extract_minutiae,
    match_minutiae,
)
from latentfp.nn import ops
from latentfp.nn.tensor import Tensor, no_grad
from latentfp.synth import build_corpus, planted_minutiae, random_master, render_master
from latentfp.training import PairSet, TrainConfig, initial_checkpoint, train

from oracles import best_assignment_size, cmc_enum, conv2d_loops, grating, max_pool_enum, pearson, upsample_enum


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    t0 = time.perf_counter()
    result = run_experiment(DeskConfig(), tmp_path_factory.mktemp("desk"))
    return result, time.perf_counter() - t0


def test_gradient_integrity(report):
    t0 = time.perf_counter()
    results = run_suite(range(20), list(CASES))
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_rel_error)
    ok = worst.max_rel_error <= 1e-3 and elapsed < 300 and len(results) == 20 * len(CASES)
    report("gradient integrity", ok, f"{len(CASES)} cases x 20 seeds, worst {worst.max_rel_error:.2e} "
           f"({worst.case}, seed {worst.seed}), {elapsed:.0f}s")


def test_oracle_equivalence(report):
    rng = np.random.default_rng(0)
    conv_err = 0.0
    for stride, pad, k in ((1, 1, 3), (2, 1, 3), (1, 0, 1)):
        x = rng.normal(size=(2, 3, 9, 10))
        w, b = rng.normal(size=(4, 3, k, k)), rng.normal(size=4)
        got = ops.conv2d(Tensor(x), ops.ConvParams(Tensor(w), Tensor(b), stride, pad)).data
        conv_err = max(conv_err, np.abs(got - conv2d_loops(x, w, b, stride, pad)).max())
    x = rng.normal(size=(2, 3, 8, 6))
    pool_ok = np.array_equal(ops.max_pool2(Tensor(x)).data, max_pool_enum(x))
    up_ok = np.array_equal(ops.upsample2(Tensor(x)).data, upsample_enum(x))

    cmc_ok = True
    for seed in range(10):
        r = np.random.default_rng(seed)
        scores = r.integers(0, 4, size=(6, 9)).astype(float)
        mates = r.integers(0, 9, size=6).tolist()
        g = [f"g{j}" for j in range(9)]
        m = ScoreMatrix([f"p{i}" for i in range(6)], g, scores, [g[j] for j in mates])
        cmc_ok &= bool(np.array_equal(cmc(m).rates, cmc_enum(scores, mates)))

    pair_ok = True
    for _ in range(200):
        n_gt, n_ex = (int(v) for v in rng.integers(0, 9, size=2))

        def draw(n):
            return [Minutia(float(rng.uniform(0, 30)), float(rng.uniform(0, 30)), float(rng.uniform(0, 2 * math.pi)),
                            ENDING if rng.uniform() < 0.5 else BIFURCATION) for _ in range(n)]

        gt, ex = draw(n_gt), draw(n_ex)
        got = match_minutiae(gt, ex, 12.0, math.pi / 2).genuine_recovered
        best = best_assignment_size([(i, j) for _, i, j, _ in candidate_pairs(gt, ex, 12.0, math.pi / 2)], n_gt, n_ex)
        pair_ok &= best - 1 <= got <= best

    ok = conv_err <= 1e-10 and pool_ok and up_ok and cmc_ok and pair_ok
    report("oracle equivalence", ok, f"conv max err {conv_err:.1e}, pool {pool_ok}, upsample {up_ok}, "
           f"CMC {cmc_ok}, pairing within one of optimal {pair_ok}")


def test_architecture_contract(report):
    gen, disc = Generator(), Discriminator()
    rng = np.random.default_rng(1)
    trace, dtrace = [], []
    with no_grad():
        out = gen(Tensor(rng.uniform(size=(1, 1, 192, 192))), trace).data
        score = disc(Tensor(rng.uniform(size=(1, 1, 192, 192))), Tensor(out), dtrace).data
    sides = dict(trace)
    pools = [sides[f"E{k}"][2] for k in range(4)]
    ups = [sides[f"D{k}"][2] for k in range(4)]
    ok = (out.shape == (1, 1, 192, 192) and bool(np.all((out > 0) & (out < 1)))
          and pools == [96, 48, 24, 12] and ups == [192, 96, 48, 24]
          and score.size == 1 and 0 < score.item() < 1 and len(dtrace) == 7)
    report("architecture contract", ok, f"output {out.shape}, encoder sides {pools}, decoder sides {ups}, "
           f"discriminator {len(dtrace)} blocks -> {score.item():.4f}")


def test_toy_convergence(report, tmp_path):
    master = render_master(random_master(0, 64, 64, n_minutiae=2, margin=16, min_spacing=16))
    rng = np.random.default_rng(2)
    latent = GrayImage(np.clip(0.5 + 0.5 * (master.pixels - 0.5) + rng.normal(0, 0.1, (64, 64)), 0, 1))
    pair = PairSet.from_images([(latent, master)])
    cfg = TrainConfig(window=64, batch_size=1, max_steps=2000, augment=False)
    t0 = time.perf_counter()
    reached, streak = [], []

    def watch(rec):
        # stop once the training L1 has stayed under the target for 20 steps running
        streak.append(rec.loss_G_recon < 0.05)
        if streak[-1] and not reached:
            reached.append(rec.step)
        return len(streak) >= 20 and all(streak[-20:])

    res = train(pair, cfg, tmp_path / "toy", on_step=watch)
    elapsed = time.perf_counter() - t0
    finite = all(math.isfinite(v) for r in res.log.records for v in (r.loss_G_adv, r.loss_G_recon, r.loss_D))
    res.generator.eval()
    with no_grad():
        final_l1 = float(np.abs(res.generator(Tensor(pair.latents[0][None, None])).data - pair.truths[0]).mean())
    noop = train(pair, TrainConfig(window=64, batch_size=1, max_steps=0), tmp_path / "noop")
    noop_ok = (tmp_path / "noop" / "final.lfp").read_bytes() == initial_checkpoint(
        TrainConfig(window=64, batch_size=1, max_steps=0)) and noop.log.records == []
    ok = bool(reached) and final_l1 < 0.05 and finite and elapsed < 600 and noop_ok
    report("toy training convergence", ok, f"training L1 < 0.05 first at step {reached[0] if reached else None}, "
           f"stopped at step {len(res.log.records)}, final inference L1 {final_l1:.4f}, finite {finite}, "
           f"{elapsed:.0f}s, zero-step no-op {noop_ok}")


def test_end_to_end_benefit(report, desk):
    result, elapsed = desk
    raw, enh = result.raw, result.enhanced
    gain = enh.genuine_recovered / max(raw.genuine_recovered, 1) - 1
    ok = gain >= 0.20 and enh.fake_introduced < raw.fake_introduced and elapsed < 1800
    report("end-to-end enhancement benefit", ok,
           f"genuine {raw.genuine_recovered} -> {enh.genuine_recovered} ({100 * gain:+.1f}%), "
           f"fake {raw.fake_introduced} -> {enh.fake_introduced}, Gabor "
           f"{result.gabor.genuine_recovered}/{result.gabor.fake_introduced}, {elapsed:.0f}s")


def test_cmc_sanity(report, desk):
    result, _ = desk
    curves = {c.label: c for c in result.curves}
    raw, enh = curves["raw latent"], curves["GAN enhanced"]
    shaped = all(np.all(np.diff(c.rates) >= 0) and c.rates[-1] == 1.0 and len(c.rates) == 32 for c in curves.values())
    ok = enh.rank1() >= raw.rank1() and shaped and result.config.n_probes == 16
    report("CMC sanity", ok, f"rank-1 raw {raw.rank1():.3f}, enhanced {enh.rank1():.3f}, "
           f"monotone and ending at 1: {shaped}")


def test_classical_path_quality(report):
    gains = []
    for seed, (period, theta) in enumerate([(8, 0.2), (9, 0.9), (10, 1.6), (11, 2.5)]):
        clean = grating((128, 128), period, theta)
        noisy = np.clip(clean + np.random.default_rng(seed).normal(0, 0.2, clean.shape), 0, 1)
        gains.append(pearson(gabor_enhance(GrayImage(noisy)).pixels, clean) - pearson(noisy, clean))
    recalls = []
    for seed in range(8):
        spec = random_master(seed)
        planted = [Minutia(p.x, p.y, p.direction, p.kind) for p in planted_minutiae(spec)]
        found = extract_minutiae(gabor_enhance(render_master(spec)))
        recalls.append(match_minutiae(planted, found, 8.0, 0.3).genuine_recovered)
    ok = min(gains) >= 0.05 and min(recalls) >= 11
    report("classical-path quality", ok, f"correlation gains {[round(g, 3) for g in gains]}, "
           f"planted recall per print {recalls} of 12")


def test_determinism(report, tmp_path):
    def digest(root):
        return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(root.rglob("*")) if p.is_file() and p.name != "train_timing.tsv"}

    masters = [render_master(random_master(i, 64, 64, n_minutiae=2, margin=16, min_spacing=16)) for i in range(2)]
    cfg = TrainConfig(window=32, batch_size=2, max_steps=5, checkpoint_every=5, base_channels=4,
                      disc_base_channels=4, disc_blocks=4)
    curves = [CMCCurve(np.array([0.5, 0.75, 1.0]), "run")]
    for run in ("a", "b"):
        man = build_corpus(masters, 2, tmp_path / run / "corpus", seed=3)
        train(man, cfg, tmp_path / run / "model")
        emit_cmc_plot(curves, tmp_path / run / "cmc", PUBLISHED_RANK1)
    a, b = digest(tmp_path / "a"), digest(tmp_path / "b")
    kinds = sorted({name.rsplit(".", 1)[-1] for name in a})
    ok = a == b and {"pgm", "tsv", "lfp", "svg"} <= set(kinds)
    report("determinism", ok, f"{len(a)} files compared ({', '.join(kinds)}), identical {a == b}")
