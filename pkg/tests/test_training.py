import math

import numpy as np
import pytest

from latentfp.errors import DataError, NumericError, ShapeError
from latentfp.generator import Generator, GeneratorConfig
from latentfp.imaging import GrayImage
from latentfp.nn.checkpoint import load_checkpoint
from latentfp.nn.tensor import Tensor, no_grad
from latentfp.synth import CorpusEntry, CorpusManifest, build_corpus, random_master, render_master
from latentfp.training import (
    Adam,
    AdamConfig,
    AdamState,
    PairSet,
    TrainConfig,
    adam_step,
    enhance_full,
    initial_checkpoint,
    load_generator,
    raised_cosine,
    read_config_file,
    skeleton_targets,
    train,
)

from oracles import grating


def _tiny_cfg(**kw):
    base = dict(window=32, batch_size=2, max_steps=3, base_channels=2, disc_base_channels=2, disc_blocks=3, depth=2)
    base.update(kw)
    return TrainConfig(**base)


def _pairs(n=2, size=48, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        gt = grating((size, size), 8 + i, rng.uniform(0, math.pi))
        lat = np.clip(0.5 + 0.4 * (gt - 0.5) + rng.normal(0, 0.1, gt.shape), 0, 1)
        out.append((GrayImage(lat), GrayImage(gt)))
    return PairSet.from_images(out)


def _forward(gen, tiles):
    gen.eval()
    with no_grad():
        return gen(Tensor(tiles)).data


# --------------------------------------------------------------------- Adam

def test_zero_gradient_is_exact_noop():
    p = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    before = p.data.copy()
    state = AdamState.zeros_like([p])
    for _ in range(5):
        adam_step([p], [np.zeros((3, 4))], state, AdamConfig())
    assert np.array_equal(p.data, before)
    assert not state.m[0].any() and not state.v[0].any() and state.step == 5


def test_constant_gradient_step_approaches_lr():
    p = Tensor(np.zeros(4), requires_grad=True)
    g = np.array([3.0, -0.5, 1e-3, 40.0])
    state = AdamState.zeros_like([p])
    cfg = AdamConfig(learning_rate=0.01)
    for _ in range(200):
        prev = p.data.copy()
        adam_step([p], [g], state, cfg)
    assert np.allclose(np.abs(p.data - prev), 0.01, rtol=1e-3)
    assert np.array_equal(np.sign(prev - p.data), np.sign(g))


def test_quadratic_bowl_converges():
    rng = np.random.default_rng(1)
    target = rng.normal(size=10)
    p = Tensor(rng.normal(size=10) * 3, requires_grad=True)
    state = AdamState.zeros_like([p])
    cfg = AdamConfig(learning_rate=0.05)
    for step in range(500):
        adam_step([p], [p.data - target], state, cfg)
    assert np.linalg.norm(p.data - target) < 1e-3


def test_first_step_matches_closed_form():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    cfg = AdamConfig(learning_rate=0.1, beta1=0.9, beta2=0.99, eps=1e-8)
    adam_step([p], [np.array([0.5, -2.0])], AdamState.zeros_like([p]), cfg)
    # bias-corrected first step is lr * g / (|g| + eps)
    assert np.allclose(p.data, [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 2.0 + 0.1 * 2.0 / (2.0 + 1e-8)], atol=1e-15)


def test_nan_gradient_aborts_with_step_and_leaves_state():
    p = Tensor(np.ones(2), requires_grad=True)
    state = AdamState.zeros_like([p])
    adam_step([p], [np.ones(2)], state, AdamConfig())
    before = p.data.copy()
    with pytest.raises(NumericError) as exc:
        adam_step([p], [np.array([1.0, np.nan])], state, AdamConfig())
    assert exc.value.step == 2 and state.step == 1 and np.array_equal(p.data, before)


def test_adam_shape_checks():
    p = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ShapeError):
        adam_step([p], [np.ones(3)], AdamState.zeros_like([p]), AdamConfig())
    opt = Adam([p], AdamConfig())
    p.grad[...] = 1.0
    opt.step()
    opt.zero_grad()
    assert not p.grad.any()


# ------------------------------------------------------------------- config

def test_default_config_echo():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.batch_size, cfg.window) == (0.001, 8, 192)
    echo = cfg.echo()
    assert "learning_rate=0.001" in echo and "batch_size=8" in echo and "window=192" in echo
    assert (cfg.adam_beta1, cfg.adam_beta2, cfg.recon_weight, cfg.skeleton_weight) == (0.5, 0.999, 100.0, 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(window=200)
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"bogus": "1"})
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"augment": "maybe"})


def test_config_file_and_mapping(tmp_path):
    p = tmp_path / "train.cfg"
    p.write_text("# comment\nlearning_rate = 0.0002\nmax-steps=7\naugment=false\n\n")
    cfg = TrainConfig.from_mapping(read_config_file(p))
    assert (cfg.learning_rate, cfg.max_steps, cfg.augment) == (0.0002, 7, False)
    p.write_text("no equals sign\n")
    with pytest.raises(DataError):
        read_config_file(p)
    with pytest.raises(DataError):
        read_config_file(tmp_path / "missing.cfg")


# --------------------------------------------------------------------- data

def test_sample_crops_aligned_windows():
    data = _pairs()
    xs, ys = data.sample(np.random.default_rng(2), 4, 32, augment=False)
    assert xs.shape == ys.shape == (4, 1, 32, 32)
    rng = np.random.default_rng(3)
    xs, ys = data.sample(rng, 6, 32, augment=True)
    for x, y in zip(xs[:, 0], ys[:, 0]):
        found = False
        for lat, gt in zip(data.latents, data.truths):
            for k in range(4):
                for flip in (False, True):
                    a = np.rot90(x, -k) if not flip else np.rot90(x[:, ::-1], -k)
                    b = np.rot90(y, -k) if not flip else np.rot90(y[:, ::-1], -k)
                    for y0 in range(17):
                        for x0 in range(17):
                            if np.array_equal(lat[y0:y0 + 32, x0:x0 + 32], a):
                                assert np.array_equal(gt[y0:y0 + 32, x0:x0 + 32], b)
                                found = True
        assert found


def test_small_images_rejected_before_training():
    with pytest.raises(ShapeError):
        train(_pairs(size=24), _tiny_cfg())


def test_missing_corpus_files_abort_before_step_zero(tmp_path):
    man = CorpusManifest([CorpusEntry(tmp_path / "a.pgm", tmp_path / "b.pgm", 0, 0, 0)], tmp_path)
    with pytest.raises(DataError):
        train(man, _tiny_cfg(), tmp_path / "out")
    assert not (tmp_path / "out").exists()
    with pytest.raises(DataError):
        PairSet.from_images([])


def test_skeleton_targets_mark_both_centrelines():
    gt = grating((48, 48), 8, math.pi / 2)
    mask, target = skeleton_targets(gt)
    assert set(np.unique(mask)) == {0.0, 1.0} and not np.any(target[mask == 0])
    interior = (slice(8, 40), slice(8, 40))
    # a vertical grating has one ridge and one valley centreline column per period
    cols = mask[interior].mean(axis=0)
    assert 0.15 <= cols.mean() <= 0.35
    ridge_cols = np.nonzero((mask[interior] * (1 - target[interior])).mean(axis=0) > 0.9)[0] + 8
    valley_cols = np.nonzero(target[interior].mean(axis=0) > 0.9)[0] + 8
    assert np.all(gt[24, ridge_cols] < 0.5) and np.all(gt[24, valley_cols] > 0.5)
    assert len(ridge_cols) >= 3 and len(valley_cols) >= 3


def test_skeleton_crops_follow_augmentation():
    data = _pairs()
    xs, ys, ss = data.sample(np.random.default_rng(11), 6, 32, augment=True, skeletons=True)
    assert ss.shape == (6, 2, 32, 32)
    for y, s in zip(ys[:, 0], ss):
        on = s[0] > 0
        assert np.all(y[on & (s[1] == 0)] < 0.5) and np.all(y[on & (s[1] == 1)] > 0.5)


# -------------------------------------------------------------------- train

def test_zero_steps_is_byte_exact_noop(tmp_path):
    cfg = _tiny_cfg(max_steps=0)
    res = train(_pairs(), cfg, tmp_path)
    assert (tmp_path / "final.lfp").read_bytes() == (tmp_path / "init.lfp").read_bytes() == initial_checkpoint(cfg)
    assert res.log.records == []


def test_training_is_reproducible(tmp_path):
    cfg = _tiny_cfg(max_steps=4, checkpoint_every=2)
    a = train(_pairs(), cfg, tmp_path / "a")
    b = train(_pairs(), cfg, tmp_path / "b")
    for name in ("train_log.tsv", "final.lfp", "step_000002.lfp", "step_000004.lfp", "init.lfp"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert len(a.log.records) == 4 and [r.step for r in b.log.records] == [1, 2, 3, 4]
    assert all(math.isfinite(v) for r in a.log.records for v in (r.loss_G_adv, r.loss_G_recon, r.loss_D))
    log = (tmp_path / "a" / "train_log.tsv").read_text().splitlines()
    assert "# learning_rate=0.001" in log and log[len(cfg.echo()) + 1] == "step\tloss_G_adv\tloss_G_recon\tloss_D"
    assert (tmp_path / "a" / "train_timing.tsv").read_text().startswith("step\twall_ms\n")


def test_training_changes_parameters_and_trains_from_manifest(tmp_path):
    masters = [render_master(random_master(i, 64, 64, n_minutiae=2, margin=16, min_spacing=16)) for i in range(2)]
    man = build_corpus(masters, 1, tmp_path / "corpus")
    cfg = _tiny_cfg(max_steps=2, skeleton_weight=1.0)
    res = train(man, cfg, tmp_path / "model")
    assert (tmp_path / "model" / "final.lfp").read_bytes() != initial_checkpoint(cfg)
    gen = load_generator(tmp_path / "model" / "final.lfp", cfg.generator_config())
    x = Tensor(np.random.default_rng(4).uniform(size=(1, 1, 32, 32)))
    assert _forward(gen, x.data).tobytes() == _forward(res.generator, x.data).tobytes()
    assert set(load_checkpoint(tmp_path / "model" / "final.lfp")) >= {"generator.stem.conv.kernel"}


def test_callback_can_stop_training(tmp_path):
    res = train(_pairs(), _tiny_cfg(max_steps=10), tmp_path, on_step=lambda rec: rec.step == 3)
    assert [r.step for r in res.log.records] == [1, 2, 3]
    assert len((tmp_path / "train_log.tsv").read_text().strip().splitlines()[-1].split("\t")) == 4


# --------------------------------------------------------------- inference

def test_raised_cosine_positive_and_symmetric():
    w = raised_cosine(8)
    assert np.all(w > 0) and np.allclose(w, w[::-1, ::-1]) and w.shape == (8, 8)


def test_single_tile_equals_forward():
    gen = Generator(GeneratorConfig(base_channels=2, seed=7))
    px = np.random.default_rng(5).uniform(size=(192, 192))
    out = enhance_full(GrayImage(px), gen, 192).pixels
    assert all(bn.training for bn in gen.batch_norms())
    assert np.array_equal(out, _forward(gen, px[None, None])[0, 0])


def test_partition_tiles_are_independent():
    gen = Generator(GeneratorConfig(base_channels=2, seed=8))
    px = np.random.default_rng(6).uniform(size=(384, 384))
    out = enhance_full(GrayImage(px), gen, 192, stride=192).pixels
    for y in (0, 192):
        for x in (0, 192):
            tile = _forward(gen, px[None, None, y:y + 192, x:x + 192])[0, 0]
            assert np.array_equal(out[y:y + 192, x:x + 192], tile)


def test_overlap_has_no_seams():
    gen = Generator(GeneratorConfig(base_channels=2, seed=9))
    rng = np.random.default_rng(7)
    px = grating((288, 288), 9, 0.4) * 0.6 + 0.4 * rng.uniform(size=(288, 288))
    out = enhance_full(GrayImage(px), gen, 192, stride=96).pixels

    def jump(col):  # largest step between neighbouring columns and rows at an index
        return max(np.abs(out[:, col] - out[:, col - 1]).max(), np.abs(out[col] - out[col - 1]).max())

    seams = [96, 192]
    interior = [c for c in rng.choice(np.arange(2, 287), 40, replace=False) if c not in seams]
    assert max(jump(c) for c in seams) <= 2 * max(jump(c) for c in interior)


def test_small_image_is_padded_and_cropped():
    gen = Generator(GeneratorConfig(base_channels=2, seed=10))
    out = enhance_full(GrayImage(np.random.default_rng(8).uniform(size=(50, 70))), gen, 64)
    assert out.shape == (50, 70) and out.pixels.min() >= 0 and out.pixels.max() <= 1


def test_bad_stride():
    with pytest.raises(ValueError):
        enhance_full(GrayImage(np.zeros((32, 32))), Generator(GeneratorConfig(base_channels=2)), 32, stride=64)
