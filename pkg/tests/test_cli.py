import subprocess
import sys

import numpy as np
import pytest

from latentfp.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, run
from latentfp.imaging import load_image
from latentfp.minutiae import load_template
from latentfp.training import TrainConfig, initial_checkpoint


def test_no_arguments_is_usage_error(capsys):
    assert run([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_and_command_are_usage_errors():
    assert run(["synth"]) == EXIT_USAGE
    assert run(["frobnicate"]) == EXIT_USAGE
    assert run(["--threads", "0", "gradcheck"]) == EXIT_USAGE
    assert run(["gradcheck", "--cases", "nope"]) == EXIT_USAGE


def test_help_lists_every_command():
    out = subprocess.run([sys.executable, "-m", "latentfp.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("synth", "train", "enhance", "minutiae", "match", "cmc", "gradcheck", "report"):
        assert cmd in out.stdout


def test_missing_input_is_data_error(tmp_path):
    assert run(["minutiae", "--input", str(tmp_path / "none.pgm"), "--output", str(tmp_path / "t")]) == EXIT_DATA
    assert run(["enhance", "--input", str(tmp_path / "none.pgm"), "--output", str(tmp_path / "o.pgm"),
                "--method", "gabor"]) == EXIT_DATA


def test_gradcheck_failure_is_numeric_exit(capsys):
    assert run(["gradcheck", "--seeds", "1", "--cases", "sigmoid,l1_loss"]) == EXIT_OK
    assert "PASS  sigmoid" in capsys.readouterr().out
    assert run(["gradcheck", "--seeds", "1", "--cases", "conv2d_k3_s1", "--tol", "1e-300"]) == EXIT_NUMERIC


def test_classical_pipeline_smoke(tmp_path, capsys):
    c = tmp_path / "corpus"
    log = tmp_path / "run.log"
    assert run(["--log", str(log), "synth", "--out", str(c), "--masters", "1", "--recipes", "1", "--size", "96",
                "--minutiae", "4"]) == EXIT_OK
    assert log.read_text().startswith("# latentfp ")
    latent = next(c.glob("*latent*.pgm"))
    enh, tpl, gt = tmp_path / "enh.pgm", tmp_path / "enh.lfpm", tmp_path / "gt.lfpm"
    assert run(["enhance", "--method", "gabor", "--input", str(latent), "--output", str(enh)]) == EXIT_OK
    assert load_image(enh).shape == (96, 96)
    assert run(["minutiae", "--input", str(enh), "--output", str(tpl), "--render", str(tmp_path / "o.png")]) == EXIT_OK
    assert run(["minutiae", "--input", str(c / "s000_master.pgm"), "--output", str(gt)]) == EXIT_OK
    report = tmp_path / "report.tsv"
    capsys.readouterr()
    assert run(["match", "--gt", str(gt), "--extracted", str(tpl), "--output", str(report)]) == EXIT_OK
    assert "Genuine minutiae recovered" in capsys.readouterr().out
    assert report.read_text().startswith("genuine_recovered")
    assert len(load_template(c / "s000_planted.lfpm")) == 4
    assert run(["match", "--gt", str(gt), "--extracted", str(tpl), "--tol-px", "-1"]) == EXIT_USAGE


def test_cmc_command(tmp_path, capsys):
    run(["synth", "--out", str(tmp_path), "--masters", "2", "--recipes", "1", "--size", "96", "--minutiae", "4"])
    for i in range(2):
        run(["minutiae", "--input", str(tmp_path / f"s{i:03d}_master.pgm"), "--output", str(tmp_path / f"g{i}.lfpm")])
    (tmp_path / "gallery.tsv").write_text("g0\tg0.lfpm\ng1\tg1.lfpm\n")
    (tmp_path / "probes.tsv").write_text("p0\tg0.lfpm\tg0\np1\tg1.lfpm\tg1\n")
    capsys.readouterr()
    assert run(["cmc", "--probes", str(tmp_path / "probes.tsv"), "--gallery", str(tmp_path / "gallery.tsv"),
                "--out", str(tmp_path / "cmc")]) == EXIT_OK
    assert "rank-1 1.0000" in capsys.readouterr().out
    assert (tmp_path / "cmc.svg").exists() and (tmp_path / "cmc_scores.tsv").exists()


def test_train_zero_steps_writes_initial_checkpoint(tmp_path):
    c = tmp_path / "corpus"
    run(["synth", "--out", str(c), "--masters", "1", "--recipes", "2", "--size", "64", "--minutiae", "2"])
    flags = ["--window", "32", "--batch-size", "2", "--base-channels", "2", "--disc-base-channels", "2",
             "--disc-blocks", "3"]
    assert run(["train", "--manifest", str(c / "manifest.tsv"), "--out", str(tmp_path / "m"), "--max-steps", "0",
                *flags]) == EXIT_OK
    cfg = TrainConfig(window=32, batch_size=2, base_channels=2, disc_base_channels=2, disc_blocks=3, max_steps=0)
    assert (tmp_path / "m" / "final.lfp").read_bytes() == initial_checkpoint(cfg)
    assert run(["train", "--manifest", str(c / "manifest.tsv"), "--out", str(tmp_path / "m"),
                "--learning-rate", "abc"]) == EXIT_USAGE
    out = tmp_path / "enh.pgm"
    assert run(["enhance", "--input", str(c / "s000_master.pgm"), "--output", str(out), "--checkpoint",
                str(tmp_path / "m" / "final.lfp"), "--base-channels", "2", "--window", "32"]) == EXIT_OK
    assert np.all(np.isfinite(load_image(out).pixels))
    assert run(["enhance", "--input", str(c / "s000_master.pgm"), "--output", str(out)]) == EXIT_USAGE


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["--version"])
    assert exc.value.code == 0 and "latentfp" in capsys.readouterr().out
