"""Command-line entry points: ``latentfp <subcommand> [--key value ...]``."""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Sequence

from latentfp import __version__
from latentfp.errors import DataError, LatentFPError, NumericError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse reports usage problems with exit 1 instead of 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class RunLog:
    """Reproducibility header plus progress lines, to stderr and optionally a file."""

    def __init__(self, path: str | None):
        self.path = Path(path) if path else None

    def write(self, line: str) -> None:
        print(line, file=sys.stderr)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def header(self, command: str, seed, config: dict) -> None:
        self.write(f"# latentfp {__version__} command={command} seed={seed}")
        for k, v in config.items():
            self.write(f"#   {k}={v}")


def _train_flags(p: argparse.ArgumentParser) -> None:
    from latentfp.training import TrainConfig
    import dataclasses

    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f"cfg_{f.name}", default=None, metavar=f.name.upper(),
                       help=f"(default {f.default})")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latentfp", description="Latent fingerprint enhancement toolkit.")
    p.add_argument("--version", action="version", version=f"latentfp {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap numeric worker threads")
    p.add_argument("--log", default=None, help="append run log (header and progress) to this file")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    s = sub.add_parser("synth", help="render master prints and build a latent/ground-truth corpus")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--masters", type=int, default=8)
    s.add_argument("--recipes", type=int, default=4, help="degradation recipes per master")
    s.add_argument("--size", type=int, default=192)
    s.add_argument("--minutiae", type=int, default=12, help="planted minutiae per master")
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="adversarially train the enhancer on a corpus manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="directory for checkpoints and logs")
    t.add_argument("--config", default=None, help="key=value file; flags override it")
    _train_flags(t)

    e = sub.add_parser("enhance", help="enhance one image")
    e.add_argument("--input", required=True)
    e.add_argument("--output", required=True)
    e.add_argument("--method", choices=("gan", "gabor"), default="gan")
    e.add_argument("--checkpoint", default=None, help="generator checkpoint (gan method)")
    e.add_argument("--base-channels", type=int, default=16)
    e.add_argument("--depth", type=int, default=4)
    e.add_argument("--window", type=int, default=192)
    e.add_argument("--stride", type=int, default=None)

    m = sub.add_parser("minutiae", help="extract minutiae to a template file")
    m.add_argument("--input", required=True)
    m.add_argument("--output", required=True, help="template path")
    m.add_argument("--render", default=None, help="optional overlay image (.png or .ppm)")

    mt = sub.add_parser("match", help="count genuine and fake minutiae against ground truth")
    mt.add_argument("--gt", required=True, help="ground-truth template")
    mt.add_argument("--extracted", required=True, help="extracted template")
    mt.add_argument("--tol-px", type=float, default=12.0)
    mt.add_argument("--tol-rad", type=float, default=math.pi / 6)
    mt.add_argument("--output", default=None, help="write report TSV here")

    c = sub.add_parser("cmc", help="score probes against a gallery and plot the CMC curve")
    c.add_argument("--probes", required=True, help="TSV: probe_id, template_path, mate_id")
    c.add_argument("--gallery", required=True, help="TSV: gallery_id, template_path")
    c.add_argument("--out", required=True, help="output prefix for .tsv/.svg and _scores.tsv")
    c.add_argument("--label", default="probes")

    g = sub.add_parser("gradcheck", help="finite-difference check of every op and miniature network")
    g.add_argument("--seeds", type=int, default=20)
    g.add_argument("--tol", type=float, default=1e-3)
    g.add_argument("--cases", default=None, help="comma-separated subset")

    r = sub.add_parser("report", help="run the desk-scale experiment and summarize it")
    r.add_argument("--work", required=True, help="working directory")
    r.add_argument("--steps", type=int, default=None)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--skip-cmc", action="store_true")
    return p


# ------------------------------------------------------------- commands

def _cmd_synth(args, log: RunLog) -> int:
    from latentfp.imaging import save_image
    from latentfp.minutiae import Minutia, save_template
    from latentfp.synth import build_corpus, planted_minutiae, random_master, render_master

    log.header("synth", args.seed, vars(args))
    out = Path(args.out)
    specs = [random_master(args.seed * 100_003 + i, args.size, args.size, args.minutiae) for i in range(args.masters)]
    masters = [render_master(s) for s in specs]
    manifest = build_corpus(masters, args.recipes, out, seed=args.seed)
    for i, (spec, img) in enumerate(zip(specs, masters)):
        save_image(img, out / f"s{i:03d}_master.pgm")
        planted = [Minutia(p.x, p.y, p.direction, p.kind) for p in planted_minutiae(spec)]
        save_template(planted, out / f"s{i:03d}_planted.lfpm")
    log.write(f"wrote {len(manifest)} pairs to {out / 'manifest.tsv'}")
    return EXIT_OK


def _cmd_train(args, log: RunLog) -> int:
    from latentfp.synth import CorpusManifest
    from latentfp.training import TrainConfig, read_config_file, train

    values: dict = {}
    if args.config:
        values.update(read_config_file(args.config))
    values.update({k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None})
    try:
        cfg = TrainConfig.from_mapping(values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    log.header("train", cfg.seed, {k: getattr(cfg, k) for k in cfg.__dataclass_fields__})
    manifest = CorpusManifest.read(args.manifest)

    def progress(rec):
        if rec.step == 1 or rec.step % 50 == 0 or rec.step == cfg.max_steps:
            log.write(f"step {rec.step} adv {rec.loss_G_adv:.4f} recon {rec.loss_G_recon:.4f} D {rec.loss_D:.4f}")

    train(manifest, cfg, args.out, on_step=progress)
    log.write(f"checkpoint: {Path(args.out) / 'final.lfp'}")
    return EXIT_OK


def _cmd_enhance(args, log: RunLog) -> int:
    from latentfp.gabor import gabor_enhance
    from latentfp.generator import GeneratorConfig
    from latentfp.imaging import load_image, save_image
    from latentfp.training import enhance_full, load_generator

    log.header("enhance", "-", vars(args))
    img = load_image(args.input)
    if args.method == "gabor":
        out = gabor_enhance(img)
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required for --method gan")
        gen = load_generator(args.checkpoint, GeneratorConfig(depth=args.depth, base_channels=args.base_channels))
        out = enhance_full(img, gen, window=args.window, stride=args.stride)
    save_image(out, args.output)
    return EXIT_OK


def _cmd_minutiae(args, log: RunLog) -> int:
    from latentfp.imaging import load_image
    from latentfp.minutiae import extract_minutiae, render_minutiae, save_rgb, save_template

    log.header("minutiae", "-", vars(args))
    img = load_image(args.input)
    ms = extract_minutiae(img)
    save_template(ms, args.output)
    if args.render:
        save_rgb(render_minutiae(img, ms), args.render)
    log.write(f"{len(ms)} minutiae")
    return EXIT_OK


def _cmd_match(args, log: RunLog) -> int:
    from latentfp.minutiae import load_template, match_minutiae, render_table

    log.header("match", "-", vars(args))
    try:
        report = match_minutiae(load_template(args.gt), load_template(args.extracted), args.tol_px, args.tol_rad)
    except ValueError as exc:
        if isinstance(exc, LatentFPError):
            raise
        raise UsageError(str(exc)) from None
    if args.output:
        Path(args.output).write_text(report.to_tsv(), encoding="utf-8")
    print(render_table({"extracted": report}))
    return EXIT_OK


def _read_id_table(path: str, fields: int) -> list[list[str]]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"list not found: {p}")
    rows = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != fields:
            raise DataError(f"{p}:{lineno}: expected {fields} tab-separated fields")
        if not Path(parts[1]).is_absolute():
            parts[1] = str(p.parent / parts[1])
        rows.append(parts)
    return rows


def _cmd_cmc(args, log: RunLog) -> int:
    from latentfp.evaluation import PUBLISHED_RANK1, build_score_matrix, cmc, emit_cmc_plot
    from latentfp.minutiae import load_template

    log.header("cmc", "-", vars(args))
    probes = _read_id_table(args.probes, 3)
    gallery = _read_id_table(args.gallery, 2)
    matrix = build_score_matrix(
        {pid: load_template(path) for pid, path, _ in probes},
        {gid: load_template(path) for gid, path in gallery},
        {pid: mate for pid, _, mate in probes},
    )
    out = Path(args.out)
    if not out.parent.is_dir():
        raise DataError(f"directory does not exist: {out.parent}")
    out.with_name(out.name + "_scores.tsv").write_text(matrix.to_tsv(), encoding="utf-8")
    curve = cmc(matrix, args.label)
    emit_cmc_plot([curve], out, references=PUBLISHED_RANK1)
    print(f"rank-1 {curve.rank1():.4f}")
    return EXIT_OK


def _cmd_gradcheck(args, log: RunLog) -> int:
    from latentfp.gradsuite import CASES, run_suite

    log.header("gradcheck", "0.." + str(args.seeds - 1), vars(args))
    cases = args.cases.split(",") if args.cases else list(CASES)
    unknown = [c for c in cases if c not in CASES]
    if unknown:
        raise UsageError(f"unknown gradcheck case(s): {', '.join(unknown)}")
    results = run_suite(range(args.seeds), cases)
    worst: dict[str, float] = {}
    for r in results:
        worst[r.case] = max(worst.get(r.case, 0.0), r.max_rel_error)
    failed = 0
    for name in cases:
        ok = worst[name] <= args.tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<20} max rel error {worst[name]:.3e}")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def _cmd_report(args, log: RunLog) -> int:
    from latentfp.experiment import DeskConfig, run_experiment

    cfg = DeskConfig(seed=args.seed, run_cmc=not args.skip_cmc)
    if args.steps is not None:
        cfg = cfg.with_steps(args.steps)
    log.header("report", cfg.seed, cfg.echo())
    result = run_experiment(cfg, args.work, progress=log.write)
    summary = result.summary()
    Path(args.work, "summary.txt").write_text(summary, encoding="utf-8")
    print(summary)
    return EXIT_OK


COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "enhance": _cmd_enhance,
    "minutiae": _cmd_minutiae,
    "match": _cmd_match,
    "cmc": _cmd_cmc,
    "gradcheck": _cmd_gradcheck,
    "report": _cmd_report,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        log = RunLog(args.log)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args, log)
        return COMMANDS[args.command](args, log)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
