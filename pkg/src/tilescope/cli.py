"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 I/O, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .augment import AugmentationPolicy, gaussian_blur, jpeg_degrade, random_patch_swap, random_scale
from .corpus import FakeRecipe, Sample, SyntheticCorpusSpec, generate_corpus, split, suppress, value_noise
from .errors import CorruptFile, IoFailure, NonFiniteLoss, TilescopeError, UnsupportedFormat
from .evaluate import TilingMode, curve_csv, evaluate, robustness_sweep
from .image import load_image, save_image
from .model import ModelConfig, init_params
from . import recipes
from .recipes import HELD_OUT_OFFSET
from .spectral import PreprocessMode, band_mean, radial_index, energy_ratio_map, write_ratio_csv, write_ratio_pgm
from .tiling import full_coverage_plan, normalized_size
from .train import Optimizer, Schedule, TrainConfig, train, trace_csv

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")


class UsageError(Exception):
    pass


def _write(path: Path, text: str | bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(text, bytes):
            path.write_bytes(text)
        else:
            path.write_text(text)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _list_images(folder: Path) -> list[Path]:
    if not folder.is_dir():
        raise IoFailure(f"{folder} is not a directory")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_corpus_dir(root: str | os.PathLike) -> list[Sample]:
    """``real/`` and ``fake/`` image folders; ``paired/`` holds optional partners named like the reals."""
    root = Path(root)
    if not root.is_dir():
        raise UsageError(f"corpus directory {root} does not exist")
    paired_dir = root / "paired"
    reals = []
    for p in _list_images(root / "real"):
        partner = paired_dir / p.name
        reals.append(Sample(load_image(p), 0, load_image(partner) if partner.exists() else None))
    fakes = [Sample(load_image(p), 1) for p in _list_images(root / "fake")]
    return reals + fakes


# ---- argument parsing ------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap (default: all cores)")
    p.add_argument("--out", default="runs", help="output directory")


def _add_corpus(p: argparse.ArgumentParser, count: int = recipes.TEST_PER_CLASS) -> None:
    p.add_argument("--corpus", help="directory with real/ and fake/ subfolders")
    p.add_argument("--count", type=int, default=count, help="synthetic images per class")
    p.add_argument("--size-min", type=int, default=recipes.SIZE_RANGE[0])
    p.add_argument("--size-max", type=int, default=recipes.SIZE_RANGE[1])
    p.add_argument("--recipe", choices=[r.value for r in FakeRecipe], default=FakeRecipe.LOW_PASS_NOISE.value)
    p.add_argument("--data-seed", type=int, default=None)


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", help="checkpoint file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tilescope", description="Tiled AI-image detection experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectra", help="real/fake spectral energy ratio maps")
    _add_common(p)
    p.add_argument("--input", help="directory with real/ and fake/ subfolders")
    p.add_argument("--synthetic", action="store_true", help="use a generated corpus")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--size-min", type=int, default=64)
    p.add_argument("--size-max", type=int, default=160)
    p.add_argument("--recipe", choices=[r.value for r in FakeRecipe], default=FakeRecipe.LOW_PASS_NOISE.value)
    p.add_argument("--out-size", type=int, default=32)

    p = sub.add_parser("tile-plan", help="full-coverage tile origins")
    _add_common(p)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--tile", type=int, default=224)

    p = sub.add_parser("augment-preview", help="write each augmentation of one image")
    _add_common(p)
    p.add_argument("--input", help="PPM/PGM image (default: a generated texture)")
    p.add_argument("--qf", type=int, default=70)
    p.add_argument("--sigma", type=float, default=1.5)
    p.add_argument("--scale", type=float, default=0.5)
    p.add_argument("--ratio", type=float, default=0.5)

    p = sub.add_parser("synth-data", help="write a synthetic corpus")
    _add_common(p)
    _add_corpus(p)

    p = sub.add_parser("train", help="train the detector")
    _add_common(p)
    _add_corpus(p, recipes.TRAIN_PER_CLASS)
    rates = dict(recipes.GATE_RATES)
    p.add_argument("--steps", type=int, default=recipes.STEPS)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=recipes.LEARNING_RATE)
    p.add_argument("--optimizer", choices=[o.value for o in Optimizer], default=Optimizer.ADAMW.value)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--ablate", choices=["tfl", "qfe", "both"], default=None)
    p.add_argument("--p-each", type=float, default=0.1, help="probability of each augmentation")
    p.add_argument("--jpeg-rate", type=float, default=rates["jpeg"], help="JPEG probability; negative means --p-each")
    p.add_argument("--rps-rate", type=float, default=rates["rps"], help="patch-swap probability; negative means --p-each")
    p.add_argument("--schedule", choices=[x.value for x in Schedule], default=Schedule.CONSTANT.value)
    p.add_argument("--warmup", type=int, default=0, help="linear warmup steps")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--backbone-depth", type=int, default=2)
    p.add_argument("--frozen-backbone", action="store_true")

    for name, text in (("eval", "evaluate a checkpoint"), ("robustness", "accuracy under perturbation")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        _add_corpus(p)
        _add_model(p)
        p.add_argument("--mode", choices=[m.value for m in TilingMode], default=TilingMode.FULL.value)
        if name == "robustness":
            p.add_argument("--perturb", choices=["jpeg", "blur", "scale"], required=True)
            p.add_argument("--levels", required=True, help="comma-separated levels")
    return parser


def _config_defaults(path: str, sub: argparse.ArgumentParser) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    except ValueError as exc:
        raise UsageError(f"bad config JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a flat JSON object")
    known = {a.dest for a in sub._actions}
    out = {}
    for key, value in raw.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        out[dest] = value
    return out


def parse(argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    early, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if early.config and command:
        sub = choices[command]
        values = _config_defaults(early.config, sub)
        # a config value satisfies a required flag; the command line still wins
        for action in sub._actions:
            if action.dest in values:
                action.required = False
        sub.set_defaults(**values)
    return parser.parse_args(argv)


# ---- subcommands -----------------------------------------------------------


def _corpus_from(args, held_out: bool) -> list[Sample]:
    if args.corpus:
        return load_corpus_dir(args.corpus)
    seed = args.data_seed if args.data_seed is not None else args.seed + (HELD_OUT_OFFSET if held_out else 0)
    return generate_corpus(SyntheticCorpusSpec(args.count, (args.size_min, args.size_max), FakeRecipe(args.recipe), seed))


def run_spectra(args) -> int:
    if args.synthetic:
        spec = SyntheticCorpusSpec(args.count, (args.size_min, args.size_max), FakeRecipe(args.recipe), args.seed)
        real, fake = split(generate_corpus(spec))
    elif args.input:
        samples = load_corpus_dir(args.input)
        real, fake = split(samples)
    else:
        raise UsageError("give --input DIR or --synthetic")
    out = Path(args.out)
    n = args.out_size
    rows = [f"# seed={args.seed}", "mode,inner_mean,outer_mean,all_mean"]
    for mode in PreprocessMode:
        ratio = energy_ratio_map(real, fake, mode, n, seed=args.seed)
        out.mkdir(parents=True, exist_ok=True)
        write_ratio_csv(ratio, out / f"ratio_{mode.value}.csv", seed=args.seed)
        write_ratio_pgm(ratio, out / f"ratio_{mode.value}.pgm", seed=args.seed)
        outer = band_mean(ratio, 0.6 * n / 2)
        inner = float(ratio[radial_index(n) <= 0.6 * n / 2].mean())
        rows.append(f"{mode.value},{inner:.10g},{outer:.10g},{ratio.mean():.10g}")
        print(f"{mode.value}: outer-band real/fake energy ratio {outer:.4g}")
    _write(out / "bands.csv", "\n".join(rows) + "\n")
    return EXIT_OK


def run_tile_plan(args) -> int:
    h, w, tile = args.height, args.width, args.tile
    if min(h, w, tile) < 1:
        raise UsageError("height, width and tile must be positive")
    nh, nw = normalized_size(h, w, tile)
    if (nh, nw) != (h, w):
        print(f"normalized {h}x{w} to {nh}x{nw}")
    plan = full_coverage_plan(nh, nw, tile)
    print(f"tiles per axis: {-(-nh // tile)} x {-(-nw // tile)}")
    _write(Path(args.out) / "tile_plan.csv", plan.to_csv(args.seed))
    return EXIT_OK


def run_augment_preview(args) -> int:
    rng = np.random.default_rng(args.seed)
    img = load_image(args.input) if args.input else value_noise(128, 128, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"seed={args.seed}"
    save_image(img, out / "original.ppm", tag)
    save_image(jpeg_degrade(img, args.qf), out / f"jpeg_q{args.qf}.ppm", tag)
    save_image(gaussian_blur(img, args.sigma), out / "blur.ppm", tag)
    save_image(random_scale(img, args.scale), out / "scale.ppm", tag)
    comp, mask = random_patch_swap(img, suppress(img, FakeRecipe.LOW_PASS_NOISE), args.ratio, 14, rng)
    save_image(comp, out / "rps.ppm", tag)
    save_image(mask[:, :, None].astype(np.float64), out / "rps_mask.pgm", tag)
    return EXIT_OK


def run_synth_data(args) -> int:
    corpus = _corpus_from(args, held_out=False)
    out = Path(args.out)
    tag = f"seed={args.data_seed if args.data_seed is not None else args.seed}"
    for folder in ("real", "fake", "paired"):
        (out / folder).mkdir(parents=True, exist_ok=True)
    i_real = i_fake = 0
    for s in corpus:
        if s.label == 0:
            save_image(s.image, out / "real" / f"{i_real:05d}.ppm", tag)
            if s.paired is not None:
                save_image(s.paired, out / "paired" / f"{i_real:05d}.ppm", tag)
            i_real += 1
        else:
            save_image(s.image, out / "fake" / f"{i_fake:05d}.ppm", tag)
            i_fake += 1
    print(f"wrote {i_real} real and {i_fake} fake images to {out}")
    return EXIT_OK


ABLATIONS = {None: (1.0, 1.0, 1.0), "tfl": (1.0, 0.0, 1.0), "qfe": (1.0, 1.0, 0.0), "both": (1.0, 0.0, 0.0)}


def run_train(args) -> int:
    cfg = ModelConfig(
        image_size=args.image_size,
        patch_size=args.patch_size,
        embed_dim=args.embed_dim,
        heads=args.heads,
        backbone_depth=args.backbone_depth,
        backbone_frozen=args.frozen_backbone,
        init_seed=args.seed,
    )
    tcfg = TrainConfig(
        learning_rate=args.lr,
        steps=args.steps,
        batch_size=args.batch_size,
        optimizer=Optimizer(args.optimizer),
        weight_decay=args.weight_decay,
        seed=args.seed,
        loss_weights=ABLATIONS[args.ablate],
        schedule=Schedule(args.schedule),
        warmup_steps=args.warmup,
    )
    rates = tuple((g, r) for g, r in (("jpeg", args.jpeg_rate), ("rps", args.rps_rate)) if r >= 0)
    corpus = _corpus_from(args, held_out=False)
    init = init_params(cfg, args.seed)
    out = Path(args.out)
    meta = {"seed": args.seed}
    _write(out / "init.bin", ckpt.dumps(init, cfg, meta))
    result = train(corpus, init, cfg, tcfg, AugmentationPolicy(p_each=args.p_each, seed=args.seed, gate_rates=rates))
    _write(out / "checkpoint.bin", ckpt.dumps(result.params, cfg, meta))
    _write(out / "loss_trace.csv", trace_csv(result.trace, args.seed))
    last = result.trace[-1].total if result.trace else None
    summary = {"seed": args.seed, "steps": args.steps, "loss_weights": list(tcfg.loss_weights), "final_loss": last}
    _write(out / "train_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _load_model(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    params, cfg, _ = ckpt.load_checkpoint(args.checkpoint)
    return params, cfg


def run_eval(args) -> int:
    params, cfg = _load_model(args)
    corpus = _corpus_from(args, held_out=True)
    m = evaluate(corpus, params, cfg, TilingMode(args.mode), seed=args.seed)
    out = Path(args.out)
    _write(out / f"metrics_{args.mode}.json", m.to_json(args.seed))
    _write(out / f"metrics_{args.mode}.csv", m.to_csv(args.seed))
    print(f"{args.mode}: accuracy {m.accuracy:.4f}")
    return EXIT_OK


def run_robustness(args) -> int:
    try:
        levels = [float(x) for x in args.levels.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad --levels {args.levels!r}") from None
    if not levels:
        raise UsageError("--levels is empty")
    params, cfg = _load_model(args)
    corpus = _corpus_from(args, held_out=True)
    curve = robustness_sweep(corpus, params, cfg, args.perturb, levels, TilingMode(args.mode), seed=args.seed)
    _write(Path(args.out) / f"robustness_{args.perturb}.csv", curve_csv(curve, args.perturb, args.seed))
    for lv, acc in curve:
        print(f"{args.perturb} {lv:g}: accuracy {acc:.4f}")
    return EXIT_OK


COMMANDS = {
    "spectra": run_spectra,
    "tile-plan": run_tile_plan,
    "augment-preview": run_augment_preview,
    "synth-data": run_synth_data,
    "train": run_train,
    "eval": run_eval,
    "robustness": run_robustness,
}


def main(argv=None) -> int:
    try:
        args = parse(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"tilescope: {exc}", file=sys.stderr)
        build_parser().print_usage(sys.stderr)
        return EXIT_USAGE
    except (IoFailure, OSError) as exc:
        print(f"tilescope: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tilescope: {exc}", file=sys.stderr)
        build_parser().print_usage(sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"tilescope: non-finite loss at step {exc.step}: {exc.args[0] if exc.args else ''}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IoFailure, CorruptFile, UnsupportedFormat, OSError) as exc:
        print(f"tilescope: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TilescopeError, ValueError) as exc:
        print(f"tilescope: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
