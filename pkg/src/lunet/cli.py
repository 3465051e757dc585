"""Command-line entry points: train, predict, eval, prepare, synth.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("lunet")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}


class UsageError(Exception):
    pass


def _colormap(path):
    from .data import Colormap

    if path is None:
        return Colormap.default()
    if not Path(path).is_file():
        raise UsageError(f"colormap file {path} does not exist")
    return Colormap.load(path)


def _list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"input directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_train(args) -> int:
    from .checkpoint import Checkpoint
    from .config import load_config, validate_for_training
    from .data import load_sample, read_manifest, split_dataset
    from .model import build_lunet
    from .trainer import train
    import torch

    cfg = load_config(args.config)
    validate_for_training(cfg)
    colormap = _colormap(cfg.colormap)
    rows = read_manifest(cfg.manifest)
    unassigned = [r for r in rows if not r.split]
    if unassigned:
        manifest = split_dataset([(r.id, r.patient_id or r.id) for r in unassigned],
                                 cfg.train_frac, cfg.val_frac, cfg.seed)
        for r in unassigned:
            r.split = manifest.split_of(r.id)
    samples = {r.id: load_sample(r, colormap) for r in rows if r.split in ("train", "val")}
    train_set = [samples[r.id] for r in rows if r.split == "train"]
    val_set = [samples[r.id] for r in rows if r.split == "val"]
    if not train_set or not val_set:
        raise UsageError(f"manifest needs train and val rows (got {len(train_set)} train, {len(val_set)} val)")

    torch.manual_seed(cfg.seed)
    model = build_lunet(cfg.model)
    resume = None
    last = cfg.checkpoint_dir / "last.ckpt"
    if (cfg.resume or args.resume) and last.exists():
        resume = Checkpoint.load(last)
        log.info("resuming from %s at epoch %d", last, resume.epoch)
    best, state = train(model, train_set, val_set, cfg.train, resume=resume)
    log.info("best epoch %d, val loss %.6f", state.best_epoch, state.best_val_loss)
    print(f"best_epoch={state.best_epoch} best_val_loss={state.best_val_loss!r}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .checkpoint import Checkpoint
    from .data import normalize, read_rgb
    from .inference import TTAPlan, predict, write_prediction

    if not 0 < args.threshold < 1:
        raise UsageError(f"--threshold must be in (0, 1), got {args.threshold}")
    if not Path(args.model).is_file():
        raise UsageError(f"model checkpoint {args.model} does not exist")
    images = _list_images(args.input)
    if not images:
        print(f"no inputs found in {args.input}", file=sys.stderr)
        return EXIT_INVALID
    model = Checkpoint.load(args.model).build_model()
    plan = TTAPlan(args.angles, not args.no_transpose) if args.tta else None
    colormap = _colormap(args.colormap)
    failures = 0
    for path in images:
        try:
            raw = read_rgb(path)
        except Exception as exc:  # unreadable raster: warn and keep going
            log.warning("skipping %s: %s", path, exc)
            failures += 1
            continue
        image = normalize(raw)
        prob = predict(model, image, plan, model.config.multiple)
        write_prediction(args.output, path.stem, image, prob, args.threshold, colormap, args.save_prob)
    if failures == len(images):
        print("all inputs failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate_dataset

    for d in (args.pred_dir, args.gt_dir):
        if not Path(d).is_dir():
            raise UsageError(f"directory {d} does not exist")
    report_path = args.report or Path(args.pred_dir) / "report.txt"
    report = evaluate_dataset(args.pred_dir, args.gt_dir, _colormap(args.colormap), args.bootstrap,
                              args.frac, args.seed, report_path)
    print(report.to_text(), end="")
    return EXIT_OK


def _read_od_centers(path):
    centers = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            centers[rec["id"]] = (float(rec["x"]), float(rec["y"]))
    return centers


def cmd_prepare(args) -> int:
    from .data import adapt_external, read_rgb, write_rgb
    from .data.adapters import KINDS

    kind = args.kind.upper().replace("-", "_")
    if kind not in KINDS:
        raise UsageError(f"unknown kind {args.kind!r}; expected one of {KINDS}")
    centers = None
    if kind == "HRF":
        if not args.od_centers:
            raise UsageError("HRF framing needs --od-centers (CSV with id,x,y)")
        centers = _read_od_centers(args.od_centers)
    images = _list_images(args.input)
    if not images:
        raise UsageError(f"no inputs found in {args.input}")
    out = Path(args.output)
    for path in images:
        od = None
        if centers is not None:
            if path.stem not in centers:
                raise UsageError(f"{path.stem}: missing from {args.od_centers}")
            od = centers[path.stem]
        framed = adapt_external(read_rgb(path), kind, od, mask=args.mask)
        write_rgb(out / f"{path.stem}.png", framed)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import (Colormap, ManifestRow, SynthConfig, encode_mask, generate_synthetic_dfi,
                       split_dataset, to_uint8, write_manifest, write_rgb)

    out = Path(args.output)
    cfg = SynthConfig(size=args.size, unknown_band=args.unknown_band)
    rows = []
    for k in range(args.n):
        s = generate_synthetic_dfi(args.seed + k, cfg=cfg)
        write_rgb(out / "images" / f"{s.id}.png", to_uint8(s.image))
        write_rgb(out / "masks" / f"{s.id}.png", encode_mask(s.label))
        rows.append(ManifestRow(s.id, f"images/{s.id}.png", f"masks/{s.id}.png", s.patient_id, s.eye))
    if args.n >= 2:
        manifest = split_dataset([(r.id, r.patient_id) for r in rows], args.train_frac, args.val_frac, args.seed)
        for r in rows:
            r.split = manifest.split_of(r.id)
    write_manifest(out / "manifest.csv", rows)
    Colormap.default().save(out / "colormap.txt")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lunet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--resume", action="store_true", help="continue from last.ckpt if present")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="segment every image in a directory")
    pr.add_argument("--model", required=True, type=Path)
    pr.add_argument("--input", required=True, type=Path)
    pr.add_argument("--output", required=True, type=Path)
    pr.add_argument("--tta", action=argparse.BooleanOptionalAction, default=True)
    pr.add_argument("--angles", type=float, nargs="+", default=list(range(0, 360, 30)))
    pr.add_argument("--no-transpose", action="store_true")
    pr.add_argument("--threshold", type=float, default=0.5)
    pr.add_argument("--save-prob", action="store_true")
    pr.add_argument("--colormap", type=Path)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="masked dice with bootstrap confidence intervals")
    e.add_argument("pred_dir", type=Path)
    e.add_argument("gt_dir", type=Path)
    e.add_argument("--bootstrap", type=int, default=1000)
    e.add_argument("--frac", type=float, default=0.8)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--colormap", type=Path)
    e.add_argument("--report", type=Path)
    e.set_defaults(func=cmd_eval)

    pp = sub.add_parser("prepare", help="frame external-dataset images to 1444x1444")
    pp.add_argument("kind", help="UNAF, INSPIRE_AVR, LES_AV or HRF")
    pp.add_argument("input", type=Path)
    pp.add_argument("output", type=Path)
    pp.add_argument("--od-centers", type=Path, help="CSV with id,x,y (HRF only)")
    pp.add_argument("--mask", action="store_true", help="inputs are label masks (nearest resampling)")
    pp.set_defaults(func=cmd_prepare)

    s = sub.add_parser("synth", help="write a synthetic dataset with manifest and colormap")
    s.add_argument("output", type=Path)
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--unknown-band", action="store_true")
    s.add_argument("--train-frac", type=float, default=0.85)
    s.add_argument("--val-frac", type=float, default=0.15)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    from .config import ConfigValidationError
    from .data import AdapterError, DecodeError, SplitError
    from .metrics import MismatchError
    from .model import ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigValidationError, ConfigError, MismatchError, AdapterError, SplitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        log.exception("runtime failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
