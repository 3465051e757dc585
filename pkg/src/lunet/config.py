"""Run configuration: INI sections whose keys map onto the library dataclasses.

    [paths]
    manifest = data/manifest.csv
    colormap = data/colormap.txt
    checkpoint_dir = runs/exp1

    [model]
    base_channels = 8

    [train]
    epochs = 50

Values are Python literals (numbers, lists, booleans); anything that does not
parse as a literal is kept as a string. Unknown sections and keys are errors.
"""
from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .data.preprocess import AugmentConfig
from .inference import TTAPlan
from .losses import LossWeights
from .model import ConfigError, LUNetConfig
from .trainer import TrainConfig


class ConfigValidationError(ValueError):
    pass


def _names(cls, exclude=()):
    return {f.name for f in fields(cls)} - set(exclude)


SECTIONS = {
    "run": {"seed", "resume"},
    "paths": {"manifest", "colormap", "checkpoint_dir"},
    "data": {"train_frac", "val_frac"},
    "model": _names(LUNetConfig),
    "train": _names(TrainConfig, exclude=("weights", "augmentation", "checkpoint_dir", "seed")),
    "loss": _names(LossWeights),
    "augment": _names(AugmentConfig),
    "tta": {"angles", "include_transpose"},
}


@dataclass
class RunConfig:
    model: LUNetConfig = field(default_factory=LUNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tta: TTAPlan = field(default_factory=TTAPlan)
    manifest: Optional[Path] = None
    colormap: Optional[Path] = None
    checkpoint_dir: Optional[Path] = None
    seed: int = 0
    resume: bool = False
    train_frac: float = 0.85
    val_frac: float = 0.15


def _literal(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_config_text(text: str, base_dir=".") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigValidationError(f"config syntax error: {exc}") from None

    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigValidationError(f"{section}: unknown section (expected one of {sorted(SECTIONS)})")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigValidationError(f"{section}.{key}: unknown key")
            values[f"{section}.{key}"] = _literal(raw)

    def section(name):
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}

    def build(name, cls, **extra):
        try:
            return cls(**section(name), **extra)
        except (TypeError, ValueError, ConfigError) as exc:
            raise ConfigValidationError(f"{name}: {exc}") from None

    base = Path(base_dir)
    paths = {}
    for key, v in section("paths").items():
        p = Path(str(v))
        paths[key] = p if p.is_absolute() else base / p

    run = section("run")
    data = section("data")
    cfg = RunConfig(
        model=build("model", LUNetConfig),
        train=build(
            "train", TrainConfig,
            weights=build("loss", LossWeights),
            augmentation=build("augment", AugmentConfig),
            seed=int(run.get("seed", 0)),
            checkpoint_dir=str(paths["checkpoint_dir"]) if "checkpoint_dir" in paths else None,
        ),
        tta=build("tta", TTAPlan),
        manifest=paths.get("manifest"),
        colormap=paths.get("colormap"),
        checkpoint_dir=paths.get("checkpoint_dir"),
        seed=int(run.get("seed", 0)),
        resume=bool(run.get("resume", False)),
        train_frac=float(data.get("train_frac", 0.85)),
        val_frac=float(data.get("val_frac", 0.15)),
    )
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigValidationError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), base_dir=path.parent)


def validate_for_training(cfg: RunConfig):
    """Field-level checks that need the filesystem."""
    if cfg.manifest is None:
        raise ConfigValidationError("paths.manifest: required for training")
    if not cfg.manifest.is_file():
        raise ConfigValidationError(f"paths.manifest: file {cfg.manifest} does not exist")
    if cfg.colormap is not None and not cfg.colormap.is_file():
        raise ConfigValidationError(f"paths.colormap: file {cfg.colormap} does not exist")
    if cfg.checkpoint_dir is None:
        raise ConfigValidationError("paths.checkpoint_dir: required for training")
