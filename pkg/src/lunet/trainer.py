"""Epoch loop with online augmentation and best-validation-loss model retention."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .checkpoint import Checkpoint
from .data.preprocess import AugmentConfig, augment, derive_seed, pad_to_multiple
from .data.sample import FundusSample
from .losses import LossWeights, lunet_loss_terms

log = logging.getLogger(__name__)

HISTORY_COLUMNS = (
    "epoch", "train_loss", "val_loss",
    "train_artery", "train_venule", "train_vessel",
    "val_artery", "val_venule", "val_vessel",
)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1300
    batch_size: int = 8
    learning_rate: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_dir: Optional[str] = None
    augment: bool = True
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        self.betas = tuple(self.betas)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    epoch: int = 0
    best_val_loss: float = float("inf")
    best_epoch: int = 0
    history: List[dict] = field(default_factory=list)

    def record(self, row: dict) -> bool:
        """Append an epoch row; True when it improves the best validation loss."""
        self.history.append(row)
        self.epoch = row["epoch"]
        if row["val_loss"] < self.best_val_loss:
            self.best_val_loss = row["val_loss"]
            self.best_epoch = row["epoch"]
            return True
        return False


def to_tensors(samples: Sequence[FundusSample], multiple: int, dtype=torch.float32):
    """Pad and stack samples into (N, 3, H, W) images and (N, 3, H, W) labels."""
    images, labels = [], []
    for s in samples:
        img, _ = pad_to_multiple(s.image, multiple)
        lab, _ = pad_to_multiple(s.label, multiple)
        images.append(img)
        labels.append(lab)
    shapes = {i.shape for i in images}
    if len(shapes) > 1:
        raise ValueError(f"cannot batch samples of different sizes {sorted(shapes)}; enable rescaling")
    x = torch.from_numpy(np.stack(images)).permute(0, 3, 1, 2).to(dtype)
    y = torch.from_numpy(np.stack(labels)).permute(0, 3, 1, 2).to(dtype)
    return x.contiguous(), y.contiguous()


def _terms_to_floats(terms):
    return {k: float(v.detach()) for k, v in terms.items()}


def validate(model, val_set: Sequence[FundusSample], weights: LossWeights = None, multiple=None,
             parts=False):
    """Mean per-sample loss with dropout off and no augmentation."""
    if not val_set:
        raise ValueError("validation set is empty")
    weights = weights or LossWeights()
    multiple = multiple or model.config.multiple
    dtype = next(model.parameters()).dtype
    model.eval()
    totals = {"artery": 0.0, "venule": 0.0, "vessel": 0.0}
    with torch.no_grad():
        for s in val_set:
            x, y = to_tensors([s], multiple, dtype)
            terms = lunet_loss_terms(model(x), y, weights)
            for k in totals:
                totals[k] += float(terms[k])
    means = {k: v / len(val_set) for k, v in totals.items()}
    loss = means["artery"] + means["venule"] + means["vessel"]
    return (loss, means) if parts else loss


def _write_history(path: Path, history: List[dict]):
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])
    tmp.replace(path)


def read_history(path) -> List[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in rec.items()}
            for rec in csv.DictReader(fh)
        ]


def train(model, train_set: Sequence[FundusSample], val_set: Sequence[FundusSample],
          config: TrainConfig = None, resume: Optional[Checkpoint] = None,
          on_epoch: Optional[Callable[[int, dict], Optional[bool]]] = None):
    """Train ``model`` in place and return ``(best_checkpoint, state)``.

    Randomness (shuffling, augmentation, dropout) is derived from
    ``(config.seed, epoch)`` and per-sample ids, so a run resumed from its
    ``last.ckpt`` continues exactly as the uninterrupted run would.
    ``on_epoch(epoch, row)`` may return True to stop after that epoch.
    """
    config = config or TrainConfig()
    if not train_set:
        raise ValueError("training set is empty")
    if not val_set:
        raise ValueError("validation set is empty")
    multiple = model.config.multiple
    dtype = next(model.parameters()).dtype
    aug = config.augmentation
    if aug.multiple % multiple:
        aug = AugmentConfig(**{**asdict(aug), "multiple": multiple})

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=config.betas)
    state = TrainState()
    best: Optional[Checkpoint] = None
    if resume is not None:
        model.load_state_dict(resume.state_dict)
        if resume.optimizer is not None:
            optimizer.load_state_dict(resume.optimizer)
        for row in resume.history:
            state.record(dict(row))
        if config.checkpoint_dir and (Path(config.checkpoint_dir) / "best.ckpt").exists():
            best = Checkpoint.load(Path(config.checkpoint_dir) / "best.ckpt")

    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    cached = None
    n = len(train_set)

    for epoch in range(state.epoch + 1, config.epochs + 1):
        rng = np.random.default_rng(derive_seed(config.seed, "epoch", epoch))
        torch.manual_seed(derive_seed(config.seed, "torch", epoch))
        order = rng.permutation(n)
        model.train()
        sums = {"artery": 0.0, "venule": 0.0, "vessel": 0.0}
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            if config.augment:
                side = aug.draw_size(rng) if aug.rescale else None
                batch = [
                    augment(train_set[i], derive_seed(config.seed, train_set[i].id or i, epoch), aug, side)
                    for i in idx
                ]
                x, y = to_tensors(batch, multiple, dtype)
            else:
                if cached is None:
                    cached = to_tensors(train_set, multiple, dtype)
                x, y = cached[0][idx], cached[1][idx]
            terms = lunet_loss_terms(model(x), y, config.weights)
            loss = terms["artery"] + terms["venule"] + terms["vessel"]
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b}: {_terms_to_floats(terms)}"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            for k in sums:
                sums[k] += terms[k].item() * len(idx)

        train_parts = {k: v / n for k, v in sums.items()}
        val_loss, val_parts = validate(model, val_set, config.weights, multiple, parts=True)
        row = {
            "epoch": epoch,
            "train_loss": sum(train_parts.values()),
            "val_loss": val_loss,
            **{f"train_{k}": v for k, v in train_parts.items()},
            **{f"val_{k}": v for k, v in val_parts.items()},
        }
        improved = state.record(row)
        log.info("epoch %d train %.5f val %.5f%s", epoch, row["train_loss"], val_loss,
                 " *" if improved else "")
        if improved:
            best = Checkpoint.from_model(
                model, epoch=epoch, best_val_loss=val_loss, train_config=config.to_dict(),
                history=list(state.history),
            )
            if ckpt_dir:
                best.save(ckpt_dir / "best.ckpt")
        if ckpt_dir:
            Checkpoint.from_model(
                model, epoch=epoch, best_val_loss=state.best_val_loss, train_config=config.to_dict(),
                optimizer=optimizer.state_dict(), history=list(state.history),
            ).save(ckpt_dir / "last.ckpt")
            _write_history(ckpt_dir / "history.csv", state.history)
        if on_epoch is not None and on_epoch(epoch, row):
            log.info("stopped by callback after epoch %d", epoch)
            break

    if best is None:
        best = Checkpoint.from_model(model, epoch=state.epoch, best_val_loss=state.best_val_loss,
                                     train_config=config.to_dict(), history=list(state.history))
    return best, state
