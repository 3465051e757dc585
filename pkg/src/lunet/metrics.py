"""Masked dice, bootstrap confidence intervals, learning curves and biomarker correlation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .data.sample import Colormap, decode_mask, read_rgb

EMPTY_DICE = 1.0


class UndefinedCorrelation(ValueError):
    pass


class MismatchError(ValueError):
    def __init__(self, missing_pred, missing_gt):
        self.missing_pred = sorted(missing_pred)
        self.missing_gt = sorted(missing_gt)
        super().__init__(
            f"unmatched ids: no prediction for {self.missing_pred}, no ground truth for {self.missing_gt}"
        )


def dice_score(pred, gt, unknown=None) -> float:
    """2|P&G| / (|P|+|G|) over pixels not flagged unknown; 1.0 if both are empty."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if unknown is not None:
        unknown = np.asarray(unknown, dtype=bool)
        if unknown.shape != gt.shape:
            raise ValueError(f"unknown mask shape {unknown.shape} differs from {gt.shape}")
        keep = ~unknown
        pred, gt = pred & keep, gt & keep
    denom = int(pred.sum()) + int(gt.sum())
    if denom == 0:
        return EMPTY_DICE
    return 2.0 * int((pred & gt).sum()) / denom


def bootstrap_ci(scores, n_rounds=1000, frac=0.8, seed=0, level=95.0) -> Tuple[float, float]:
    """Percentile interval of the mean over resamples of round(frac*N) with replacement."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("bootstrap_ci needs at least one score")
    if not 0 < frac <= 1:
        raise ValueError(f"frac must be in (0, 1], got {frac}")
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    n = scores.size
    m = max(1, int(math.floor(frac * n + 0.5)))
    rng = np.random.default_rng(seed)
    means = np.empty(n_rounds)
    for i in range(n_rounds):
        means[i] = scores[rng.integers(0, n, size=m)].mean()
    tail = (100.0 - level) / 2
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    # guard against interpolation round-off stepping outside the sample range
    lo = float(np.clip(lo, scores.min(), scores.max()))
    hi = float(np.clip(hi, scores.min(), scores.max()))
    return lo, hi


@dataclass
class EvalReport:
    per_image: List[Tuple[str, float, float]]
    mean_dice_a: float
    mean_dice_v: float
    ci_a: Tuple[float, float]
    ci_v: Tuple[float, float]
    n_bootstrap: int = 1000
    sample_frac: float = 0.8
    seed: int = 0

    @property
    def n(self) -> int:
        return len(self.per_image)

    def footer(self) -> Dict[str, object]:
        return {
            "mean_dice_a": self.mean_dice_a,
            "ci_a_lo": self.ci_a[0],
            "ci_a_hi": self.ci_a[1],
            "mean_dice_v": self.mean_dice_v,
            "ci_v_lo": self.ci_v[0],
            "ci_v_hi": self.ci_v[1],
            "n": self.n,
            "n_bootstrap": self.n_bootstrap,
            "sample_frac": self.sample_frac,
            "seed": self.seed,
        }

    def to_text(self) -> str:
        lines = [
            "# masked dice per image; pixels labelled unknown in the ground truth are ignored",
            "# an image whose masks are both empty after masking scores 1.0",
            "id,dice_a,dice_v",
        ]
        lines += [f"{i},{a!r},{v!r}" for i, a, v in self.per_image]
        lines.append("")
        lines.append("[summary]")
        lines += [f"{k} = {v!r}" for k, v in self.footer().items()]
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_text())

    @classmethod
    def parse(cls, text: str) -> "EvalReport":
        rows, footer, in_footer = [], {}, False
        for line in text.splitlines():
            if not line or line.startswith("#"):
                continue
            if line == "[summary]":
                in_footer = True
                continue
            if in_footer:
                k, v = (s.strip() for s in line.split("=", 1))
                footer[k] = v
            elif line != "id,dice_a,dice_v":
                i, a, v = line.rsplit(",", 2)
                rows.append((i, float(a), float(v)))
        return cls(
            per_image=rows,
            mean_dice_a=float(footer["mean_dice_a"]),
            mean_dice_v=float(footer["mean_dice_v"]),
            ci_a=(float(footer["ci_a_lo"]), float(footer["ci_a_hi"])),
            ci_v=(float(footer["ci_v_lo"]), float(footer["ci_v_hi"])),
            n_bootstrap=int(footer["n_bootstrap"]),
            sample_frac=float(footer["sample_frac"]),
            seed=int(footer["seed"]),
        )


def score_pair(pred_label: np.ndarray, gt_label: np.ndarray) -> Tuple[float, float]:
    """(dice_a, dice_v) of a predicted label against a ground-truth label triplet."""
    unknown = gt_label[..., 2]
    return (
        dice_score(pred_label[..., 0], gt_label[..., 0], unknown),
        dice_score(pred_label[..., 1], gt_label[..., 1], unknown),
    )


def summarize(per_image: Sequence[Tuple[str, float, float]], n_bootstrap=1000, frac=0.8, seed=0) -> EvalReport:
    if not per_image:
        raise ValueError("nothing to evaluate")
    a = [r[1] for r in per_image]
    v = [r[2] for r in per_image]
    return EvalReport(
        per_image=list(per_image),
        mean_dice_a=float(np.mean(a)),
        mean_dice_v=float(np.mean(v)),
        ci_a=bootstrap_ci(a, n_bootstrap, frac, seed),
        ci_v=bootstrap_ci(v, n_bootstrap, frac, seed),
        n_bootstrap=n_bootstrap,
        sample_frac=frac,
        seed=seed,
    )


def _mask_files(directory) -> Dict[str, Path]:
    return {p.stem: p for p in sorted(Path(directory).glob("*.png"))}


def evaluate_dataset(pred_dir, gt_dir, colormap: Colormap = None, n_bootstrap=1000, frac=0.8, seed=0,
                     report_path=None) -> EvalReport:
    """Score every ``<id>.png`` mask in ``pred_dir`` against ``gt_dir``."""
    preds, gts = _mask_files(pred_dir), _mask_files(gt_dir)
    if not gts:
        raise ValueError(f"no ground-truth masks in {gt_dir}")
    if set(preds) != set(gts):
        raise MismatchError(set(gts) - set(preds), set(preds) - set(gts))
    rows = []
    for sid in sorted(gts):
        pred = decode_mask(read_rgb(preds[sid]), colormap)
        gt = decode_mask(read_rgb(gts[sid]), colormap)
        if pred.shape != gt.shape:
            raise ValueError(f"{sid}: prediction {pred.shape[:2]} vs ground truth {gt.shape[:2]}")
        rows.append((sid, *score_pair(pred, gt)))
    report = summarize(rows, n_bootstrap, frac, seed)
    if report_path is not None:
        report.save(report_path)
    return report


def learning_curve(checkpoints, test_set, plan=None, threshold=0.5, multiple=None):
    """Rows of (train_size, mean dice_a, mean dice_v), sorted by training-set size.

    ``checkpoints`` is a sequence of (train_size, model); every model is
    scored on the same ``test_set`` of labelled samples.
    """
    from .inference import binarize, masks_to_label, predict

    checkpoints = list(checkpoints)
    if not checkpoints or not test_set:
        raise ValueError("learning_curve needs checkpoints and a test set")
    rows = []
    for size, model in sorted(checkpoints, key=lambda c: c[0]):
        mult = multiple or model.config.multiple
        scores = []
        for s in test_set:
            a, v, _ = binarize(predict(model, s.image, plan, mult), threshold)
            scores.append(score_pair(masks_to_label(a, v), s.label))
        rows.append((size, float(np.mean([d[0] for d in scores])), float(np.mean([d[1] for d in scores]))))
    return rows


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelation("correlation is undefined for a constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def biomarker_correlations(truth: Mapping[str, Sequence[float]], estimate: Mapping[str, Sequence[float]]):
    """Pearson r per biomarker plus their mean.

    Both mappings go from biomarker name to a per-image vector, as produced
    by an external biomarker toolbox for reference and predicted masks.
    """
    missing = set(truth) ^ set(estimate)
    if missing:
        raise ValueError(f"biomarkers present on one side only: {sorted(missing)}")
    table = {name: pearson(truth[name], estimate[name]) for name in sorted(truth)}
    mean = float(np.mean(list(table.values()))) if table else float("nan")
    return table, mean


def read_biomarker_csv(path) -> Dict[str, List[float]]:
    """CSV with an ``id`` column and one column per biomarker."""
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    names = [k for k in rows[0] if k != "id"]
    rows.sort(key=lambda r: r.get("id", ""))
    return {n: [float(r[n]) for r in rows] for n in names}
