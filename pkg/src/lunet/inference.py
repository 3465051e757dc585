"""Test-time-augmented prediction and binarisation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .data.preprocess import pad_to_multiple, to_uint8
from .data.sample import Colormap, encode_mask, write_rgb

VALID_TOL = 1e-6


@dataclass
class TTAPlan:
    angles: Sequence[float] = tuple(range(0, 360, 30))
    include_transpose: bool = True

    def __post_init__(self):
        self.angles = tuple(float(a) for a in self.angles)
        if not self.angles:
            raise ValueError("TTA plan needs at least one angle")
        if len({a % 360 for a in self.angles}) != len(self.angles):
            raise ValueError(f"TTA angles must be distinct modulo 360, got {self.angles}")

    def entries(self) -> List[Tuple[bool, float]]:
        """(transpose, angle) pairs in canonical order."""
        flips = (False, True) if self.include_transpose else (False,)
        return sorted((t, a % 360) for t in flips for a in self.angles)

    def __len__(self):
        return len(self.angles) * (2 if self.include_transpose else 1)


IDENTITY_PLAN = TTAPlan(angles=(0,), include_transpose=False)


def _rotation_grid(h, w, angle, dtype, device):
    # sampling grid for out(p) = x(R^-1 (p - c) + c), matching torch.rot90 for +90
    theta = math.radians(angle)
    cos, sin = math.cos(theta), math.sin(theta)
    cu, cv = (h - 1) / 2, (w - 1) / 2
    u = torch.arange(h, dtype=dtype, device=device)[:, None] - cu
    v = torch.arange(w, dtype=dtype, device=device)[None, :] - cv
    su = cos * u + sin * v + cu
    sv = -sin * u + cos * v + cv
    gx = 2 * sv / max(w - 1, 1) - 1
    gy = 2 * su / max(h - 1, 1) - 1
    return torch.stack([gx.expand(h, w), gy.expand(h, w)], dim=-1)[None]


def rotate(x: torch.Tensor, angle: float, valid: Optional[torch.Tensor] = None):
    """Rotate (N, C, H, W) about the image centre; returns (rotated, validity).

    Right angles are exact. Other angles use bilinear interpolation with zero
    fill; a pixel is valid only if every source pixel it mixes is valid.
    """
    n, _, h, w = x.shape
    if valid is None:
        valid = x.new_ones((n, 1, h, w))
    angle = angle % 360
    if angle % 90 == 0:
        k = int(angle // 90)
        return torch.rot90(x, k, (-2, -1)), torch.rot90(valid, k, (-2, -1))
    grid = _rotation_grid(h, w, angle, x.dtype, x.device).expand(n, h, w, 2)
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=True)
    v = F.grid_sample(valid, grid, mode="bilinear", padding_mode="zeros", align_corners=True)
    return out, (v >= 1 - VALID_TOL).to(x.dtype)


def forward_transform(x, transpose: bool, angle: float):
    if transpose:
        x = x.transpose(-2, -1)
    return rotate(x, angle)


def inverse_transform(y, valid, transpose: bool, angle: float):
    y, valid_back = rotate(y * valid, -angle, valid)
    if transpose:
        y, valid_back = y.transpose(-2, -1), valid_back.transpose(-2, -1)
    return y * valid_back, valid_back


def _run(model, x):
    if isinstance(model, torch.nn.Module):
        model.eval()
    with torch.no_grad():
        return model(x)


def tta_predict(model: Callable, image: torch.Tensor, plan: TTAPlan = None) -> torch.Tensor:
    """Average of inverse-transformed predictions over the plan.

    ``image`` is (N, 3, H, W); returns (N, 2, H, W). Pixels outside a
    transform's field (rotation fill) are left out of that transform's share
    of the average.
    """
    plan = plan or TTAPlan()
    total, count = None, None
    for transpose, angle in plan.entries():
        xt, valid = forward_transform(image, transpose, angle)
        pred = _run(model, xt)
        if pred.shape[-2:] != xt.shape[-2:]:
            raise ValueError(f"model output {tuple(pred.shape)} does not match input {tuple(xt.shape)}")
        back, vb = inverse_transform(pred, valid, transpose, angle)
        total = back if total is None else total + back
        count = vb if count is None else count + vb
    return total / count.clamp_min(1)


def predict(model: Callable, image: np.ndarray, plan: Optional[TTAPlan] = None, multiple: int = 64) -> np.ndarray:
    """Normalised HxWx3 image -> HxWx2 probabilities (artery, venule).

    Pads to ``multiple``, runs the model (through TTA when a plan is given)
    and crops the padding off again.
    """
    padded, record = pad_to_multiple(np.asarray(image, dtype=np.float32), multiple)
    x = torch.from_numpy(np.ascontiguousarray(padded)).permute(2, 0, 1)[None]
    if plan is None:
        y = _run(model, x)
    else:
        y = tta_predict(model, x, plan)
    prob = y[0].permute(1, 2, 0).cpu().numpy()
    return np.ascontiguousarray(record.crop(prob))


def binarize(prob: np.ndarray, threshold: float = 0.5):
    """HxWx2 probabilities -> (artery, venule, vessel) boolean masks."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    artery = prob[..., 0] >= threshold
    venule = prob[..., 1] >= threshold
    return artery, venule, artery | venule


def masks_to_label(artery, venule) -> np.ndarray:
    return np.stack([artery, venule, np.zeros_like(artery)], axis=-1).astype(np.float32)


def overlay(image: np.ndarray, artery, venule, alpha=0.5) -> np.ndarray:
    colour = np.zeros(image.shape[:2] + (3,), dtype=np.float32)
    colour[artery, 0] = 1.0
    colour[venule, 2] = 1.0
    hit = (artery | venule)[..., None]
    out = np.where(hit, (1 - alpha) * image + alpha * colour, image)
    return to_uint8(out)


def write_prediction(out_dir, sample_id: str, image: np.ndarray, prob: np.ndarray, threshold=0.5,
                     colormap: Colormap = None, save_prob=False):
    """Write masks/<id>.png, overlays/<id>.png and optionally probs/<id>.npy."""
    out_dir = Path(out_dir)
    artery, venule, _ = binarize(prob, threshold)
    write_rgb(out_dir / "masks" / f"{sample_id}.png", encode_mask(masks_to_label(artery, venule), colormap))
    write_rgb(out_dir / "overlays" / f"{sample_id}.png", overlay(image, artery, venule))
    if save_prob:
        (out_dir / "probs").mkdir(parents=True, exist_ok=True)
        np.save(out_dir / "probs" / f"{sample_id}.npy", prob.astype(np.float32))
