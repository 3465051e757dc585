"""Composite A/V segmentation loss.

Each of the artery, venule and vessel-union maps is scored with

    l1 * BCE + l2 * dice + l3 * clDice + smoothness

and the three scores are summed. Artery and venule terms are masked by the
unknown plane; the union term sees every labelled vessel pixel.

All functions accept tensors whose last two dims are spatial. Dice-like
terms are computed per image (leading dims) and averaged.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

EPS = 1e-7
SMOOTH = 1.0
SKELETON_ITERATIONS = 10


@dataclass
class LossWeights:
    bce: float = 1.0
    dice: float = 1.0
    cldice: float = 0.3
    smoothness: float = 1.0
    eps: float = EPS
    smooth: float = SMOOTH
    skeleton_iterations: int = SKELETON_ITERATIONS

    def __post_init__(self):
        for name in ("bce", "dice", "cldice", "smoothness"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")
        if self.skeleton_iterations < 1:
            raise ValueError("skeleton_iterations must be >= 1")


class LabelError(ValueError):
    pass


def _check_shapes(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs target {tuple(target.shape)}")


def _as_4d(x):
    # (..., H, W) -> (B, 1, H, W) for pooling
    return x.reshape(-1, 1, *x.shape[-2:])


def _spatial_sum(x):
    return x.sum(dim=(-2, -1))


def bce_loss(pred, target, eps=EPS):
    _check_shapes(pred, target)
    p = pred.clamp(eps, 1 - eps)
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p)).mean()


def dice_loss(pred, target, smooth=SMOOTH):
    _check_shapes(pred, target)
    inter = _spatial_sum(pred * target)
    denom = _spatial_sum(pred) + _spatial_sum(target)
    return (1 - (2 * inter + smooth) / (denom + smooth)).mean()


def _erode_pool(x):
    p1 = -F.max_pool2d(-x, (3, 1), (1, 1), (1, 0))
    p2 = -F.max_pool2d(-x, (1, 3), (1, 1), (0, 1))
    return torch.min(p1, p2)


def _dilate_pool(x):
    return F.max_pool2d(x, (3, 3), (1, 1), (1, 1))


def _erode_shift(x):
    p = F.pad(x, (1, 1, 1, 1), value=float("inf"))
    c = p[..., 1:-1, 1:-1]
    vertical = torch.minimum(p[..., :-2, 1:-1], p[..., 2:, 1:-1])
    horizontal = torch.minimum(p[..., 1:-1, :-2], p[..., 1:-1, 2:])
    return torch.minimum(torch.minimum(vertical, horizontal), c)


def _dilate_shift(x):
    p = F.pad(x, (1, 1, 0, 0), value=float("-inf"))
    r = torch.maximum(torch.maximum(p[..., :-2], p[..., 2:]), p[..., 1:-1])
    p = F.pad(r, (0, 0, 1, 1), value=float("-inf"))
    return torch.maximum(torch.maximum(p[..., :-2, :], p[..., 2:, :]), p[..., 1:-1, :])


# Pooling has the cheaper backward; shifted min/max the cheaper forward.
# Both compute the same plus-shaped erosion and 3x3 dilation.
def soft_erode(x):
    return _erode_pool(x) if x.requires_grad else _erode_shift(x)


def soft_dilate(x):
    return _dilate_pool(x) if x.requires_grad else _dilate_shift(x)


def soft_open(x):
    return soft_dilate(soft_erode(x))


def soft_skeleton(mask, iterations=SKELETON_ITERATIONS):
    """Differentiable skeleton via iterated soft erosion and opening."""
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    shape = mask.shape
    img = _as_4d(mask)
    skel = F.relu(img - soft_open(img))
    for _ in range(iterations):
        img = soft_erode(img)
        delta = F.relu(img - soft_open(img))
        skel = skel + F.relu(delta - skel * delta)
    return skel.reshape(shape)


def cldice_loss(pred, target, iterations=SKELETON_ITERATIONS, smooth=SMOOTH):
    _check_shapes(pred, target)
    skel_pred = soft_skeleton(pred, iterations)
    if target.requires_grad:
        skel_true = soft_skeleton(target, iterations)
    else:
        with torch.no_grad():
            skel_true = soft_skeleton(target, iterations)
    tprec = (_spatial_sum(skel_pred * target) + smooth) / (_spatial_sum(skel_pred) + smooth)
    tsens = (_spatial_sum(skel_true * pred) + smooth) / (_spatial_sum(skel_true) + smooth)
    return (1 - 2 * tprec * tsens / (tprec + tsens)).mean()


def smoothness_penalty(pred):
    """Mean absolute forward difference, averaged over the two spatial axes."""
    dy = (pred[..., 1:, :] - pred[..., :-1, :]).abs()
    dx = (pred[..., :, 1:] - pred[..., :, :-1]).abs()
    terms = [d.mean() for d in (dy, dx) if d.numel()]
    if not terms:
        return pred.new_zeros(())
    return sum(terms) / len(terms)


def component_loss(pred, target, w: LossWeights = None, parts=False):
    w = w or LossWeights()
    _check_shapes(pred, target)
    values = {
        "bce": bce_loss(pred, target, w.eps),
        "dice": dice_loss(pred, target, w.smooth),
        "cldice": cldice_loss(pred, target, w.skeleton_iterations, w.smooth),
        "smoothness": smoothness_penalty(pred),
    }
    total = (
        w.bce * values["bce"]
        + w.dice * values["dice"]
        + w.cldice * values["cldice"]
        + w.smoothness * values["smoothness"]
    )
    if parts:
        return total, values
    return total


def check_label(label):
    if not torch.all((label == 0) | (label == 1)):
        raise LabelError("label planes must be strictly binary {0, 1}")


def lunet_loss_terms(pred, label, w: LossWeights = None, validate=True):
    """Return the artery, venule and vessel-union terms.

    ``pred`` is (..., 2, H, W) with artery/venule probabilities, ``label`` is
    (..., 3, H, W) holding the artery, venule and unknown planes.
    """
    if pred.shape[-3] != 2 or label.shape[-3] != 3:
        raise ValueError(
            f"expected pred (...,2,H,W) and label (...,3,H,W), got {tuple(pred.shape)} and {tuple(label.shape)}"
        )
    if pred.shape[-2:] != label.shape[-2:] or pred.shape[:-3] != label.shape[:-3]:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs label {tuple(label.shape)}")
    if validate:
        check_label(label)
    w = w or LossWeights()
    p_a, p_v = pred[..., 0, :, :], pred[..., 1, :, :]
    y_a, y_v, y_u = label[..., 0, :, :], label[..., 1, :, :], label[..., 2, :, :]
    known = 1 - y_u
    return {
        "artery": component_loss(p_a * known, y_a * known, w),
        "venule": component_loss(p_v * known, y_v * known, w),
        "vessel": component_loss(torch.maximum(p_a, p_v), torch.maximum(torch.maximum(y_a, y_v), y_u), w),
    }


def lunet_loss(pred, label, w: LossWeights = None, validate=True):
    terms = lunet_loss_terms(pred, label, w, validate)
    return terms["artery"] + terms["venule"] + terms["vessel"]
