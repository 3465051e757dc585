"""Normalisation, divisibility padding, rescaling and online augmentation."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from skimage.color import hsv2rgb, rgb2hsv

from .sample import FundusSample


def normalize(image: np.ndarray) -> np.ndarray:
    """8-bit image -> float32 in [0, 1]."""
    return np.asarray(image, dtype=np.float32) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class CropRecord:
    """Where the original image sits inside its padded version."""

    top: int
    left: int
    height: int
    width: int

    def crop(self, array):
        return array[self.top:self.top + self.height, self.left:self.left + self.width]


def pad_to_multiple(image: np.ndarray, multiple: int = 64) -> Tuple[np.ndarray, CropRecord]:
    """Zero-pad the two leading (spatial) axes up to the next multiple.

    Padding is split evenly, with the odd pixel going to the bottom/right.
    """
    if multiple < 1:
        raise ValueError(f"multiple must be >= 1, got {multiple}")
    h, w = image.shape[:2]
    H = -(-h // multiple) * multiple
    W = -(-w // multiple) * multiple
    top, left = (H - h) // 2, (W - w) // 2
    pad = [(top, H - h - top), (left, W - w - left)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pad), CropRecord(top, left, h, w)


def resize(array: np.ndarray, size: Tuple[int, int], mode="bilinear") -> np.ndarray:
    """Resize an HxWxC array. ``mode`` is ``bilinear`` or ``nearest``."""
    if array.shape[:2] == tuple(size):
        return array.copy()
    t = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32)).permute(2, 0, 1)[None]
    if mode == "bilinear":
        out = F.interpolate(t, size=size, mode="bilinear", align_corners=False, antialias=True)
    elif mode == "nearest":
        out = F.interpolate(t, size=size, mode="nearest")
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    return out[0].permute(1, 2, 0).numpy()


def resize_label(label: np.ndarray, size) -> np.ndarray:
    return (resize(label, size, "nearest") >= 0.5).astype(np.float32)


@dataclass
class AugmentConfig:
    flip_prob: float = 0.5
    transpose_prob: float = 0.5
    rescale: bool = True
    min_size: int = 800
    max_size: int = 1472
    multiple: int = 64
    brightness: Tuple[float, float] = (0.8, 1.2)
    contrast: Tuple[float, float] = (0.8, 1.2)
    saturation: Tuple[float, float] = (0.8, 1.2)
    hue: Tuple[float, float] = (-0.05, 0.05)
    jitter: bool = True

    def __post_init__(self):
        if not 1 <= self.min_size <= self.max_size:
            raise ValueError(f"need 1 <= min_size <= max_size, got {self.min_size}, {self.max_size}")

    def draw_size(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.min_size, self.max_size + 1))


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (e.g. global seed, sample id, epoch)."""
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def color_jitter(image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    b = rng.uniform(*cfg.brightness)
    c = rng.uniform(*cfg.contrast)
    s = rng.uniform(*cfg.saturation)
    h = rng.uniform(*cfg.hue)
    img = img * b
    img = (img - img.mean()) * c + img.mean()
    gray = img @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    img = (img - gray[..., None]) * s + gray[..., None]
    img = np.clip(img, 0.0, 1.0)
    if h:
        hsv = rgb2hsv(img)
        hsv[..., 0] = (hsv[..., 0] + h) % 1.0
        img = hsv2rgb(hsv)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def augment(sample: FundusSample, seed, cfg: AugmentConfig = None, size: Optional[int] = None) -> FundusSample:
    """Random flips/transpose, square rescale + re-pad, and colour jitter.

    Geometric transforms hit the image and every label plane identically;
    jitter touches the image only. ``size`` overrides the drawn rescale size
    (used to share one size across a batch).
    """
    if sample.label is None:
        raise ValueError("augment needs a labelled sample")
    cfg = cfg or AugmentConfig()
    rng = np.random.default_rng(seed)
    image, label = sample.image, sample.label
    if rng.random() < cfg.flip_prob:
        image, label = image[:, ::-1], label[:, ::-1]
    if rng.random() < cfg.flip_prob:
        image, label = image[::-1], label[::-1]
    if rng.random() < cfg.transpose_prob:
        image, label = image.transpose(1, 0, 2), label.transpose(1, 0, 2)
    drawn = cfg.draw_size(rng)
    if cfg.rescale:
        side = size if size is not None else drawn
        image = resize(image, (side, side), "bilinear")
        label = resize_label(label, (side, side))
    if cfg.jitter:
        image = color_jitter(image, rng, cfg)
    image, _ = pad_to_multiple(image, cfg.multiple)
    label, _ = pad_to_multiple(label, cfg.multiple)
    return replace(
        sample,
        image=np.ascontiguousarray(image, dtype=np.float32),
        label=np.ascontiguousarray(label, dtype=np.float32),
    )
