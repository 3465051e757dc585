"""Framing of external datasets into 1444x1444 optic-disc-centred images."""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .preprocess import resize

TARGET = 1444
KINDS = ("UNAF", "INSPIRE_AVR", "LES_AV", "HRF")
# expected (long side, short side) per dataset; orientation may be either way
EXPECTED = {
    "UNAF": (2124, 2056),
    "INSPIRE_AVR": (2392, 2048),
    "LES_AV": (1620, 1444),
    "HRF": (3504, 2336),
}


class AdapterError(ValueError):
    pass


def center_crop(image, size):
    h, w = image.shape[:2]
    top, left = (h - size) // 2, (w - size) // 2
    return image[top:top + size, left:left + size]


def square_pad(image):
    h, w = image.shape[:2]
    side = max(h, w)
    top, left = (side - h) // 2, (side - w) // 2
    pad = [(top, side - h - top), (left, side - w - left)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pad)


def square_crop(image):
    return center_crop(image, min(image.shape[:2]))


def hrf_window(shape, od_center: Tuple[float, float], size=TARGET):
    """Row/column slices of a size x size window centred on ``od_center = (x, y)``."""
    h, w = shape[:2]
    x, y = od_center
    left = int(np.clip(int(round(x)) - size // 2, 0, w - size))
    top = int(np.clip(int(round(y)) - size // 2, 0, h - size))
    return slice(top, top + size), slice(left, left + size)


def adapt_external(image: np.ndarray, kind: str, od_center: Optional[Tuple[float, float]] = None,
                   mask: bool = False) -> np.ndarray:
    """Frame an external-dataset image (or mask, with ``mask=True``) to 1444x1444."""
    kind = kind.upper().replace("-", "_")
    if kind not in KINDS:
        raise AdapterError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    h, w = image.shape[:2]
    if tuple(sorted((h, w), reverse=True)) != EXPECTED[kind]:
        long, short = EXPECTED[kind]
        raise AdapterError(f"{kind} expects {long}x{short} images, got {w}x{h}")

    if kind == "UNAF":
        out = center_crop(square_pad(image), TARGET)
    elif kind == "INSPIRE_AVR":
        sq = square_crop(image)
        if mask:
            out = resize(sq.astype(np.float32), (TARGET, TARGET), "nearest")
        else:
            out = resize(sq.astype(np.float32), (TARGET, TARGET), "bilinear")
        if image.dtype == np.uint8:
            out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
        else:
            out = out.astype(image.dtype)
    elif kind == "LES_AV":
        out = square_crop(image)
    else:
        if od_center is None:
            raise AdapterError("HRF framing needs the optic disc centre (x, y)")
        rows, cols = hrf_window(image.shape, od_center)
        out = image[rows, cols]
    return np.ascontiguousarray(out)
