"""Procedural fundus-like images with two interleaved vessel trees.

Used as a desk-scale stand-in for annotated fundus photographs: the label is
rendered from the same geometry as the image, so the two always agree.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .preprocess import normalize, to_uint8
from .sample import FundusSample

ARTERY_RGB = np.array([0.80, 0.12, 0.08], dtype=np.float32)
VENULE_RGB = np.array([0.38, 0.04, 0.16], dtype=np.float32)
BACKGROUND_RGB = np.array([0.78, 0.40, 0.16], dtype=np.float32)
DISC_RGB = np.array([0.98, 0.86, 0.55], dtype=np.float32)


@dataclass
class SynthConfig:
    size: int = 256
    n_roots: int = 3
    generations: int = 4
    steps_per_branch: int = 5
    max_width: float = 8.0
    min_width: float = 1.0
    width_decay: float = 0.72
    both_fraction: float = 0.5
    unknown_band: bool = False
    band: Tuple[float, float] = (0.55, 0.65)
    noise: float = 0.015
    multiple: int = 64


@dataclass
class Segment:
    p0: Tuple[float, float]
    p1: Tuple[float, float]
    width: float


def _grow_tree(rng, origin, angles, cfg: SynthConfig, radius) -> List[Segment]:
    segments = []
    step = cfg.size * 0.035
    centre = np.array([cfg.size / 2, cfg.size / 2])
    stack = [(np.array(origin, float), a, cfg.max_width, 0) for a in angles]
    while stack:
        p, angle, width, gen = stack.pop()
        alive = True
        for _ in range(cfg.steps_per_branch):
            angle += rng.normal(0.0, 0.18)
            q = p + step * np.array([np.cos(angle), np.sin(angle)])
            if np.linalg.norm(q - centre) > radius - cfg.max_width:
                alive = False
                break
            segments.append(Segment(tuple(p), tuple(q), width))
            p = q
        if alive and gen + 1 < cfg.generations and width > cfg.min_width:
            child = max(cfg.min_width, width * cfg.width_decay)
            spread = rng.uniform(0.35, 0.7)
            stack.append((p, angle + spread, child, gen + 1))
            stack.append((p, angle - spread, child, gen + 1))
    return segments


def rasterize(segments: List[Segment], size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Binary mask of the segments and the per-pixel max vessel width."""
    mask = np.zeros((size, size), dtype=bool)
    widths = np.zeros((size, size), dtype=np.float32)
    for seg in segments:
        (x0, y0), (x1, y1) = seg.p0, seg.p1
        r = max(seg.width / 2.0, 0.5) + 1e-6
        c0 = max(int(np.floor(min(x0, x1) - r)), 0)
        c1 = min(int(np.ceil(max(x0, x1) + r)) + 1, size)
        r0 = max(int(np.floor(min(y0, y1) - r)), 0)
        r1 = min(int(np.ceil(max(y0, y1) + r)) + 1, size)
        if c0 >= c1 or r0 >= r1:
            continue
        yy, xx = np.mgrid[r0:r1, c0:c1].astype(np.float64)
        dx, dy = x1 - x0, y1 - y0
        denom = dx * dx + dy * dy
        t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / denom, 0.0, 1.0) if denom else 0.0
        dist = np.hypot(xx - (x0 + t * dx), yy - (y0 + t * dy))
        hit = dist <= r
        mask[r0:r1, c0:c1] |= hit
        w = widths[r0:r1, c0:c1]
        np.maximum(w, np.where(hit, seg.width, 0.0), out=w)
    return mask, widths


def generate_trees(seed, cfg: SynthConfig):
    """Artery and venule tree masks (and width maps) before label resolution."""
    rng = np.random.default_rng(seed)
    size = cfg.size
    radius = size * 0.48
    centre = size / 2 + rng.uniform(-0.05, 0.05, size=2) * size
    base = rng.uniform(0, 2 * np.pi)
    k = np.arange(cfg.n_roots)
    art_angles = base + 2 * np.pi * k / max(cfg.n_roots, 1)
    ven_angles = art_angles + np.pi / max(cfg.n_roots, 1)
    art = rasterize(_grow_tree(rng, centre, art_angles, cfg, radius), size)
    ven = rasterize(_grow_tree(rng, centre, ven_angles, cfg, radius), size)
    return rng, centre, radius, art, ven


def generate_synthetic_dfi(seed=0, size=None, cfg: SynthConfig = None, **overrides) -> FundusSample:
    cfg = cfg or SynthConfig()
    if overrides or size is not None:
        cfg = SynthConfig(**{**cfg.__dict__, **overrides, **({"size": size} if size is not None else {})})
    if cfg.size % cfg.multiple:
        raise ValueError(f"size {cfg.size} is not a multiple of {cfg.multiple}")
    rng, centre, radius, (art, art_w), (ven, ven_w) = generate_trees(seed, cfg)
    size = cfg.size

    y_a, y_v = art.copy(), ven.copy()
    cross = art & ven
    top_artery = np.zeros_like(cross)
    if cross.any():
        regions, n = ndimage.label(cross, structure=np.ones((3, 3)))
        draws = rng.random((n, 2))
        both = np.concatenate([[False], draws[:, 0] < cfg.both_fraction])[regions] & cross
        art_on_top = np.concatenate([[False], draws[:, 1] < 0.5])[regions] & cross
        y_v[cross & ~both & art_on_top] = False
        y_a[cross & ~both & ~art_on_top] = False
        top_artery = art_on_top
    y_u = np.zeros_like(y_a)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    r = np.hypot(xx - size / 2, yy - size / 2) / radius
    if cfg.unknown_band:
        rc = np.hypot(xx - centre[0], yy - centre[1]) / radius
        band = (rc >= cfg.band[0]) & (rc < cfg.band[1]) & (y_a | y_v)
        y_u = band
        y_a = y_a & ~band
        y_v = y_v & ~band

    texture = ndimage.gaussian_filter(rng.normal(0, 1, (size, size)), size / 16)
    texture /= np.abs(texture).max() + 1e-12
    shade = (1.0 - 0.35 * r**2 + 0.06 * texture)[..., None]
    img = BACKGROUND_RGB * shade
    d = np.hypot(xx - centre[0], yy - centre[1]) / (size * 0.07)
    disc = np.clip(1.5 - d, 0.0, 1.0)[..., None]
    img = img * (1 - disc) + DISC_RGB * disc

    def paint(img, mask, widths, colour):
        alpha = np.clip(0.55 + 0.15 * widths, 0.0, 1.0)[..., None] * mask[..., None]
        return img * (1 - alpha) + colour * shade * alpha

    # paint the tree that is "under" at crossings first
    img = paint(img, ven & ~(cross & top_artery), ven_w, VENULE_RGB)
    img = paint(img, art & ~(cross & ~top_artery), art_w, ARTERY_RGB)
    both_px = cross & y_a & y_v
    if both_px.any():
        img[both_px] = ((ARTERY_RGB + VENULE_RGB) / 2) * shade[both_px]
    img = img + rng.normal(0, cfg.noise, img.shape)
    img[r > 1.0] = 0.0
    image = normalize(to_uint8(np.clip(img, 0, 1)))

    label = np.stack([y_a, y_v, y_u], axis=-1).astype(np.float32)
    return FundusSample(image=image, label=label, id=f"synth-{seed:05d}" if isinstance(seed, int) else str(seed),
                        patient_id=f"p{seed}", eye="unknown", source="synthetic")
