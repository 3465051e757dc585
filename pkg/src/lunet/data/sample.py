"""Sample model, mask colour codec and on-disk formats (rasters, manifest, colormap)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

PLANES = ("artery", "venule", "unknown")
EYES = ("left", "right", "unknown")
MANIFEST_COLUMNS = ("id", "image", "mask", "patient_id", "eye", "split")


class DecodeError(ValueError):
    pass


class EncodeError(ValueError):
    pass


@dataclass
class FundusSample:
    """An RGB fundus image and its optional (H, W, 3) artery/venule/unknown label."""

    image: np.ndarray
    label: Optional[np.ndarray] = None
    id: str = ""
    patient_id: str = ""
    eye: str = "unknown"
    source: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got {self.image.shape}")
        if self.label is not None:
            check_label(self.label)
            if self.label.shape[:2] != self.image.shape[:2]:
                raise ValueError(
                    f"label dims {self.label.shape[:2]} differ from image dims {self.image.shape[:2]}"
                )
        if self.eye not in EYES:
            raise ValueError(f"eye must be one of {EYES}, got {self.eye!r}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.image.shape[:2]


def check_label(label: np.ndarray):
    if label.ndim != 3 or label.shape[2] != 3:
        raise ValueError(f"label must be HxWx3 (artery, venule, unknown), got {label.shape}")
    if not np.all((label == 0) | (label == 1)):
        raise ValueError("label planes must be binary")


Color = Tuple[int, int, int]


@dataclass
class Colormap:
    """Maps RGB triplets to the set of label planes they switch on."""

    entries: Dict[Color, FrozenSet[str]] = field(default_factory=dict)

    def __post_init__(self):
        seen = {}
        for color, planes in self.entries.items():
            bad = set(planes) - set(PLANES)
            if bad:
                raise ValueError(f"unknown plane names {sorted(bad)} for color {color}")
            key = frozenset(planes)
            if key in seen:
                raise ValueError(f"colors {seen[key]} and {color} encode the same planes")
            seen[key] = color

    @classmethod
    def default(cls) -> "Colormap":
        return cls({
            (0, 0, 0): frozenset(),
            (255, 0, 0): frozenset({"artery"}),
            (0, 0, 255): frozenset({"venule"}),
            (0, 255, 0): frozenset({"unknown"}),
            (255, 0, 255): frozenset({"artery", "venule"}),
        })

    def color_for(self, planes) -> Color:
        key = frozenset(planes)
        for color, p in self.entries.items():
            if p == key:
                return color
        raise EncodeError(f"no color declared for plane combination {sorted(key) or ['background']}")

    @classmethod
    def load(cls, path) -> "Colormap":
        """Read ``R G B  plane[,plane]`` lines; ``background`` means no plane."""
        entries = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'R G B planes', got {raw!r}")
            color = tuple(int(v) for v in parts[:3])
            names = [] if parts[3] == "background" else parts[3].split(",")
            entries[color] = frozenset(names)
        return cls(entries)

    def save(self, path):
        lines = ["# R G B  planes (comma separated; 'background' for none)"]
        for color, planes in self.entries.items():
            names = ",".join(p for p in PLANES if p in planes) or "background"
            lines.append(f"{color[0]} {color[1]} {color[2]}  {names}")
        Path(path).write_text("\n".join(lines) + "\n")


def decode_mask(mask_image: np.ndarray, colormap: Colormap = None) -> np.ndarray:
    """RGB mask raster -> (H, W, 3) float32 label planes."""
    colormap = colormap or Colormap.default()
    mask = np.asarray(mask_image)
    if mask.ndim != 3 or mask.shape[2] < 3:
        raise DecodeError(f"mask must be HxWx3, got {mask.shape}")
    mask = mask[..., :3].astype(np.int64)
    code = (mask[..., 0] << 16) | (mask[..., 1] << 8) | mask[..., 2]
    label = np.zeros(mask.shape[:2] + (3,), dtype=np.float32)
    known = np.zeros(mask.shape[:2], dtype=bool)
    for color, planes in colormap.entries.items():
        hit = code == ((color[0] << 16) | (color[1] << 8) | color[2])
        known |= hit
        for k, name in enumerate(PLANES):
            if name in planes:
                label[hit, k] = 1.0
    if not known.all():
        bad = np.unique(code[~known])
        shown = [(int(c >> 16) & 255, int(c >> 8) & 255, int(c) & 255) for c in bad[:10]]
        raise DecodeError(f"mask contains {len(bad)} undeclared colors, e.g. {shown}")
    return label


def encode_mask(label: np.ndarray, colormap: Colormap = None) -> np.ndarray:
    """(H, W, 3) label planes -> uint8 RGB raster. Inverse of :func:`decode_mask`."""
    colormap = colormap or Colormap.default()
    check_label(label)
    bits = label.astype(np.int64)
    code = bits[..., 0] | (bits[..., 1] << 1) | (bits[..., 2] << 2)
    out = np.zeros(label.shape[:2] + (3,), dtype=np.uint8)
    for value in np.unique(code):
        planes = {name for k, name in enumerate(PLANES) if value >> k & 1}
        out[code == value] = colormap.color_for(planes)
    return out


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_rgb(path, array: np.ndarray):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8), mode="RGB").save(path)


@dataclass
class ManifestRow:
    id: str
    image: str
    mask: str = ""
    patient_id: str = ""
    eye: str = "unknown"
    split: str = ""


def read_manifest(path) -> List[ManifestRow]:
    """CSV table with columns id,image,mask,patient_id,eye,split.

    Relative image/mask paths resolve against the manifest's directory.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest missing columns {sorted(missing)}")
        rows = []
        for rec in reader:
            row = ManifestRow(**{k: (rec[k] or "").strip() for k in MANIFEST_COLUMNS})
            for attr in ("image", "mask"):
                value = getattr(row, attr)
                if value and not Path(value).is_absolute():
                    setattr(row, attr, str(path.parent / value))
            rows.append(row)
    ids = [r.id for r in rows]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sample ids")
    return rows


def write_manifest(path, rows: Sequence[ManifestRow]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in rows:
            writer.writerow([getattr(r, c) for c in MANIFEST_COLUMNS])


def load_sample(row: ManifestRow, colormap: Colormap = None, source="") -> FundusSample:
    from .preprocess import normalize

    image = normalize(read_rgb(row.image))
    label = decode_mask(read_rgb(row.mask), colormap) if row.mask else None
    return FundusSample(
        image=image, label=label, id=row.id, patient_id=row.patient_id or row.id,
        eye=row.eye or "unknown", source=source,
    )
