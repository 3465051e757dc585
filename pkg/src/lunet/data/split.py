"""Patient-stratified train/val/test splitting."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np


class SplitError(ValueError):
    pass


@dataclass
class SplitManifest:
    train: List[str] = field(default_factory=list)
    val: List[str] = field(default_factory=list)
    test: List[str] = field(default_factory=list)

    def split_of(self, sample_id: str) -> str:
        for name in ("train", "val", "test"):
            if sample_id in getattr(self, name):
                return name
        raise KeyError(sample_id)


def _pairs(samples) -> List[Tuple[str, str]]:
    out = []
    for s in samples:
        if isinstance(s, tuple):
            out.append((str(s[0]), str(s[1])))
        else:
            out.append((s.id, s.patient_id or s.id))
    return out


def split_dataset(samples: Sequence, train_frac=0.85, val_frac=0.15, seed=0) -> SplitManifest:
    """Assign whole patients to train/val/test.

    ``samples`` are objects with ``id`` and ``patient_id`` attributes or
    ``(id, patient_id)`` tuples. Target sizes are ``round(frac * n)``
    samples; patients are visited in a seeded random order and fill train,
    then val, and the remainder goes to test (or to val when the fractions
    sum to one). A split whose target rounds to zero is not requested.
    """
    if not (0 < train_frac < 1) or not (0 < val_frac < 1) or train_frac + val_frac > 1 + 1e-12:
        raise SplitError(f"invalid fractions train={train_frac} val={val_frac}")
    pairs = _pairs(samples)
    n = len(pairs)
    groups: "OrderedDict[str, List[str]]" = OrderedDict()
    for sid, pid in pairs:
        groups.setdefault(pid, []).append(sid)

    n_train = int(np.floor(train_frac * n + 0.5))
    n_val = int(np.floor(val_frac * n + 0.5))
    has_test = train_frac + val_frac < 1 - 1e-12 and n - n_train - n_val > 0
    requested = sum(x > 0 for x in (n_train, n_val)) + has_test
    if len(groups) < requested:
        raise SplitError(f"{len(groups)} patients cannot fill {requested} splits")

    order = sorted(groups)
    np.random.default_rng(seed).shuffle(order)
    manifest = SplitManifest()
    for pid in order:
        ids = groups[pid]
        if len(manifest.train) < n_train:
            manifest.train.extend(ids)
        elif len(manifest.val) < n_val or not has_test:
            manifest.val.extend(ids)
        else:
            manifest.test.extend(ids)
    return manifest
