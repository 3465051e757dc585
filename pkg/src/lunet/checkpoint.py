"""Self-describing checkpoint files (config + weights + training progress)."""
from __future__ import annotations

import copy
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import torch

from .model import LUNet, LUNetConfig

FORMAT = "lunet-checkpoint/1"
NORMALIZATION = "divide-by-255"


@dataclass
class Checkpoint:
    model_config: Dict[str, Any]
    state_dict: Dict[str, torch.Tensor]
    epoch: int = 0
    best_val_loss: float = float("inf")
    normalization: str = NORMALIZATION
    train_config: Dict[str, Any] = field(default_factory=dict)
    optimizer: Optional[Dict[str, Any]] = None
    history: list = field(default_factory=list)

    @classmethod
    def from_model(cls, model: LUNet, **kw) -> "Checkpoint":
        return cls(
            model_config=model.config.to_dict(),
            state_dict={k: v.detach().clone() for k, v in model.state_dict().items()},
            **kw,
        )

    def build_model(self) -> LUNet:
        model = LUNet(LUNetConfig.from_dict(self.model_config))
        dtype = next(iter(self.state_dict.values())).dtype if self.state_dict else torch.float32
        if dtype.is_floating_point:
            model = model.to(dtype)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": FORMAT,
            "model_config": self.model_config,
            "state_dict": self.state_dict,
            "epoch": self.epoch,
            "best_val_loss": self.best_val_loss,
            "normalization": self.normalization,
            "train_config": self.train_config,
            "optimizer": self.optimizer,
            "history": self.history,
        }

    def save(self, path):
        """Atomic write: temp file in the same directory, then rename."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        os.close(fd)
        try:
            torch.save(self.to_dict(), tmp)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.remove(tmp)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        d = torch.load(path, map_location="cpu", weights_only=False)
        if d.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        d = dict(d)
        d.pop("format")
        return cls(**d)


def save_model(model: LUNet, path, **kw):
    Checkpoint.from_model(model, **kw).save(path)


def load_model(path) -> LUNet:
    return Checkpoint.load(path).build_model()


def copy_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    return copy.deepcopy(ckpt)
