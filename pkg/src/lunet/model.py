"""LUNet: attention-gated encoder-decoder built from double dilated convolution blocks.

Tensors are channels-first (N, C, H, W), the torch convention.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConfigError(ValueError):
    pass


class DivisibilityError(ValueError):
    pass


MERGE_MODES = ("concat", "sum")


@dataclass
class LUNetConfig:
    """Architecture hyperparameters.

    ``encoder_channels`` has ``depth + 1`` entries (the last one is the
    bottleneck), ``decoder_channels`` has ``depth`` entries. When left as
    ``None`` they are derived from ``base_channels``: the encoder doubles per
    level up to ``max_channels`` and the decoder keeps ``decoder_ratio`` of it.
    """

    depth: int = 6
    base_channels: int = 16
    max_channels: int = 512
    decoder_ratio: float = 0.5
    encoder_channels: Optional[Sequence[int]] = None
    decoder_channels: Optional[Sequence[int]] = None
    kernel_size: int = 7
    dilation_rate: int = 3
    dropout_rate: float = 0.1
    tail_blocks: int = 4
    merge: str = "concat"
    in_channels: int = 3
    out_channels: int = 2

    def __post_init__(self):
        if self.encoder_channels is None:
            self.encoder_channels = [
                min(self.base_channels * 2**i, self.max_channels) for i in range(self.depth + 1)
            ]
        if self.decoder_channels is None:
            self.decoder_channels = [
                max(1, int(c * self.decoder_ratio)) for c in self.encoder_channels[: self.depth]
            ]
        self.encoder_channels = [int(c) for c in self.encoder_channels]
        self.decoder_channels = [int(c) for c in self.decoder_channels]
        self.validate()

    def validate(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.dilation_rate < 1:
            raise ConfigError(f"dilation_rate must be >= 1, got {self.dilation_rate}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.tail_blocks < 0:
            raise ConfigError(f"tail_blocks must be >= 0, got {self.tail_blocks}")
        if self.merge not in MERGE_MODES:
            raise ConfigError(f"merge must be one of {MERGE_MODES}, got {self.merge!r}")
        if len(self.encoder_channels) != self.depth + 1:
            raise ConfigError(
                f"encoder_channels needs depth+1={self.depth + 1} entries, got {len(self.encoder_channels)}"
            )
        if len(self.decoder_channels) != self.depth:
            raise ConfigError(
                f"decoder_channels needs depth={self.depth} entries, got {len(self.decoder_channels)}"
            )
        if any(c < 1 for c in self.encoder_channels + self.decoder_channels):
            raise ConfigError("channel counts must be positive")
        if self.merge == "concat" and any(c < 2 for c in self.encoder_channels + self.decoder_channels):
            raise ConfigError("concat merge needs at least 2 channels per block")
        for level, (e, d) in enumerate(zip(self.encoder_channels, self.decoder_channels)):
            if e < d:
                raise ConfigError(f"level {level}: encoder channels {e} < decoder channels {d}")

    @property
    def multiple(self) -> int:
        """Spatial dims must be divisible by this."""
        return 2**self.depth

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LUNetConfig":
        return cls(**d)


def receptive_field(kernel_size: int, dilation: int) -> int:
    """Receptive field side length of a single (dilated) convolution."""
    return (kernel_size - 1) * dilation + 1


class DDCB(nn.Module):
    """Double dilated convolution block.

    A standard and a dilated convolution run in parallel on the same input,
    their outputs are merged, then spatial dropout, batch norm and ReLU.
    """

    def __init__(self, in_channels, out_channels, kernel_size=7, dilation=3, dropout=0.1, merge="concat"):
        super().__init__()
        self.merge = merge
        if merge == "concat":
            c_dil = out_channels // 2
            c_std = out_channels - c_dil
        else:
            c_std = c_dil = out_channels
        pad = kernel_size // 2
        self.conv = nn.Conv2d(in_channels, c_std, kernel_size, padding=pad, bias=False)
        self.dilated = nn.Conv2d(
            in_channels, c_dil, kernel_size, padding=pad * dilation, dilation=dilation, bias=False
        )
        self.dropout = nn.Dropout2d(dropout)
        self.norm = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        a = self.conv(x)
        b = self.dilated(x)
        y = torch.cat([a, b], dim=1) if self.merge == "concat" else a + b
        return F.relu(self.norm(self.dropout(y)))


class AttentionGate(nn.Module):
    """Additive attention gate.

    ``gating`` lives one level deeper (half resolution) than ``skip``.
    Setting ``force_open`` bypasses the gate (attention map of ones).
    """

    def __init__(self, skip_channels, gating_channels, inter_channels=None):
        super().__init__()
        inter = inter_channels or max(1, skip_channels // 2)
        self.theta = nn.Conv2d(skip_channels, inter, 1, stride=2, bias=False)
        self.phi = nn.Conv2d(gating_channels, inter, 1, bias=True)
        self.psi = nn.Conv2d(inter, 1, 1, bias=True)
        self.force_open = False

    def attention_map(self, skip, gating):
        if skip.shape[-2] != 2 * gating.shape[-2] or skip.shape[-1] != 2 * gating.shape[-1]:
            raise ValueError(
                f"gating {tuple(gating.shape[-2:])} must be half the skip resolution {tuple(skip.shape[-2:])}"
            )
        q = F.relu(self.theta(skip) + self.phi(gating))
        alpha = torch.sigmoid(self.psi(q))
        return F.interpolate(alpha, size=skip.shape[-2:], mode="bilinear", align_corners=False)

    def forward(self, skip, gating):
        if self.force_open:
            return skip
        return skip * self.attention_map(skip, gating)


class UpConv(nn.Module):
    """Nearest-neighbour x2 upsampling followed by a 3x3 conv, BN, ReLU."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False)
        self.norm = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.relu(self.norm(self.conv(x)))


class LUNet(nn.Module):
    def __init__(self, config: LUNetConfig):
        super().__init__()
        config.validate()
        self.config = config
        enc, dec = config.encoder_channels, config.decoder_channels
        block = dict(
            kernel_size=config.kernel_size,
            dilation=config.dilation_rate,
            dropout=config.dropout_rate,
            merge=config.merge,
        )

        self.encoder = nn.ModuleList()
        prev = config.in_channels
        for c in enc:
            self.encoder.append(DDCB(prev, c, **block))
            prev = c

        # decoder modules are indexed by level, applied from depth-1 down to 0
        self.up = nn.ModuleList()
        self.gates = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for level in range(config.depth):
            coarse = enc[config.depth] if level == config.depth - 1 else dec[level + 1]
            self.up.append(UpConv(coarse, dec[level]))
            self.gates.append(AttentionGate(enc[level], coarse))
            self.decoder.append(DDCB(enc[level] + dec[level], dec[level], **block))

        self.tail = nn.Sequential(*[DDCB(dec[0], dec[0], **block) for _ in range(config.tail_blocks)])
        self.head = nn.Conv2d(dec[0], config.out_channels, 1)

    def check_input(self, x):
        m = self.config.multiple
        h, w = x.shape[-2:]
        if h % m or w % m:
            raise DivisibilityError(
                f"input spatial dims {h}x{w} must be multiples of {m} (2**depth, depth={self.config.depth})"
            )

    def forward(self, x):
        self.check_input(x)
        skips = []
        for level, block in enumerate(self.encoder):
            if level > 0:
                x = F.max_pool2d(x, 2)
            x = block(x)
            skips.append(x)

        g = skips[-1]
        for level in reversed(range(self.config.depth)):
            skip = skips[level]
            gated = self.gates[level](skip, g)
            g = self.decoder[level](torch.cat([gated, self.up[level](g)], dim=1))

        return torch.sigmoid(self.head(self.tail(g)))

    def set_gates_open(self, flag: bool = True):
        for gate in self.gates:
            gate.force_open = flag


_DERIVING = {"depth", "base_channels", "max_channels", "decoder_ratio"}


def build_lunet(config: Optional[LUNetConfig] = None, **overrides) -> LUNet:
    if config is None:
        config = LUNetConfig(**overrides)
    elif overrides:
        merged = {**config.to_dict(), **overrides}
        # widths given by a derivation knob are re-derived unless set explicitly
        if _DERIVING & overrides.keys():
            for key in ("encoder_channels", "decoder_channels"):
                if key not in overrides:
                    merged[key] = None
        config = LUNetConfig(**merged)
    return LUNet(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
