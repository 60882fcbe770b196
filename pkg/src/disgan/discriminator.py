"""Wavelet-informed U-shaped critic.

Each encoder level is a DWT+conv unit: a Haar transform halves the
resolution, a 1x1x1 conv maps the low band to half the output channels and
another maps the seven concatenated high bands to the other half. The
decoder upsamples trilinearly, concatenates the matching encoder output and
applies a 3x3x3 conv. A final 1x1x1 conv emits one raw score per voxel.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import rng as _rng
from .dwt import dwt3_channels
from .errors import ConfigError, OddExtent, ShapeError
from .nn_init import LEAKY_SLOPE, kaiming_init_


@dataclass
class DwtConvUnitConfig:
    in_channels: int
    out_channels: int

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ConfigError("in_channels must be positive")
        if self.out_channels < 2 or self.out_channels % 2:
            raise ConfigError(f"out_channels must be even, got {self.out_channels}")


@dataclass
class DiscriminatorConfig:
    levels: int = 3
    channels: list[int] = field(default_factory=lambda: [8, 16, 32])
    leaky_slope: float = LEAKY_SLOPE

    def validate(self) -> None:
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if len(self.channels) != self.levels:
            raise ConfigError(f"need {self.levels} channel widths, got {self.channels}")
        for c in self.channels:
            DwtConvUnitConfig(1, c).validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def full_scale(cls) -> "DiscriminatorConfig":
        return cls(levels=3, channels=[32, 64, 128])


class DwtConvUnit(nn.Module):
    def __init__(self, cfg: DwtConvUnitConfig, slope: float = LEAKY_SLOPE):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.slope = slope
        half = cfg.out_channels // 2
        self.low = nn.Conv3d(cfg.in_channels, half, 1)
        self.high = nn.Conv3d(7 * cfg.in_channels, half, 1)

    def pre_activation(self, x: Tensor) -> Tensor:
        if any(n % 2 for n in x.shape[-3:]):
            raise OddExtent(f"spatial extents must be even, got {tuple(x.shape[-3:])}")
        bands = dwt3_channels(x)
        low = self.low(bands.lll)
        high = self.high(torch.cat(bands.high(), dim=1))
        return torch.cat([low, high], dim=1)

    def forward(self, x: Tensor) -> Tensor:
        return F.leaky_relu(self.pre_activation(x), self.slope)


class Discriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        chans = list(cfg.channels)
        ins = [1] + chans[:-1]
        self.encoder = nn.ModuleList(
            DwtConvUnit(DwtConvUnitConfig(cin, cout), cfg.leaky_slope) for cin, cout in zip(ins, chans)
        )
        # decoder level i (L-1 .. 0) fuses upsampled features with encoder output i
        # (level 0 is the input patch) and emits chans[max(i-1, 0)] channels.
        dec = []
        cur = chans[-1]
        for i in range(cfg.levels - 1, -1, -1):
            skip = 1 if i == 0 else chans[i - 1]
            cout = chans[max(i - 1, 0)]
            dec.append(nn.Conv3d(cur + skip, cout, 3, 1, 1))
            cur = cout
        self.decoder = nn.ModuleList(dec)
        self.score = nn.Conv3d(cur, 1, 1)
        self.seed: int | None = None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 5 or x.shape[1] != 1:
            raise ShapeError(f"expected (N, 1, D, H, W), got {tuple(x.shape)}")
        factor = 2 ** self.cfg.levels
        if any(n % factor for n in x.shape[2:]):
            raise ShapeError(f"extents {tuple(x.shape[2:])} not divisible by {factor}")
        skips = [x]
        h = x
        for unit in self.encoder:
            h = unit(h)
            skips.append(h)
        skips.pop()
        for conv in self.decoder:
            skip = skips.pop()
            h = F.interpolate(h, size=skip.shape[2:], mode="trilinear", align_corners=False)
            h = F.leaky_relu(conv(torch.cat([h, skip], dim=1)), self.cfg.leaky_slope)
        return self.score(h)


def build_discriminator(cfg: DiscriminatorConfig, seed: int) -> Discriminator:
    d = Discriminator(cfg)
    kaiming_init_(d, _rng.stream(seed, _rng.INIT_DISCRIMINATOR), cfg.leaky_slope)
    d.seed = int(seed)
    return d


def discriminator_forward(params: Discriminator, patch) -> Tensor:
    """Raw per-voxel scores with the same spatial shape as ``patch``."""
    x = torch.as_tensor(patch)
    ndim = x.ndim
    while x.ndim < 5:
        x = x[None]
    out = params(x.to(next(params.parameters()).dtype))
    return out.reshape(out.shape[-ndim:]) if ndim < 5 else out
