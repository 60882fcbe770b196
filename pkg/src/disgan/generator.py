"""Volumetric RRDB generator with x2 sub-pixel upsampling."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import rng as _rng
from .errors import ConfigError, ShapeError
from .nn_init import LEAKY_SLOPE, kaiming_init_

MIN_LR_EXTENT = 8


@dataclass
class GeneratorConfig:
    num_vrrdb: int = 3
    base_filters: int = 16
    growth_channels: int = 8
    residual_scale: float = 0.2
    upscale: int = 2

    def validate(self) -> None:
        if self.num_vrrdb < 1:
            raise ConfigError("num_vrrdb must be >= 1")
        if self.base_filters < 1 or self.growth_channels < 1:
            raise ConfigError("base_filters and growth_channels must be positive")
        if not 0.0 < self.residual_scale <= 1.0:
            raise ConfigError(f"residual_scale must lie in (0, 1], got {self.residual_scale}")
        if self.upscale != 2:
            raise ConfigError("only x2 upscaling is supported")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def full_scale(cls) -> "GeneratorConfig":
        return cls(num_vrrdb=3, base_filters=64, growth_channels=32)


def pixel_shuffle3(x: Tensor) -> Tensor:
    """(N, 8C, d, h, w) -> (N, C, 2d, 2h, 2w).

    ``out[c, 2z+i, 2y+j, 2x+k] = in[8c + 4i + 2j + k, z, y, x]``.
    """
    n, c8, d, h, w = x.shape
    if c8 % 8:
        raise ShapeError(f"channel count {c8} is not divisible by 8")
    c = c8 // 8
    x = x.reshape(n, c, 2, 2, 2, d, h, w)
    x = x.permute(0, 1, 5, 2, 6, 3, 7, 4)
    return x.reshape(n, c, 2 * d, 2 * h, 2 * w)


def pixel_unshuffle3(x: Tensor) -> Tensor:
    n, c, d2, h2, w2 = x.shape
    if d2 % 2 or h2 % 2 or w2 % 2:
        raise ShapeError(f"spatial extents must be even, got {(d2, h2, w2)}")
    d, h, w = d2 // 2, h2 // 2, w2 // 2
    x = x.reshape(n, c, d, 2, h, 2, w, 2)
    x = x.permute(0, 1, 3, 5, 7, 2, 4, 6)
    return x.reshape(n, 8 * c, d, h, w)


def _conv3(cin: int, cout: int) -> nn.Conv3d:
    return nn.Conv3d(cin, cout, 3, 1, 1)


class DenseUnit(nn.Module):
    def __init__(self, nf: int, gc: int, scale: float):
        super().__init__()
        self.scale = scale
        self.convs = nn.ModuleList(
            [_conv3(nf + i * gc, gc) for i in range(4)] + [_conv3(nf + 4 * gc, nf)]
        )

    def forward(self, x: Tensor) -> Tensor:
        feats = [x]
        for conv in self.convs[:-1]:
            feats.append(F.leaky_relu(conv(torch.cat(feats, 1)), LEAKY_SLOPE))
        out = self.convs[-1](torch.cat(feats, 1))
        return x + self.scale * out


class VRRDB(nn.Module):
    def __init__(self, nf: int, gc: int, scale: float):
        super().__init__()
        self.scale = scale
        self.units = nn.Sequential(*(DenseUnit(nf, gc, scale) for _ in range(3)))

    def forward(self, x: Tensor) -> Tensor:
        return x + self.scale * self.units(x)


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        nf, gc = cfg.base_filters, cfg.growth_channels
        self.head = _conv3(1, nf)
        self.blocks = nn.Sequential(*(VRRDB(nf, gc, cfg.residual_scale) for _ in range(cfg.num_vrrdb)))
        self.trunk = _conv3(nf, nf)
        self.upconv = _conv3(nf, 8 * nf)
        self.hr_conv = _conv3(nf, nf)
        self.out_conv = _conv3(nf, 1)
        self.seed: int | None = None

    def forward(self, lr: Tensor) -> Tensor:
        if lr.ndim != 5 or lr.shape[1] != 1:
            raise ShapeError(f"expected (N, 1, d, h, w), got {tuple(lr.shape)}")
        if min(lr.shape[2:]) < MIN_LR_EXTENT:
            raise ShapeError(f"LR extents must be >= {MIN_LR_EXTENT}, got {tuple(lr.shape[2:])}")
        feat = self.head(lr)
        feat = feat + self.trunk(self.blocks(feat))
        up = F.leaky_relu(pixel_shuffle3(self.upconv(feat)), LEAKY_SLOPE)
        return self.out_conv(F.leaky_relu(self.hr_conv(up), LEAKY_SLOPE))


def build_generator(cfg: GeneratorConfig, seed: int) -> Generator:
    """Kaiming-initialized generator; identical seeds give bit-identical weights."""
    g = Generator(cfg)
    kaiming_init_(g, _rng.stream(seed, _rng.INIT_GENERATOR))
    g.seed = int(seed)
    return g


def generator_forward(params: Generator, lr) -> Tensor:
    """Super-resolve a (d, h, w), (1, d, h, w) or (N, 1, d, h, w) LR grid."""
    x = torch.as_tensor(lr)
    squeeze = x.ndim
    if x.ndim == 3:
        x = x[None, None]
    elif x.ndim == 4:
        x = x[None]
    x = x.to(next(params.parameters()).dtype)
    out = params(x)
    if squeeze == 3:
        return out[0, 0]
    if squeeze == 4:
        return out[0]
    return out

