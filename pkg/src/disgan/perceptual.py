"""ResNet10-style convolutional feature extractor and the perceptual distance."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import rng as _rng
from .errors import ConfigError, ShapeError
from .nn_init import LEAKY_SLOPE, kaiming_init_

MODES = ("frozen", "joint")
MIN_EXTENT = 16


@dataclass
class FeatureExtractorConfig:
    widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    blocks_per_stage: int = 1
    mode: str = "frozen"
    grad_clip: float = 1.0

    @property
    def feature_length(self) -> int:
        return self.widths[-1]

    def validate(self) -> None:
        if not self.widths or any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigError(f"widths must be strictly increasing, got {self.widths}")
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv3d(cin, cout, 3, stride, 1)
        self.conv2 = nn.Conv3d(cout, cout, 3, 1, 1)
        self.shortcut = nn.Conv3d(cin, cout, 1, stride) if (stride != 1 or cin != cout) else None

    def forward(self, x: Tensor) -> Tensor:
        out = self.conv2(F.leaky_relu(self.conv1(x), LEAKY_SLOPE))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.leaky_relu(out + skip, LEAKY_SLOPE)


class FeatureExtractor(nn.Module):
    """Stride-2 stem, one residual stage per width, global average pooling."""

    def __init__(self, cfg: FeatureExtractorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        w = cfg.widths
        self.stem = nn.Conv3d(1, w[0], 3, 2, 1)
        stages = []
        cin = w[0]
        for i, cout in enumerate(w):
            blocks = []
            for b in range(cfg.blocks_per_stage):
                stride = 2 if (i > 0 and b == 0) else 1
                blocks.append(BasicBlock(cin, cout, stride))
                cin = cout
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.Sequential(*stages)
        self.seed: int | None = None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 5 or x.shape[1] != 1:
            raise ShapeError(f"expected (N, 1, D, H, W), got {tuple(x.shape)}")
        if min(x.shape[2:]) < MIN_EXTENT:
            raise ShapeError(f"extents must be >= {MIN_EXTENT}, got {tuple(x.shape[2:])}")
        h = self.stages(F.leaky_relu(self.stem(x), LEAKY_SLOPE))
        return h.mean(dim=(2, 3, 4))


def build_feature_extractor(cfg: FeatureExtractorConfig, seed: int) -> FeatureExtractor:
    f = FeatureExtractor(cfg)
    kaiming_init_(f, _rng.stream(seed, _rng.INIT_EXTRACTOR))
    f.seed = int(seed)
    if cfg.mode == "frozen":
        f.requires_grad_(False)
    return f


def feature_forward(params: FeatureExtractor, patch) -> Tensor:
    x = torch.as_tensor(patch)
    ndim = x.ndim
    while x.ndim < 5:
        x = x[None]
    out = params(x.to(next(params.parameters()).dtype))
    return out[0] if ndim < 5 else out


def perceptual_distance(f_hr, f_sr) -> Tensor:
    """Mean squared difference of two feature vectors (or batches of them)."""
    a = torch.as_tensor(f_hr)
    b = torch.as_tensor(f_sr)
    if a.shape != b.shape:
        raise ShapeError(f"feature shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).mean()
