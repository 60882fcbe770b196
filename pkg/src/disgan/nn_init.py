"""Portable Kaiming initialization drawn from the package's Philox streams."""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

LEAKY_SLOPE = 0.2


def kaiming_std(fan_in: int, slope: float = LEAKY_SLOPE) -> float:
    return math.sqrt(2.0 / ((1.0 + slope ** 2) * fan_in))


@torch.no_grad()
def kaiming_init_(module: nn.Module, gen: np.random.Generator, slope: float = LEAKY_SLOPE) -> None:
    """Fan-in normal init for every conv weight, zero biases, in ``named_parameters`` order."""
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.zero_()
            continue
        fan_in = int(np.prod(p.shape[1:]))
        w = gen.standard_normal(tuple(p.shape)) * kaiming_std(fan_in, slope)
        p.copy_(torch.from_numpy(w.astype(np.float32)))
