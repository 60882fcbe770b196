"""Training losses and the annealed instance-noise schedule."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import Tensor

from .errors import ConfigError, InvalidLoss, InvalidScores, InvalidSigma, ShapeError


@dataclass
class LossWeights:
    alpha: float = 0.01
    beta: float = 0.005

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NoiseSchedule:
    sigma_start: float = 1.0
    sigma_end: float = 0.0
    total_iters: int = 60000

    def validate(self) -> None:
        if not self.sigma_start >= self.sigma_end >= 0:
            raise ConfigError("need sigma_start >= sigma_end >= 0")
        if self.total_iters < 1:
            raise ConfigError("total_iters must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def l1_pixel(sr, hr) -> Tensor:
    sr, hr = torch.as_tensor(sr), torch.as_tensor(hr)
    if sr.shape != hr.shape:
        raise ShapeError(f"shape mismatch {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return (sr - hr).abs().mean()


def _softplus(z: Tensor) -> Tensor:
    # log(1 + e^z) without overflow
    return torch.logaddexp(torch.zeros_like(z), z)


def _scores(x) -> Tensor:
    t = torch.as_tensor(x)
    if not t.is_floating_point():
        t = t.double()
    if t.numel() == 0:
        raise InvalidScores("empty score tensor")
    if torch.isnan(t).any():
        raise InvalidScores("scores contain NaN")
    return t


def ragan_d_loss(real_scores, fake_scores) -> Tensor:
    """Relativistic-average critic loss.

    ``-E[log sig(C_r - mean C_f)] - E[log(1 - sig(C_f - mean C_r))]`` with the
    expectations taken over batch and voxels together.
    """
    real, fake = _scores(real_scores), _scores(fake_scores)
    real_gap = real - fake.mean()
    fake_gap = fake - real.mean()
    return _softplus(-real_gap).mean() + _softplus(fake_gap).mean()


def ragan_g_loss(real_scores, fake_scores) -> Tensor:
    """Generator counterpart: the critic loss with the roles swapped."""
    return ragan_d_loss(fake_scores, real_scores)


def total_g_loss(perc, pixel, g_ragan, w: LossWeights):
    for name, val in (("perc", perc), ("pixel", pixel), ("g_ragan", g_ragan)):
        v = float(val.detach()) if isinstance(val, Tensor) else float(val)
        if not math.isfinite(v):
            raise InvalidLoss(f"{name} is not finite: {v}")
    return perc + w.alpha * pixel + w.beta * g_ragan


def instance_noise_sigma(schedule: NoiseSchedule, iteration: int) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    frac = iteration / schedule.total_iters
    sigma = schedule.sigma_start + (schedule.sigma_end - schedule.sigma_start) * frac
    return max(schedule.sigma_end, sigma)


def apply_instance_noise(x, sigma: float, rng: np.random.Generator):
    """``x + N(0, sigma^2)`` per voxel. ``sigma == 0`` returns ``x`` and draws nothing."""
    if sigma < 0:
        raise InvalidSigma(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x
    noise = rng.standard_normal(tuple(x.shape)) * sigma
    if isinstance(x, Tensor):
        return x + torch.from_numpy(noise).to(dtype=x.dtype, device=x.device)
    arr = np.asarray(x)
    return (arr + noise).astype(arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64)
