"""PSNR, 3D SSIM, NRMSE and the Fourier-magnitude residual."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateReference, ShapeError

CONVENTION = "ref-minmax-unit-range"


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    nrmse: float
    data_range: float
    convention: str = CONVENTION

    def to_dict(self) -> dict:
        return {
            "psnr_db": "inf" if math.isinf(self.psnr_db) else self.psnr_db,
            "ssim": self.ssim,
            "nrmse": self.nrmse,
            "data_range": self.data_range,
            "convention": self.convention,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        psnr = math.inf if d["psnr_db"] == "inf" else float(d["psnr_db"])
        return cls(psnr, float(d["ssim"]), float(d["nrmse"]), float(d["data_range"]), d["convention"])


def _pair(x, ref) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(x, ref, data_range: float) -> float:
    a, b = _pair(x, ref)
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(data_range ** 2 / mse))


def gaussian_window_1d(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _local_mean(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = a
    for axis in range(3):
        out = ndimage.correlate1d(out, g, axis=axis, mode="constant")
    half = len(g) // 2
    return out[half:-half or None, half:-half or None, half:-half or None]


def ssim3d(x, ref, data_range: float, window: int = 11, sigma: float = 1.5,
           k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over every valid position of a separable Gaussian window."""
    a, b = _pair(x, ref)
    if a.ndim != 3:
        raise ShapeError(f"expected a 3D grid, got shape {a.shape}")
    if min(a.shape) < window:
        raise ShapeError(f"volume {a.shape} smaller than the {window}^3 window")
    if window % 2 == 0:
        raise ValueError("window size must be odd")
    g = gaussian_window_1d(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _local_mean(a, g)
    mu_b = _local_mean(b, g)
    var_a = _local_mean(a * a, g) - mu_a * mu_a
    var_b = _local_mean(b * b, g) - mu_b * mu_b
    cov = _local_mean(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def nrmse(x, ref) -> float:
    a, b = _pair(x, ref)
    denom = np.sqrt(np.sum(b * b))
    if denom == 0:
        raise DegenerateReference("reference has zero norm")
    return float(np.sqrt(np.sum((a - b) ** 2)) / denom)


def centered_spectrum(x) -> np.ndarray:
    """|FFT| of the magnitude image with zero frequency at the centre."""
    return np.abs(np.fft.fftshift(np.fft.fftn(np.abs(np.asarray(x, dtype=np.float64)))))


def freq_residual(x, ref, crop: int = 50) -> np.ndarray:
    a, b = _pair(x, ref)
    if a.ndim != 3 or min(a.shape) < crop:
        raise ShapeError(f"extents {a.shape} smaller than crop {crop}")
    diff = np.abs(centered_spectrum(a) - centered_spectrum(b))
    starts = [n // 2 - crop // 2 for n in a.shape]
    z, y, w = starts
    return diff[z:z + crop, y:y + crop, w:w + crop]


def rescale_by_reference(x, ref) -> tuple[np.ndarray, np.ndarray]:
    a, b = _pair(x, ref)
    lo, hi = float(b.min()), float(b.max())
    if hi <= lo:
        raise DegenerateReference("reference is constant; min-max rescaling undefined")
    return (a - lo) / (hi - lo), (b - lo) / (hi - lo)


def evaluate(x, ref) -> MetricReport:
    """All three metrics after rescaling both volumes by the reference's min/max."""
    a, b = rescale_by_reference(x, ref)
    return MetricReport(
        psnr_db=psnr(a, b, 1.0),
        ssim=ssim3d(a, b, 1.0),
        nrmse=nrmse(a, b),
        data_range=1.0,
    )
