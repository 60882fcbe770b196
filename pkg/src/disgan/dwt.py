"""Single-level separable 3D Haar wavelet transform.

Orthonormal convention: along one axis ``low[k] = (x[2k] + x[2k+1]) / sqrt(2)``
and ``high[k] = (x[2k] - x[2k+1]) / sqrt(2)``. The transform is applied along
depth, height, then width (the last three axes). Band names read in that
order, so ``lhh`` is low-pass in depth, high-pass in height and width.

Functions accept numpy arrays or torch tensors. Torch inputs stay in the
autograd graph, which is what the discriminator relies on. Numpy inputs are
transformed in float64 and returned in the input's floating dtype.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np
import torch

from .errors import OddExtent, ShapeMismatch

BAND_NAMES = ("lll", "llh", "lhl", "lhh", "hll", "hlh", "hhl", "hhh")
HIGH_BANDS = BAND_NAMES[1:]
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class SubbandSet:
    lll: object
    llh: object
    lhl: object
    lhh: object
    hll: object
    hlh: object
    hhl: object
    hhh: object

    def __iter__(self) -> Iterator:
        return (getattr(self, f.name) for f in fields(self))

    def items(self):
        return [(name, getattr(self, name)) for name in BAND_NAMES]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.lll.shape)

    def high(self) -> list:
        return [getattr(self, name) for name in HIGH_BANDS]

    def channel(self, c: int) -> "SubbandSet":
        """Bands of a single channel from a multi-channel set (channel axis = -4)."""
        return SubbandSet(*(band[..., c, :, :, :] for band in self))

    def energy(self) -> float:
        return float(sum(_energy(band) for band in self))


def _energy(a) -> float:
    if isinstance(a, torch.Tensor):
        return float((a.detach().double() ** 2).sum())
    return float(np.sum(np.asarray(a, dtype=np.float64) ** 2))


def _check_even(shape) -> None:
    if len(shape) < 3:
        raise OddExtent(f"need at least 3 spatial axes, got shape {tuple(shape)}")
    for n in shape[-3:]:
        if n < 2 or n % 2:
            raise OddExtent(f"spatial extents must be even and >= 2, got {tuple(shape[-3:])}")


def _split(x, axis: int):
    idx_even = [slice(None)] * x.ndim
    idx_odd = [slice(None)] * x.ndim
    idx_even[axis] = slice(0, None, 2)
    idx_odd[axis] = slice(1, None, 2)
    a, b = x[tuple(idx_even)], x[tuple(idx_odd)]
    return (a + b) * _INV_SQRT2, (a - b) * _INV_SQRT2


def _merge(low, high, axis: int):
    a = (low + high) * _INV_SQRT2
    b = (low - high) * _INV_SQRT2
    if isinstance(a, torch.Tensor):
        out = torch.stack([a, b], dim=axis + 1)
        shape = list(a.shape)
        shape[axis] *= 2
        return out.reshape(shape)
    out = np.stack([a, b], axis=axis + 1)
    shape = list(a.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def _forward_tree(x):
    ndim = x.ndim
    bands = {"": x}
    for axis in (ndim - 3, ndim - 2, ndim - 1):
        nxt = {}
        for prefix, arr in bands.items():
            lo, hi = _split(arr, axis)
            nxt[prefix + "l"] = lo
            nxt[prefix + "h"] = hi
        bands = nxt
    return bands


def dwt3_forward(x) -> SubbandSet:
    """Forward transform over the last three axes; every extent must be even."""
    _check_even(x.shape)
    if isinstance(x, torch.Tensor):
        bands = _forward_tree(x)
        return SubbandSet(**bands)
    arr = np.asarray(x)
    out_dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64
    bands = _forward_tree(arr.astype(np.float64))
    return SubbandSet(**{k: v.astype(out_dtype) for k, v in bands.items()})


def dwt3_inverse(s: SubbandSet):
    """Reconstruct the grid from its eight bands."""
    shapes = {tuple(b.shape) for b in s}
    if len(shapes) != 1:
        raise ShapeMismatch(f"band shapes differ: {sorted(shapes)}")
    is_torch = isinstance(s.lll, torch.Tensor)
    if is_torch:
        bands = {name: band for name, band in s.items()}
    else:
        lll = np.asarray(s.lll)
        out_dtype = lll.dtype if np.issubdtype(lll.dtype, np.floating) else np.float64
        bands = {name: np.asarray(band, dtype=np.float64) for name, band in s.items()}
    ndim = len(next(iter(shapes)))
    for axis in (ndim - 1, ndim - 2, ndim - 3):
        nxt = {}
        for prefix in sorted({k[:-1] for k in bands}):
            nxt[prefix] = _merge(bands[prefix + "l"], bands[prefix + "h"], axis)
        bands = nxt
    out = bands[""]
    return out if is_torch else out.astype(out_dtype)


def dwt3_channels(x) -> SubbandSet:
    """Per-channel transform of a (..., C, D, H, W) feature map.

    Bands keep the leading and channel axes, so ``result.channel(c)`` equals
    ``dwt3_forward(x[..., c, :, :, :])``. The map is linear and its adjoint
    is ``dwt3_inverse``; autograd follows the slicing directly.
    """
    if x.ndim < 4:
        raise OddExtent(f"expected a channel axis before the spatial axes, got shape {tuple(x.shape)}")
    return dwt3_forward(x)

