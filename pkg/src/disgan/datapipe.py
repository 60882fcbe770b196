"""Degradation simulation and training-sample construction."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from . import rng as _rng
from .errors import EmptyDataset, InvalidSigma, ShapeError, VolumeTooSmall
from .volume import Volume

PROTOCOL_SIGMAS = (0.0, 0.1, 0.2, 0.3)


@dataclass(frozen=True, eq=False)
class PatchPair:
    hr: np.ndarray
    lr: np.ndarray
    origin: tuple[int, int, int]
    volume_index: int = 0
    noise_sigma: float = 0.0


def patch_origins(extent: int, size: int, stride: int) -> list[int]:
    """Regular grid ``0, stride, ...`` plus a flush origin at ``extent - size`` if needed."""
    if extent < size:
        raise VolumeTooSmall(f"extent {extent} < patch size {size}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    origins = list(range(0, extent - size + 1, stride))
    if origins[-1] != extent - size:
        origins.append(extent - size)
    return origins


def _as_array(v) -> np.ndarray:
    return v.data if isinstance(v, Volume) else np.asarray(v)


def extract_patches(v, size: int = 64, stride: int = 16) -> list[tuple[np.ndarray, tuple[int, int, int]]]:
    data = _as_array(v)
    if any(n < size for n in data.shape):
        raise VolumeTooSmall(f"volume {data.shape} smaller than patch {size}")
    grids = [patch_origins(n, size, stride) for n in data.shape]
    out = []
    for z in grids[0]:
        for y in grids[1]:
            for x in grids[2]:
                out.append((data[z:z + size, y:y + size, x:x + size].copy(), (z, y, x)))
    return out


def downsample_linear(x, factor: int = 2) -> np.ndarray:
    """Linear downsampling by ``factor`` on the last three axes.

    Sampling the trilinear interpolant at the centres of aligned factor^3
    cells reduces to block averaging, which is how it is computed.
    """
    arr = np.asarray(x)
    *lead, d, h, w = arr.shape
    if d % factor or h % factor or w % factor:
        raise ShapeError(f"extents {(d, h, w)} not divisible by {factor}")
    f = factor
    blocks = arr.astype(np.float64).reshape(*lead, d // f, f, h // f, f, w // f, f)
    out = blocks.mean(axis=(-5, -3, -1))
    return out.astype(arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64)


def add_gaussian_noise(v: Volume, sigma: float, seed: int) -> Volume:
    if sigma < 0:
        raise InvalidSigma(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return v
    gen = _rng.stream(seed, _rng.DEGRADATION)
    noise = gen.standard_normal(v.shape) * sigma
    return v.with_data(v.data.astype(np.float64) + noise)


class PatchSampler:
    """Deterministic, resumable source of PatchPair batches.

    Each epoch visits every (volume, origin) pair once in a seeded
    permutation. The position is just ``(epoch, cursor)``, so a sampler can
    be rebuilt mid-run from its state.
    """

    def __init__(self, volumes: Sequence, batch_size: int, seed: int, noise_sigma: float = 0.0,
                 size: int = 64, stride: int = 16):
        if len(volumes) == 0:
            raise EmptyDataset("no volumes given")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if noise_sigma < 0:
            raise InvalidSigma(f"sigma must be >= 0, got {noise_sigma}")
        self.volumes = [np.asarray(_as_array(v), dtype=np.float32) for v in volumes]
        self.batch_size = batch_size
        self.seed = int(seed)
        self.noise_sigma = float(noise_sigma)
        self.size = size
        self.stride = stride
        self.index = []
        for vi, vol in enumerate(self.volumes):
            grids = [patch_origins(n, size, stride) for n in vol.shape]
            self.index.extend((vi, (z, y, x)) for z in grids[0] for y in grids[1] for x in grids[2])
        self.epoch = 0
        self.cursor = 0
        self._order_epoch = -1
        self._order: np.ndarray | None = None
        self._noisy: list[np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.index)

    @property
    def batches_per_epoch(self) -> int:
        return -(-len(self.index) // self.batch_size)

    def state(self) -> dict:
        return {"epoch": self.epoch, "cursor": self.cursor}

    def load_state(self, state: dict) -> None:
        self.epoch = int(state["epoch"])
        self.cursor = int(state["cursor"])

    def _prepare(self) -> None:
        if self._order_epoch == self.epoch:
            return
        self._order = _rng.stream(self.seed, _rng.DATA_ORDER, self.epoch).permutation(len(self.index))
        if self.noise_sigma > 0:
            self._noisy = [
                (vol + _rng.stream(self.seed, _rng.DEGRADATION, self.epoch, vi).standard_normal(vol.shape)
                 * self.noise_sigma).astype(np.float32)
                for vi, vol in enumerate(self.volumes)
            ]
        else:
            self._noisy = self.volumes
        self._order_epoch = self.epoch

    def next_batch(self) -> list[PatchPair]:
        self._prepare()
        stop = min(self.cursor + self.batch_size, len(self.index))
        batch = []
        s = self.size
        for k in self._order[self.cursor:stop]:
            vi, (z, y, x) = self.index[k]
            hr = self._noisy[vi][z:z + s, y:y + s, x:x + s].copy()
            batch.append(PatchPair(hr, downsample_linear(hr), (z, y, x), vi, self.noise_sigma))
        self.cursor = stop
        if self.cursor >= len(self.index):
            self.epoch += 1
            self.cursor = 0
        return batch


def batch_iterator(volumes: Sequence, batch_size: int, seed: int, noise_sigma: float = 0.0,
                   size: int = 64, stride: int = 16, epochs: int | None = None) -> Iterator[list[PatchPair]]:
    """Yield batches forever, or for ``epochs`` full passes."""
    sampler = PatchSampler(volumes, batch_size, seed, noise_sigma, size, stride)
    while epochs is None or sampler.epoch < epochs:
        yield sampler.next_batch()


def stack_batch(batch: Sequence[PatchPair], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """(lr, hr) tensors shaped (N, 1, ...)."""
    lr = torch.from_numpy(np.stack([p.lr for p in batch])[:, None]).to(dtype)
    hr = torch.from_numpy(np.stack([p.hr for p in batch])[:, None]).to(dtype)
    return lr, hr


def load_manifest(path) -> list[dict]:
    """Read a dataset manifest: a JSON list of ``{"path": ..., "split": "train" | "test"}``.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise ValueError("manifest must be a JSON list")
    out = []
    for e in entries:
        split = e.get("split", "train")
        if split not in ("train", "test"):
            raise ValueError(f"unknown split {split!r}")
        p = Path(e["path"])
        if not p.is_absolute():
            p = path.parent / p
        out.append({"path": str(p), "split": split})
    return out
