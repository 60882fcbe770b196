"""Volume container, standardization, file I/O and synthetic phantoms.

Axis order is (depth, height, width) throughout. In NIfTI terms that is
(dim[3], dim[2], dim[1]), so the C-ordered array bytes are exactly the
NIfTI voxel stream.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as _rng
from .errors import (
    BadMagic,
    DegenerateVolume,
    InvalidSize,
    TruncatedFile,
    UnsupportedDatatype,
    UnsupportedFormat,
    VolumeParseError,
)

STD_EPS = 1e-8


@dataclass(frozen=True)
class VolumeStats:
    mean: float
    std: float
    min: float
    max: float


@dataclass(frozen=True, eq=False)
class Volume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume must be a non-empty 3D grid, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("volume contains NaN or Inf")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        origin = tuple(float(o) for o in self.origin)
        if len(origin) != 3:
            raise ValueError("origin must have three entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def stats(self) -> VolumeStats:
        d = self.data.astype(np.float64)
        return VolumeStats(float(d.mean()), float(d.std()), float(d.min()), float(d.max()))

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.spacing, self.origin)


def standardize(v: Volume) -> Volume:
    """Shift and scale to zero mean, unit standard deviation."""
    d = v.data.astype(np.float64)
    mean = d.mean()
    std = np.sqrt(((d - mean) ** 2).mean())
    if std <= STD_EPS:
        raise DegenerateVolume(f"cannot standardize: std={std:g} <= {STD_EPS:g}")
    return v.with_data((d - mean) / std)


# --------------------------------------------------------------------------- I/O

_NIFTI_HEADER_SIZE = 348
_NIFTI_VOX_OFFSET = 352
_DT_INT16 = 4
_DT_FLOAT32 = 16
_DTYPES = {_DT_INT16: ("i2", 16), _DT_FLOAT32: ("f4", 32)}


def read_volume(path: str | os.PathLike) -> Volume:
    path = Path(path)
    if path.suffix == ".nii":
        return _read_nifti(path)
    if path.suffix == ".rawv":
        return _read_rawv(path)
    raise UnsupportedFormat(f"unknown volume extension {path.suffix!r}", field="path")


def write_volume(v: Volume, path: str | os.PathLike) -> None:
    path = Path(path)
    if path.suffix == ".nii":
        _write_nifti(v, path)
    elif path.suffix == ".rawv":
        _write_rawv(v, path)
    else:
        raise UnsupportedFormat(f"unknown volume extension {path.suffix!r}", field="path")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _write_rawv(v: Volume, path: Path) -> None:
    path.write_bytes(v.data.astype("<f4").tobytes())
    meta = {"shape": list(v.shape), "spacing": list(v.spacing), "origin": list(v.origin)}
    _sidecar(path).write_text(json.dumps(meta))


def _read_rawv(path: Path) -> Volume:
    side = _sidecar(path)
    if not side.exists():
        raise VolumeParseError(f"missing sidecar {side.name}", field="sidecar")
    try:
        meta = json.loads(side.read_text())
        shape = tuple(int(s) for s in meta["shape"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise VolumeParseError(f"bad sidecar: {exc}", field="shape") from exc
    if len(shape) != 3:
        raise VolumeParseError(f"expected 3 dims, got {shape}", field="shape")
    raw = path.read_bytes()
    need = 4 * int(np.prod(shape))
    if len(raw) < need:
        raise TruncatedFile(f"payload has {len(raw)} bytes, need {need}", field="data")
    data = np.frombuffer(raw[:need], dtype="<f4").reshape(shape)
    return Volume(
        data,
        tuple(meta.get("spacing", (1.0, 1.0, 1.0))),
        tuple(meta.get("origin", (0.0, 0.0, 0.0))),
    )


def nifti_header(shape: Sequence[int], spacing: Sequence[float], origin: Sequence[float],
                 datatype: int = _DT_FLOAT32, endian: str = "<") -> bytes:
    """Build a single-file NIfTI-1 header (348 bytes) plus the empty extension flag."""
    d, h, w = (int(s) for s in shape)
    hdr = bytearray(_NIFTI_HEADER_SIZE)
    struct.pack_into(endian + "i", hdr, 0, _NIFTI_HEADER_SIZE)
    struct.pack_into(endian + "8h", hdr, 40, 3, w, h, d, 1, 1, 1, 1)
    struct.pack_into(endian + "hh", hdr, 70, datatype, _DTYPES[datatype][1])
    sd, sh, sw = (float(s) for s in spacing)
    struct.pack_into(endian + "8f", hdr, 76, 1.0, sw, sh, sd, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into(endian + "f", hdr, 108, float(_NIFTI_VOX_OFFSET))
    struct.pack_into(endian + "ff", hdr, 112, 1.0, 0.0)
    hdr[123] = 2  # xyzt_units: mm
    od, oh, ow = (float(o) for o in origin)
    struct.pack_into(endian + "hh", hdr, 252, 1, 0)  # qform_code, sform_code
    struct.pack_into(endian + "6f", hdr, 256, 0.0, 0.0, 0.0, ow, oh, od)
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + b"\x00\x00\x00\x00"


def _write_nifti(v: Volume, path: Path) -> None:
    header = nifti_header(v.shape, v.spacing, v.origin)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(v.data.astype("<f4").tobytes())
    os.replace(tmp, path)


def _read_nifti(path: Path) -> Volume:
    raw = path.read_bytes()
    if len(raw) < _NIFTI_HEADER_SIZE:
        raise TruncatedFile(f"file has {len(raw)} bytes, header needs 348", field="sizeof_hdr")
    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise UnsupportedFormat("detached header/image pairs are not supported", field="magic")
    if magic != b"n+1\x00":
        raise BadMagic(f"expected b'n+1\\x00', got {magic!r}", field="magic")

    endian = None
    for candidate in ("<", ">"):
        dim0 = struct.unpack_from(candidate + "h", raw, 40)[0]
        if 1 <= dim0 <= 7:
            endian = candidate
            break
    if endian is None:
        raise VolumeParseError("dim[0] implausible in either byte order", field="dim")
    sizeof_hdr = struct.unpack_from(endian + "i", raw, 0)[0]
    if sizeof_hdr != _NIFTI_HEADER_SIZE:
        raise VolumeParseError(f"expected 348, got {sizeof_hdr}", field="sizeof_hdr")

    dim = struct.unpack_from(endian + "8h", raw, 40)
    ndim = dim[0]
    if ndim < 3 or any(n != 1 for n in dim[4:ndim + 1]):
        raise VolumeParseError(f"only 3D volumes are supported, dim={dim}", field="dim")
    w, h, d = dim[1], dim[2], dim[3]
    if min(w, h, d) < 1:
        raise VolumeParseError(f"non-positive extent in dim={dim}", field="dim")

    datatype = struct.unpack_from(endian + "h", raw, 70)[0]
    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} not supported", field="datatype")
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    vox_offset = int(struct.unpack_from(endian + "f", raw, 108)[0])
    if vox_offset < _NIFTI_VOX_OFFSET:
        raise VolumeParseError(f"vox_offset {vox_offset} < 352", field="vox_offset")
    slope, inter = struct.unpack_from(endian + "ff", raw, 112)

    code, bits = _DTYPES[datatype]
    need = vox_offset + (bits // 8) * d * h * w
    if len(raw) < need:
        raise TruncatedFile(f"file has {len(raw)} bytes, need {need}", field="vox_offset")
    data = np.frombuffer(raw, dtype=endian + code, count=d * h * w, offset=vox_offset)
    data = data.reshape(d, h, w).astype(np.float32)
    if datatype != _DT_FLOAT32 and slope not in (0.0,) and (slope, inter) != (1.0, 0.0):
        data = (data * np.float32(slope) + np.float32(inter)).astype(np.float32)

    spacing = tuple(float(abs(p)) if p else 1.0 for p in (pixdim[3], pixdim[2], pixdim[1]))
    qform_code = struct.unpack_from(endian + "h", raw, 252)[0]
    origin = (0.0, 0.0, 0.0)
    if qform_code > 0:
        ox, oy, oz = struct.unpack_from(endian + "3f", raw, 268)
        origin = (oz, oy, ox)
    return Volume(data, spacing, origin)


# ----------------------------------------------------------------------- phantom

def _extents(size: int | Sequence[int]) -> tuple[int, int, int]:
    if isinstance(size, (int, np.integer)):
        return (int(size),) * 3
    ext = tuple(int(s) for s in size)
    if len(ext) != 3:
        raise InvalidSize(f"need three extents, got {size}")
    return ext


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


def phantom(seed: int, size: int | Sequence[int] = 64) -> Volume:
    """Seeded brain-like test object with values in [0, 1].

    A smooth low-frequency background carries 3-5 ellipsoidal shells
    (2-4 voxels thick) and 2-3 bent tubes (2-4 voxels wide).
    """
    ext = _extents(size)
    if any(e < 32 or e % 2 for e in ext):
        raise InvalidSize(f"every extent must be even and >= 32, got {ext}")
    gen = _rng.stream(seed, _rng.PHANTOM)
    shape = np.array(ext, dtype=np.float64)
    grids = np.meshgrid(*(np.arange(e, dtype=np.float64) + 0.5 for e in ext), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)

    background = np.zeros(len(pts))
    for _ in range(3):
        freq = gen.uniform(0.3, 1.5, size=3) * gen.choice([-1.0, 1.0], size=3)
        phase = gen.uniform(0, 2 * np.pi)
        background += np.cos(2 * np.pi * (pts / shape) @ freq + phase)
    background = (background - background.min()) / max(np.ptp(background), 1e-12)
    out = 0.05 + 0.25 * background

    for _ in range(int(gen.integers(3, 6))):
        center = shape * gen.uniform(0.35, 0.65, size=3)
        axes = shape * gen.uniform(0.15, 0.38, size=3)
        thickness = gen.uniform(2.0, 4.0)
        level = gen.uniform(0.55, 1.0)
        rel = (pts - center) / axes
        r = np.sqrt((rel ** 2).sum(axis=1))
        grad = np.sqrt(((rel / axes) ** 2).sum(axis=1)) / np.maximum(r, 1e-9)
        dist = np.abs(r - 1.0) / np.maximum(grad, 1e-9)
        out[dist < thickness / 2] = level

    for _ in range(int(gen.integers(2, 4))):
        a, bend, b = (shape * gen.uniform(0.1, 0.9, size=3) for _ in range(3))
        radius = gen.uniform(2.0, 4.0) / 2
        level = gen.uniform(0.6, 1.0)
        dist = np.minimum(_segment_distance(pts, a, bend), _segment_distance(pts, bend, b))
        out[dist < radius] = level

    return Volume(np.clip(out, 0.0, 1.0).reshape(ext))
