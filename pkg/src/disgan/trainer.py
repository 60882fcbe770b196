"""Adversarial training loop, checkpoints and deterministic resume."""
from __future__ import annotations

import json
import logging
import math
import os
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import rng as _rng
from .datapipe import PatchPair, PatchSampler, load_manifest, stack_batch
from .discriminator import Discriminator, DiscriminatorConfig, build_discriminator
from .errors import ConfigError, IncompatibleCheckpoint, NonFiniteLoss
from .generator import Generator, GeneratorConfig, build_generator
from .objectives import (
    LossWeights,
    NoiseSchedule,
    apply_instance_noise,
    instance_noise_sigma,
    l1_pixel,
    ragan_d_loss,
    ragan_g_loss,
    total_g_loss,
)
from .perceptual import FeatureExtractor, FeatureExtractorConfig, build_feature_extractor, perceptual_distance
from .volume import read_volume, standardize

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "disgan-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainerConfig:
    batch_size: int
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    iterations: int = 1500
    alpha: float = 0.01
    beta: float = 0.005
    sigma_start: float = 1.0
    sigma_end: float = 0.0
    noise_total_iters: int | None = None  # None ties the schedule to `iterations`
    seed: int = 0
    checkpoint_every: int = 500
    hr_patch: int = 32
    patch_stride: int = 16
    data_noise_sigma: float = 0.0
    lr_generator: float | None = None
    lr_discriminator: float | None = None
    lr_extractor: float | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    extractor: FeatureExtractorConfig = field(default_factory=FeatureExtractorConfig)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)

    @property
    def schedule(self) -> NoiseSchedule:
        total = self.iterations if self.noise_total_iters is None else self.noise_total_iters
        return NoiseSchedule(self.sigma_start, self.sigma_end, total)

    def validate(self) -> None:
        if self.lr < 0 or any(v is not None and v < 0 for v in
                              (self.lr_generator, self.lr_discriminator, self.lr_extractor)):
            raise ConfigError("learning rates must be >= 0")
        if not 0 <= self.adam_beta1 < self.adam_beta2 < 1:
            raise ConfigError("need 0 <= beta1 < beta2 < 1")
        if self.iterations < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("iterations, batch_size and checkpoint_every must be >= 1")
        if self.hr_patch % 2 or self.hr_patch // 2 < 8:
            raise ConfigError(f"hr_patch must be even and >= 16, got {self.hr_patch}")
        if self.hr_patch % (2 ** self.discriminator.levels):
            raise ConfigError("hr_patch must be divisible by 2**discriminator.levels")
        self.weights.validate()
        self.schedule.validate()
        self.generator.validate()
        self.discriminator.validate()
        self.extractor.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "batch_size" not in d:
            raise ConfigError("batch_size is required")
        nested = {"generator": GeneratorConfig, "discriminator": DiscriminatorConfig,
                  "extractor": FeatureExtractorConfig}
        for key, sub in nested.items():
            if key in d and isinstance(d[key], dict):
                sub_known = {f.name for f in fields(sub)}
                bad = set(d[key]) - sub_known
                if bad:
                    raise ConfigError(f"unknown {key} keys: {sorted(bad)}")
                d[key] = sub(**d[key])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "TrainerConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class StepLog:
    iteration: int
    sigma: float
    d_loss: float
    g_ragan: float
    perc: float
    pixel: float
    g_total: float
    f_loss: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _adam(params, lr: float, cfg: TrainerConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(cfg.adam_beta1, cfg.adam_beta2), foreach=False)


def _finite(term: str, value: torch.Tensor) -> float:
    v = float(value.detach())
    if not math.isfinite(v):
        raise NonFiniteLoss(term, v)
    return v


class Trainer:
    """Holds the full training state: networks, optimizers, RNG streams, sampler and log."""

    def __init__(self, cfg: TrainerConfig, volumes: Sequence | None = None):
        cfg.validate()
        self.cfg = cfg
        self.generator: Generator = build_generator(cfg.generator, cfg.seed)
        self.discriminator: Discriminator = build_discriminator(cfg.discriminator, cfg.seed)
        self.extractor: FeatureExtractor = build_feature_extractor(cfg.extractor, cfg.seed)
        pick = lambda v: cfg.lr if v is None else v  # noqa: E731
        self.opt_g = _adam(self.generator.parameters(), pick(cfg.lr_generator), cfg)
        self.opt_d = _adam(self.discriminator.parameters(), pick(cfg.lr_discriminator), cfg)
        self.opt_f = _adam(self.extractor.parameters(), pick(cfg.lr_extractor), cfg)
        self.noise_rng = _rng.stream(cfg.seed, _rng.INSTANCE_NOISE)
        self.iteration = 0
        self.history: list[dict] = []
        self.sampler: PatchSampler | None = None
        if volumes is not None:
            self.attach_data(volumes)

    def attach_data(self, volumes: Sequence) -> None:
        self.sampler = PatchSampler(volumes, self.cfg.batch_size, self.cfg.seed, self.cfg.data_noise_sigma,
                                    self.cfg.hr_patch, self.cfg.patch_stride)

    # ---- sub-steps

    def discriminator_update(self, sr: torch.Tensor, hr: torch.Tensor, sigma: float) -> float:
        hr_n = apply_instance_noise(hr, sigma, self.noise_rng)
        sr_n = apply_instance_noise(sr.detach(), sigma, self.noise_rng)
        loss = ragan_d_loss(self.discriminator(hr_n), self.discriminator(sr_n))
        value = _finite("d_loss", loss)
        self.opt_d.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_d.step()
        return value

    def generator_update(self, sr: torch.Tensor, hr: torch.Tensor) -> dict:
        d_params = [p for p in self.discriminator.parameters()]
        flags = [p.requires_grad for p in d_params]
        for p in d_params:
            p.requires_grad_(False)
        try:
            g_rag = ragan_g_loss(self.discriminator(hr), self.discriminator(sr))
        finally:
            for p, f in zip(d_params, flags):
                p.requires_grad_(f)
        with torch.no_grad():
            f_hr = self.extractor(hr)
        perc = perceptual_distance(f_hr, self.extractor(sr))
        pixel = l1_pixel(sr, hr)
        terms = {"perc": _finite("perc", perc), "pixel": _finite("pixel", pixel),
                 "g_ragan": _finite("g_ragan", g_rag)}
        total = total_g_loss(perc, pixel, g_rag, self.cfg.weights)
        terms["g_total"] = _finite("g_total", total)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()
        return terms

    def extractor_update(self, sr: torch.Tensor, hr: torch.Tensor) -> float | None:
        if self.cfg.extractor.mode == "frozen":
            return None
        # gradient ascent on the perceptual distance, clipped
        self.opt_f.zero_grad(set_to_none=True)
        perc = perceptual_distance(self.extractor(hr), self.extractor(sr.detach()))
        value = _finite("f_loss", perc)
        (-perc).backward()
        nn.utils.clip_grad_norm_(self.extractor.parameters(), self.cfg.extractor.grad_clip)
        self.opt_f.step()
        return value

    def step(self, batch: Sequence[PatchPair] | None = None) -> StepLog:
        if batch is None:
            if self.sampler is None:
                raise RuntimeError("no data attached")
            batch = self.sampler.next_batch()
        lr, hr = stack_batch(batch)
        sigma = instance_noise_sigma(self.cfg.schedule, self.iteration)
        # G is untouched by the D update, so one forward serves both sub-steps.
        sr = self.generator(lr)
        d_loss = self.discriminator_update(sr, hr, sigma)
        terms = self.generator_update(sr, hr)
        f_loss = self.extractor_update(sr, hr)
        entry = StepLog(self.iteration, sigma, d_loss, terms["g_ragan"], terms["perc"], terms["pixel"],
                        terms["g_total"], f_loss)
        self.iteration += 1
        self.history.append(entry.to_dict())
        return entry

    # ---- checkpointing

    def _networks(self) -> dict[str, nn.Module]:
        return {"generator": self.generator, "discriminator": self.discriminator, "extractor": self.extractor}

    def _optimizers(self) -> dict[str, tuple[torch.optim.Optimizer, nn.Module]]:
        return {"generator": (self.opt_g, self.generator), "discriminator": (self.opt_d, self.discriminator),
                "extractor": (self.opt_f, self.extractor)}

    def tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for net_name, net in self._networks().items():
            for name, p in net.named_parameters():
                out[f"{net_name}/{name}"] = p.detach()
        for net_name, (opt, net) in self._optimizers().items():
            for name, p in net.named_parameters():
                for key, val in opt.state.get(p, {}).items():
                    out[f"optim/{net_name}/{name}/{key}"] = torch.as_tensor(val)
        return out

    def save(self, path) -> None:
        checkpoint_save(self, path)

    @classmethod
    def load(cls, path, volumes: Sequence | None = None) -> "Trainer":
        return checkpoint_load(path, volumes)


def train_step(state: Trainer, batch: Sequence[PatchPair] | None = None) -> tuple[Trainer, StepLog]:
    entry = state.step(batch)
    return state, entry


def _encode(t: torch.Tensor) -> bytes:
    return t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()


def _entry(name: str) -> zipfile.ZipInfo:
    # fixed timestamp keeps identical training states byte-identical on disk
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    return info


def checkpoint_save(state: Trainer, path) -> None:
    """Write a zip archive: ``manifest.json`` plus one little-endian float32 blob per tensor.

    The write goes to a temporary file that is renamed into place.
    """
    path = Path(path)
    tensors = state.tensors()
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": state.cfg.to_dict(),
        "iteration": state.iteration,
        "rng": {"instance_noise": _rng.get_state(state.noise_rng)},
        "sampler": state.sampler.state() if state.sampler is not None else None,
        "history": state.history,
        "tensors": [{"name": n, "shape": list(t.shape), "dtype": "<f4"} for n, t in tensors.items()],
    }
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(_entry("manifest.json"), json.dumps(manifest))
        for name, t in tensors.items():
            zf.writestr(_entry(f"tensors/{name}"), _encode(t))
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, dict[str, torch.Tensor]]:
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
                raise IncompatibleCheckpoint(
                    f"expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, "
                    f"got {manifest.get('format')} v{manifest.get('version')}")
            tensors = {}
            for entry in manifest["tensors"]:
                raw = zf.read(f"tensors/{entry['name']}")
                arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(entry["shape"])
                tensors[entry["name"]] = torch.from_numpy(arr.copy())
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise IncompatibleCheckpoint(f"unreadable checkpoint {path}: {exc}") from exc
    return manifest, tensors


def _load_module(net: nn.Module, prefix: str, tensors: dict[str, torch.Tensor]) -> None:
    with torch.no_grad():
        for name, p in net.named_parameters():
            key = f"{prefix}/{name}"
            if key not in tensors:
                raise IncompatibleCheckpoint(f"missing tensor {key}")
            if tuple(tensors[key].shape) != tuple(p.shape):
                raise IncompatibleCheckpoint(f"{key}: shape {tuple(tensors[key].shape)} != {tuple(p.shape)}")
            p.copy_(tensors[key])


def checkpoint_load(path, volumes: Sequence | None = None) -> Trainer:
    manifest, tensors = read_checkpoint(path)
    cfg = TrainerConfig.from_dict(manifest["config"])
    state = Trainer(cfg, volumes)
    for net_name, net in state._networks().items():
        _load_module(net, net_name, tensors)
    for net_name, (opt, net) in state._optimizers().items():
        for name, p in net.named_parameters():
            prefix = f"optim/{net_name}/{name}/"
            keys = [k for k in tensors if k.startswith(prefix)]
            if keys:
                opt.state[p] = {k[len(prefix):]: tensors[k].clone() for k in keys}
    state.iteration = int(manifest["iteration"])
    state.noise_rng = _rng.from_state(manifest["rng"]["instance_noise"])
    state.history = list(manifest["history"])
    if state.sampler is not None and manifest["sampler"] is not None:
        state.sampler.load_state(manifest["sampler"])
    return state


def load_generator(path) -> Generator:
    """Generator weights and config from a checkpoint, ready for inference."""
    manifest, tensors = read_checkpoint(path)
    try:
        cfg = GeneratorConfig(**manifest["config"]["generator"])
        g = Generator(cfg)
    except (TypeError, ConfigError) as exc:
        raise IncompatibleCheckpoint(f"bad generator config: {exc}") from exc
    _load_module(g, "generator", tensors)
    g.eval()
    return g


def load_split(manifest_path, split: str = "train"):
    """Standardized volumes of one split from a dataset manifest."""
    return [standardize(read_volume(e["path"])) for e in load_manifest(manifest_path) if e["split"] == split]


def train(config: TrainerConfig, manifest, out_dir, resume=None) -> tuple[Path, Path]:
    """Run ``config.iterations`` steps; returns (final checkpoint, JSON-lines log).

    With ``resume`` the run continues from a checkpoint and appends to the log.
    """
    if _rng.deterministic_requested():
        _rng.enable_determinism()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    volumes = load_split(manifest, "train")
    if resume is not None:
        state = checkpoint_load(resume, volumes)
        if state.cfg.to_dict() != config.to_dict():
            raise IncompatibleCheckpoint("resume checkpoint was written with a different config")
    else:
        state = Trainer(config, volumes)
    log_path = out_dir / "train_log.jsonl"
    final = out_dir / "final.ckpt"
    mode = "a" if resume is not None else "w"
    with open(log_path, mode) as fh:
        try:
            while state.iteration < config.iterations:
                entry = state.step()
                fh.write(json.dumps(entry.to_dict()) + "\n")
                fh.flush()
                if state.iteration % config.checkpoint_every == 0 and state.iteration < config.iterations:
                    checkpoint_save(state, out_dir / f"iter_{state.iteration:06d}.ckpt")
                if state.iteration % 100 == 0:
                    log.info("iter %d d=%.4f g=%.4f", state.iteration, entry.d_loss, entry.g_total)
            checkpoint_save(state, final)
        except OSError:
            fh.flush()
            raise
    return final, log_path
