"""Command-line entry point: ``disgan <subcommand> ...``.

Machine-readable results go to stdout as a single JSON document. Diagnostics
go to stderr as one line. Exit codes: 0 success, 1 usage error, 2 data or
parse error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as _rng
from .datapipe import PROTOCOL_SIGMAS
from .dwt import dwt3_forward
from .errors import (
    ConfigError,
    DegenerateReference,
    DegenerateVolume,
    DisganError,
    EmptyDataset,
    IncompatibleCheckpoint,
    InvalidLoss,
    InvalidSigma,
    InvalidSize,
    NonFiniteLoss,
    ShapeError,
    VolumeParseError,
)
from .inference import noise_robustness_protocol, super_resolve
from .metrics import evaluate, freq_residual
from .trainer import TrainerConfig, load_generator, read_checkpoint, train
from .volume import Volume, phantom, read_volume, standardize, write_volume

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; usage errors here map to 1.
    def error(self, message):
        raise UsageError(message)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, InvalidSize, InvalidSigma)):
        return EXIT_USAGE
    if isinstance(exc, (NonFiniteLoss, InvalidLoss, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (VolumeParseError, ShapeError, ConfigError, DegenerateVolume, DegenerateReference,
                        EmptyDataset, IncompatibleCheckpoint, OSError, ValueError, KeyError, DisganError)):
        return EXIT_DATA
    raise exc


def _emit(payload) -> None:
    sys.stdout.write(json.dumps(payload, indent=1) + "\n")
    sys.stdout.flush()


def _stitch_defaults(model: str, lr_patch: int | None, lr_stride: int | None) -> tuple[int, int]:
    if lr_patch is None:
        manifest, _ = read_checkpoint(model)
        lr_patch = int(manifest["config"].get("hr_patch", 32)) // 2
    if lr_stride is None:
        lr_stride = max(1, lr_patch // 2)
    return lr_patch, lr_stride


# ---- subcommands


def cmd_train(args) -> dict:
    cfg = TrainerConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.iterations is not None:
        cfg.iterations = args.iterations
    cfg.validate()
    final, log_path = train(cfg, args.manifest, args.out_dir, resume=args.resume)
    return {"checkpoint": str(final), "log": str(log_path), "iterations": cfg.iterations, "seed": cfg.seed}


def cmd_sr(args) -> dict:
    g = load_generator(args.model)
    lr_patch, lr_stride = _stitch_defaults(args.model, args.lr_patch, args.lr_stride)
    lr = read_volume(args.input)
    stats = lr.stats()
    # the generator was trained on standardized volumes; map back to input intensities afterwards
    sr = super_resolve(g, standardize(lr), lr_patch, lr_stride, args.batch_size)
    out = sr.with_data(sr.data.astype(np.float64) * stats.std + stats.mean)
    write_volume(out, args.out)
    return {"output": str(args.out), "shape": list(out.shape), "spacing": list(out.spacing),
            "lr_patch": lr_patch, "lr_stride": lr_stride}


def cmd_eval(args) -> dict:
    ref = read_volume(args.ref)
    test = read_volume(args.test)
    report = evaluate(test.data, ref.data).to_dict()
    if args.freq_residual is not None:
        res = freq_residual(test.data, ref.data, args.crop)
        write_volume(Volume(res), args.freq_residual)
        report["freq_residual"] = str(args.freq_residual)
    return report


def cmd_noise(args) -> dict:
    g = load_generator(args.model)
    lr_patch, lr_stride = _stitch_defaults(args.model, args.lr_patch, args.lr_stride)
    hr = standardize(read_volume(args.ref))
    seed = 0 if args.seed is None else args.seed
    reports = noise_robustness_protocol(g, hr, PROTOCOL_SIGMAS, seed, lr_patch, lr_stride)
    return {"seed": seed, "reports": [{"sigma": s, **r.to_dict()} for s, r in zip(PROTOCOL_SIGMAS, reports)]}


def cmd_dwt(args) -> dict:
    v = read_volume(args.input)
    bands = dwt3_forward(v.data)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).name.split(".")[0]
    spacing = tuple(2 * s for s in v.spacing)
    files = {}
    for name, band in bands.items():
        path = out_dir / f"{stem}_{name}.rawv"
        write_volume(Volume(band, spacing, v.origin), path)
        files[name] = str(path)
    return {"bands": files, "shape": list(bands.lll.shape)}


def cmd_phantom(args) -> dict:
    seed = 0 if args.seed is None else args.seed
    size = args.size if len(args.size) == 3 else args.size[0]
    v = phantom(seed, size)
    write_volume(v, args.out)
    return {"output": str(args.out), "seed": seed, "shape": list(v.shape), "sum": float(v.data.sum(dtype=np.float64))}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="disgan", description="3D MRI super-resolution with a wavelet-informed discriminator.")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--deterministic", action="store_true",
                   help="force deterministic torch kernels (same as DISGAN_DETERMINISTIC=1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        # accept --seed after the subcommand as well
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        sp.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)

    t = sub.add_parser("train", help="train from a JSON config and a dataset manifest")
    t.add_argument("--config", required=True)
    t.add_argument("--manifest", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", default=None)
    t.add_argument("--iterations", type=int, default=None)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sr", help="super-resolve a volume with a trained checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lr-patch", type=int, default=None)
    s.add_argument("--lr-stride", type=int, default=None)
    s.add_argument("--batch-size", type=int, default=4)
    s.set_defaults(func=cmd_sr)

    e = sub.add_parser("eval", help="PSNR / SSIM / NRMSE of a test volume against a reference")
    e.add_argument("--ref", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--freq-residual", default=None, help="write the centred spectral residual here")
    e.add_argument("--crop", type=int, default=50)
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("noise", help="noise-robustness protocol at four noise levels")
    n.add_argument("--model", required=True)
    n.add_argument("--ref", required=True)
    n.add_argument("--lr-patch", type=int, default=None)
    n.add_argument("--lr-stride", type=int, default=None)
    n.set_defaults(func=cmd_noise)

    d = sub.add_parser("dwt", help="write the eight Haar subbands of a volume")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out-dir", required=True)
    d.set_defaults(func=cmd_dwt)

    ph = sub.add_parser("phantom", help="write a seeded synthetic phantom")
    ph.add_argument("--size", type=int, nargs="+", default=[64])
    ph.add_argument("--out", required=True)
    ph.set_defaults(func=cmd_phantom)

    for sp in (t, s, e, n, d, ph):
        common(sp)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command == "phantom" and len(args.size) not in (1, 3):
            raise UsageError("--size takes one or three integers")
    except UsageError as exc:
        print(f"disgan: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.deterministic or _rng.deterministic_requested():
        _rng.enable_determinism()
    try:
        payload = args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code below
        code = _exit_code(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"disgan: {type(exc).__name__}: {msg}", file=sys.stderr)
        return code
    _emit(payload)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
