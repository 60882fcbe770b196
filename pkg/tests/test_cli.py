import json
import math
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest
import torch

import disgan.trainer as trainer_mod
from disgan.cli import run
from disgan.discriminator import DiscriminatorConfig
from disgan.generator import GeneratorConfig
from disgan.perceptual import FeatureExtractorConfig
from disgan.trainer import Trainer, TrainerConfig, checkpoint_save
from disgan.volume import Volume, phantom, read_volume, standardize, write_volume

DOCS = Path(__file__).resolve().parents[1] / "docs"
CONFIGS = Path(__file__).resolve().parents[1] / "configs"
OUT_SCHEMA = json.loads((DOCS / "cli-output.schema.json").read_text())
CFG_SCHEMA = json.loads((DOCS / "config.schema.json").read_text())


def check(payload, kind):
    schema = {**OUT_SCHEMA, "$ref": f"#/$defs/{kind}"}
    jsonschema.validate(payload, schema)


def invoke(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def ok(capsys, *argv):
    code, out, err = invoke(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


def tiny_dict(**kw):
    cfg = TrainerConfig(
        batch_size=2, iterations=4, seed=3, checkpoint_every=2, hr_patch=16, patch_stride=16,
        generator=GeneratorConfig(num_vrrdb=1, base_filters=4, growth_channels=4),
        discriminator=DiscriminatorConfig(levels=2, channels=[4, 8]),
        extractor=FeatureExtractorConfig(widths=[2, 4, 6, 8]),
    ).to_dict()
    cfg.update(kw)
    return cfg


@pytest.fixture(scope="module")
def model(tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    t = Trainer(TrainerConfig.from_dict(tiny_dict()), [standardize(phantom(1, 32))])
    t.step()
    path = d / "m.ckpt"
    checkpoint_save(t, path)
    return path


@pytest.fixture(scope="module")
def ref(tmp_path_factory):
    path = tmp_path_factory.mktemp("ref") / "ref.nii"
    write_volume(phantom(5, 32), path)
    return path


# ---- schemas


@pytest.mark.parametrize("name", ["desk.json", "full.json"])
def test_shipped_configs_validate(name):
    d = json.loads((CONFIGS / name).read_text())
    jsonschema.validate(d, CFG_SCHEMA)
    TrainerConfig.from_dict(d)


def test_config_schema_rejects_unknown_and_missing():
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"batch_size": 4, "bogus": 1}, CFG_SCHEMA)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"lr": 1e-4}, CFG_SCHEMA)


# ---- subcommands


def test_phantom(capsys, tmp_path):
    payload = ok(capsys, "phantom", "--seed", 7, "--size", 32, "--out", tmp_path / "p.nii")
    check(payload, "phantom")
    v = read_volume(tmp_path / "p.nii")
    np.testing.assert_array_equal(v.data, phantom(7, 32).data)
    assert payload["sum"] == pytest.approx(float(v.data.sum(dtype=np.float64)), abs=1e-9)


def test_phantom_global_seed_flag(capsys, tmp_path):
    a = ok(capsys, "--seed", 9, "phantom", "--size", 32, "--out", tmp_path / "a.nii")
    b = ok(capsys, "phantom", "--seed", 9, "--size", 32, "--out", tmp_path / "b.nii")
    assert a["sum"] == b["sum"] and a["seed"] == 9
    assert (tmp_path / "a.nii").read_bytes() == (tmp_path / "b.nii").read_bytes()


def test_eval_identical(capsys, ref):
    payload = ok(capsys, "eval", "--ref", ref, "--test", ref)
    check(payload, "report")
    assert payload["psnr_db"] == "inf" and payload["ssim"] == 1.0 and payload["nrmse"] == 0.0


def test_eval_freq_residual(capsys, tmp_path):
    a, b = tmp_path / "a.nii", tmp_path / "b.nii"
    write_volume(phantom(1, 64), a)
    write_volume(phantom(2, 64), b)
    payload = ok(capsys, "eval", "--ref", a, "--test", b, "--freq-residual", tmp_path / "r.rawv")
    check(payload, "report")
    assert math.isfinite(payload["psnr_db"])
    assert read_volume(tmp_path / "r.rawv").shape == (50, 50, 50)


def test_dwt_constant(capsys, tmp_path):
    c = 0.75
    write_volume(Volume(np.full((8, 6, 4), c)), tmp_path / "c.nii")
    payload = ok(capsys, "dwt", "--in", tmp_path / "c.nii", "--out-dir", tmp_path / "bands")
    check(payload, "dwt")
    assert payload["shape"] == [4, 3, 2]
    for name, path in payload["bands"].items():
        assert path.endswith(f"_{name}.rawv")
        data = read_volume(path).data
        if name == "lll":
            np.testing.assert_allclose(data, 2 * math.sqrt(2) * c, rtol=1e-6)
        else:
            np.testing.assert_allclose(data, 0.0, atol=1e-6)


def test_sr(capsys, tmp_path, model):
    write_volume(phantom(3, 32), tmp_path / "lr.nii")
    payload = ok(capsys, "sr", "--model", model, "--in", tmp_path / "lr.nii", "--out", tmp_path / "sr.nii")
    check(payload, "sr")
    assert payload["shape"] == [64, 64, 64] and payload["lr_patch"] == 8
    assert read_volume(tmp_path / "sr.nii").spacing == (0.5, 0.5, 0.5)
    ok(capsys, "sr", "--model", model, "--in", tmp_path / "lr.nii", "--out", tmp_path / "sr2.nii")
    assert (tmp_path / "sr.nii").read_bytes() == (tmp_path / "sr2.nii").read_bytes()


def test_noise_prints_four_tagged_reports(capsys, model, ref):
    payload = ok(capsys, "noise", "--model", model, "--ref", ref, "--seed", 4, "--deterministic")
    check(payload, "noise")
    assert [r["sigma"] for r in payload["reports"]] == [0.0, 0.1, 0.2, 0.3]
    for r in payload["reports"]:
        check({k: v for k, v in r.items() if k != "sigma"}, "report")
    again = ok(capsys, "noise", "--model", model, "--ref", ref, "--seed", 4, "--deterministic")
    assert again == payload
    other = ok(capsys, "noise", "--model", model, "--ref", ref, "--seed", 5)
    assert other["reports"][0] == payload["reports"][0]
    assert other["reports"][3] != payload["reports"][3]


def test_train(capsys, tmp_path):
    for i, seed in enumerate((1, 2)):
        write_volume(phantom(seed, 32), tmp_path / f"v{i}.nii")
    (tmp_path / "m.json").write_text(json.dumps([{"path": "v0.nii", "split": "train"},
                                                  {"path": "v1.nii", "split": "test"}]))
    (tmp_path / "c.json").write_text(json.dumps(tiny_dict()))
    payload = ok(capsys, "train", "--config", tmp_path / "c.json", "--manifest", tmp_path / "m.json",
                 "--out-dir", tmp_path / "run", "--seed", 11)
    check(payload, "train")
    assert payload["seed"] == 11 and payload["iterations"] == 4
    assert len((tmp_path / "run" / "train_log.jsonl").read_text().splitlines()) == 4


# ---- exit codes


@pytest.mark.parametrize("argv", [[], ["bogus"], ["eval", "--ref", "x"], ["phantom", "--out", "p.nii", "--wat"],
                                  ["phantom", "--size", "31", "--out", "p.nii"]])
def test_usage_errors_exit_1(capsys, tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    code, out, err = invoke(capsys, *argv)
    assert code == 1 and out == ""
    assert len(err.strip().splitlines()) == 1


def test_data_errors_exit_2(capsys, tmp_path, ref):
    (tmp_path / "bad.nii").write_bytes(b"\x00" * 400)
    const = tmp_path / "const.nii"
    write_volume(Volume(np.ones((8, 8, 8))), const)
    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    cases = [
        ["eval", "--ref", tmp_path / "missing.nii", "--test", ref],
        ["eval", "--ref", tmp_path / "bad.nii", "--test", ref],
        ["eval", "--ref", const, "--test", const],
        ["eval", "--ref", ref, "--test", const],
        ["sr", "--model", tmp_path / "junk.ckpt", "--in", ref, "--out", tmp_path / "o.nii"],
        ["dwt", "--in", tmp_path / "x.txt", "--out-dir", tmp_path],
    ]
    for argv in cases:
        code, out, err = invoke(capsys, *argv)
        assert code == 2, (argv, err)
        assert out == "" and len(err.strip().splitlines()) == 1


def test_numerical_abort_exit_3(capsys, tmp_path, monkeypatch):
    write_volume(phantom(1, 32), tmp_path / "v.nii")
    (tmp_path / "m.json").write_text(json.dumps([{"path": "v.nii", "split": "train"}]))
    (tmp_path / "c.json").write_text(json.dumps(tiny_dict()))
    monkeypatch.setattr(trainer_mod, "l1_pixel", lambda a, b: torch.tensor(float("inf")))
    code, out, err = invoke(capsys, "train", "--config", tmp_path / "c.json", "--manifest", tmp_path / "m.json",
                            "--out-dir", tmp_path / "run")
    assert code == 3 and out == ""
    assert "pixel" in err and len(err.strip().splitlines()) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "disgan", "phantom", "--size", "32", "--out", str(tmp_path / "p.nii")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["shape"] == [32, 32, 32]
    proc = subprocess.run([sys.executable, "-m", "disgan", "--nope"], capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stdout == ""
