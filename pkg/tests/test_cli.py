import json

import numpy as np
import pytest

import oracles
from ptdit.checkpoint import load_checkpoint
from ptdit.cli import main, tokens_at
from ptdit.config import DataConfig, RunConfig, TrainConfig, save_config
from ptdit.io import read_tensor
from ptdit.model import build_model
from ptdit.train import read_loss_log


@pytest.fixture
def config(tmp_path):
    cfg = RunConfig(
        train=TrainConfig(steps=4, batch_size=4, lr=1e-3, checkpoint_every=2, ema_decay=0.9),
        data=DataConfig(generator="gaussian-blobs", num_classes=4),
        output_dir=str(tmp_path / "run"),
    )
    path = tmp_path / "run.yaml"
    save_config(cfg, path)
    return path, cfg


@pytest.fixture
def trained(tmp_path, config):
    path, _ = config
    assert main(["train", "--config", str(path)]) == 0
    return tmp_path / "run"


def test_tokens_at_schedule():
    assert [tokens_at(r) for r in (256, 512, 1024, 2048)] == [256, 1024, 4096, 16384]


def test_analyze_default_table(capsys, tmp_path):
    assert main(["analyze", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    header = lines[0].split("\t")
    rows = [dict(zip(header, line.split("\t"))) for line in lines[1:]]
    assert [r["N"] for r in rows] == ["256", "1024", "4096", "16384"]
    assert rows[0]["ratio"] == "1x2x2" and float(rows[0]["ratio_vs_global_pct"]) == pytest.approx(34.375)
    assert [r["status"] for r in rows] == ["ok", "ok", "ok", "UNRECONCILED"]
    data = json.loads((tmp_path / "complexity.json").read_text())
    assert len(data["rows"]) == 4 and data["errors"] == []


def test_analyze_empty_grid_succeeds(capsys):
    assert main(["analyze", "--resolutions", ""]) == 0
    assert capsys.readouterr().out == ""


def test_analyze_all_cells_failing_is_user_error(capsys):
    assert main(["analyze", "--resolutions", "", "--cell", "250:1x2x2"]) == 1
    assert "ERROR" in capsys.readouterr().out
    assert main(["analyze", "--resolutions", "300"]) == 1


def test_analyze_partial_failure_keeps_good_rows(capsys):
    assert main(["analyze", "--resolutions", "256", "--cell", "250:1x2x2", "--presets", "tiny,nope"]) == 0
    out, err = capsys.readouterr()
    assert out.count("\tok") >= 2 and "ERROR" in out and "nope" in err


def test_bad_flags_exit_one(capsys):
    assert main(["analyze", "--cell", "garbage"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train"]) == 1


def test_bad_config_exit_one(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("train: {lr: -1}\n")
    assert main(["train", "--config", str(p)]) == 1
    assert "lr" in capsys.readouterr().err


def test_train_zero_steps_is_initialization(tmp_path, config):
    path, cfg = config
    assert main(["train", "--config", str(path), "--steps", "0", "--output", str(tmp_path / "z")]) == 0
    ck = load_checkpoint(tmp_path / "z" / "ckpt_000000.ptck")
    ref = build_model(cfg.model_config(), seed=cfg.train.seed, dtype=np.float32).state_dict()
    assert all(np.array_equal(ck.params[k], ref[k]) for k in ref)
    assert (tmp_path / "z" / "loss.tsv").read_text() == ""


def test_train_outputs(trained):
    log = read_loss_log(trained / "loss.tsv")
    assert [s for s, _, _ in log] == [1, 2, 3, 4]
    assert all(np.isfinite(l) and lr == 1e-3 for _, l, lr in log)
    for name in ("ckpt_000000", "ckpt_000002", "ckpt_000004", "last", "ema"):
        assert (trained / f"{name}.ptck").exists()
    assert load_checkpoint(trained / "last.ptck").step == 4


def test_resume_reproduces_uninterrupted_run(tmp_path, config, trained):
    path, _ = config
    assert main(["train", "--config", str(path), "--steps", "2", "--output", str(tmp_path / "a")]) == 0
    assert main(["train", "--resume", str(tmp_path / "a" / "last.ptck"), "--steps", "4", "--output", str(tmp_path / "a")]) == 0
    straight = read_loss_log(trained / "loss.tsv")
    resumed = read_loss_log(tmp_path / "a" / "loss.tsv")
    assert resumed == straight
    a, b = load_checkpoint(trained / "last.ptck"), load_checkpoint(tmp_path / "a" / "last.ptck")
    for group in ("params", "ema", "optim"):
        assert all(np.array_equal(getattr(a, group)[k], getattr(b, group)[k]) for k in getattr(a, group))


def sample(ckpt, out, *extra):
    args = ["sample", "--checkpoint", str(ckpt), "--class-label", "1", "--steps", "4", "--out", str(out), *extra]
    assert main(args) == 0
    return read_tensor(out.with_suffix(".ptt"))


def test_sample_deterministic(tmp_path, trained):
    ck = trained / "last.ptck"
    a = sample(ck, tmp_path / "a", "--seed", "3", "--num", "2")
    b = sample(ck, tmp_path / "b", "--seed", "3", "--num", "2")
    c = sample(ck, tmp_path / "c", "--seed", "4", "--num", "2")
    assert a.shape == (2, 1, 1, 8, 8) and a.dtype == np.float64
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert (tmp_path / "a.png").stat().st_size > 0


def test_guidance_one_matches_conditional_only(tmp_path, trained):
    ck = trained / "last.ptck"
    a = sample(ck, tmp_path / "a", "--guidance", "1.0")
    b = sample(ck, tmp_path / "b", "--conditional-only")
    assert np.abs(a - b).max() < 1e-10


def test_sample_with_ema_weights(tmp_path, trained):
    a = sample(trained / "last.ptck", tmp_path / "a", "--ema")
    b = sample(trained / "ema.ptck", tmp_path / "b")
    np.testing.assert_array_equal(a, b)


def test_sample_user_errors(tmp_path, trained, capsys):
    ck = str(trained / "last.ptck")
    assert main(["sample", "--checkpoint", ck, "--prompt", "a cat"]) == 1
    assert "class-conditional" in capsys.readouterr().err
    assert main(["sample", "--checkpoint", ck, "--class-label", "0", "--steps", "0"]) == 1
    assert main(["sample", "--checkpoint", str(tmp_path / "missing.ptck"), "--class-label", "0"]) == 1


def test_profile_report_matches_oracle(tmp_path, trained):
    out = tmp_path / "prof"
    assert main(["profile", "--checkpoint", str(trained / "last.ptck"), "--out", str(out), "--radius", "1"]) == 0
    amap = np.loadtxt(out / "attention_map.tsv", delimiter="\t")
    assert amap.shape == (16, 16)
    np.testing.assert_allclose(amap.sum(axis=1), 1.0, atol=1e-6)
    report = json.loads((out / "redundancy.json").read_text())
    neigh, dist = oracles.cosine_redundancy(amap, (4, 4), (2, 2), 1)
    np.testing.assert_allclose(report["neighbor_similarity"], neigh, atol=1e-10)
    np.testing.assert_allclose(report["distant_similarity"], dist, atol=1e-10)
    assert np.load(out / "attention_map.npz")["weights"].shape[-2:] == (16, 16)


def test_profile_layer_out_of_range(tmp_path, trained, capsys):
    assert main(["profile", "--checkpoint", str(trained / "last.ptck"), "--layer", "99", "--out", str(tmp_path / "p")]) == 1
    assert "valid layers are 0..1" in capsys.readouterr().err


def test_inspect_checkpoint(trained, capsys):
    assert main(["inspect-checkpoint", str(trained / "last.ptck")]) == 0
    out = capsys.readouterr().out
    assert "meta.step = 4" in out and "params/" in out
    assert main(["inspect-checkpoint", str(trained / "nope.ptck")]) == 1
