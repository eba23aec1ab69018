import json
import shutil

import jsonschema
import numpy as np
import pytest

from dmads.checkpoint import save_checkpoint
from dmads.cli import REPORT_SCHEMA, run_cli
from dmads.data import generate_synthetic, read_png, write_png
from dmads.model import DmADsNet, ModelConfig
from dmads.overlay import GREEN, RED, count_color


@pytest.fixture
def synth(tmp_path):
    root = tmp_path / "data"
    assert run_cli(["synth", "--out-dir", str(root), "--n", "3", "--size", "16", "--seed", "1"]) == 0
    return root


@pytest.fixture
def tiny_ckpt(tmp_path):
    cfg = ModelConfig(image_size=16, width_multiplier=0.125)
    path = tmp_path / "tiny.ckpt"
    save_checkpoint(DmADsNet(cfg).parameter_store(), cfg, path)
    return path


def test_synth_writes_pairs(synth):
    assert sorted(p.name for p in (synth / "images").iterdir()) == ["synth_0000.png", "synth_0001.png", "synth_0002.png"]
    assert read_png(synth / "masks" / "synth_0000.png").shape == (16, 16)


def test_eval_identical_dirs_scores_one(synth, tmp_path, capsys):
    report = tmp_path / "out" / "report.json"
    assert run_cli(["eval", "--pred-dir", str(synth / "masks"), "--gt-dir", str(synth / "masks"), "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert [s["dice"] for s in doc["samples"]] == [1.0, 1.0, 1.0]
    assert doc["comparable_to_paper_tables"] is False
    assert "3 samples" in capsys.readouterr().out


def test_eval_missing_prediction_is_data_error(synth, tmp_path, capsys):
    pred = tmp_path / "pred"
    shutil.copytree(synth / "masks", pred)
    (pred / "synth_0001.png").unlink()
    code = run_cli(["eval", "--pred-dir", str(pred), "--gt-dir", str(synth / "masks"), "--report", str(tmp_path / "r.json")])
    err = capsys.readouterr().err
    assert code == 2
    assert err.startswith("dmads:") and "synth_0001" in err


def test_infer_writes_binary_png(synth, tiny_ckpt, tmp_path):
    out = tmp_path / "mask.png"
    assert run_cli(["infer", "--ckpt", str(tiny_ckpt), "--input", str(synth / "images" / "synth_0000.png"), "--output", str(out)]) == 0
    mask = read_png(out)
    assert mask.shape == (16, 16)
    assert set(np.unique(mask)) <= {0, 255}


def test_overlay_colors(tmp_path):
    pred = np.zeros((8, 8), np.uint8)
    gt = np.zeros((8, 8), np.uint8)
    pred[:2] = 255
    gt[6:] = 255
    write_png(tmp_path / "p.png", pred)
    write_png(tmp_path / "g.png", gt)
    write_png(tmp_path / "img.png", np.full((8, 8, 3), 90, np.uint8))
    out = tmp_path / "o.png"
    args = ["overlay", "--pred", str(tmp_path / "p.png"), "--gt", str(tmp_path / "g.png"), "--out", str(out)]
    assert run_cli(args) == 0
    img = read_png(out)
    assert count_color(img, RED) == 16 and count_color(img, GREEN) == 16
    assert run_cli(args + ["--image", str(tmp_path / "img.png")]) == 0
    assert np.all(read_png(out)[3] == 90)


def test_overlay_size_mismatch(tmp_path):
    write_png(tmp_path / "p.png", np.zeros((8, 8), np.uint8))
    write_png(tmp_path / "g.png", np.zeros((4, 4), np.uint8))
    assert run_cli(["overlay", "--pred", str(tmp_path / "p.png"), "--gt", str(tmp_path / "g.png"), "--out", str(tmp_path / "o.png")]) == 2


def test_inspect_without_checkpoint(capsys):
    assert run_cli(["inspect", "--image-size", "32", "--width-multiplier", "0.125"]) == 0
    out = capsys.readouterr().out
    assert "parameters:" in out and "GMac" in out and "36.28M" in out


def test_inspect_checkpoint(tiny_ckpt, capsys):
    assert run_cli(["inspect", "--ckpt", str(tiny_ckpt)]) == 0
    n = sum(t.size for t in DmADsNet(ModelConfig(image_size=16, width_multiplier=0.125)).parameters())
    assert f"parameters: {n} " in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [[], ["fly"], ["infer", "--ckpt", "x"], ["synth", "--n", "three", "--out-dir", "d"]],
)
def test_usage_errors_exit_1(argv, capsys):
    assert run_cli(argv) == 1
    assert capsys.readouterr().err.startswith("dmads:")


def test_bad_config_exit_1(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("data_dir = d\nbogus = 1\n")
    assert run_cli(["train", "--config", str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err


def test_train_on_empty_dir_exit_2(tmp_path, capsys):
    run_cli(["synth", "--out-dir", str(tmp_path / "empty"), "--n", "0", "--size", "16"])
    cfg = tmp_path / "c.cfg"
    cfg.write_text("data_dir = empty\nimage_size = 16\n")
    assert run_cli(["train", "--config", str(cfg)]) == 2
    assert "no PNG images" in capsys.readouterr().err


def test_corrupt_checkpoint_exit_2(tmp_path, tiny_ckpt, synth, capsys):
    buf = bytearray(tiny_ckpt.read_bytes())
    buf[100] ^= 1
    tiny_ckpt.write_bytes(bytes(buf))
    code = run_cli(["infer", "--ckpt", str(tiny_ckpt), "--input", str(synth / "images" / "synth_0000.png"), "--output", str(tmp_path / "m.png")])
    assert code == 2
    assert "checksum" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_abort_exit_3(tmp_path, capsys):
    run_cli(["synth", "--out-dir", str(tmp_path / "d"), "--n", "3", "--size", "16"])
    cfg = tmp_path / "c.cfg"
    cfg.write_text("data_dir = d\nimage_size = 16\nwidth_multiplier = 0.25\nlr = 1e300\nmax_epochs = 5\nloss = bce\n")
    code = run_cli(["train", "--config", str(cfg)])
    assert code == 3
    assert "non-finite loss" in capsys.readouterr().err


@pytest.mark.slow
def test_end_to_end_overfit(tmp_path, capsys):
    """synth -> train -> infer -> eval on the training images."""
    data = tmp_path / "data"
    assert run_cli(["synth", "--out-dir", str(data), "--n", "10", "--size", "64", "--seed", "0"]) == 0
    cfg = tmp_path / "run.cfg"
    cfg.write_text("data_dir = data\nout_dir = out\nimage_size = 64\nwidth_multiplier = 0.0625\nmax_epochs = 150\n")
    assert run_cli(["train", "--config", str(cfg)]) == 0
    log = [json.loads(l) for l in (tmp_path / "out" / "train_log.jsonl").read_text().splitlines()]
    assert {r["kind"] for r in log} == {"epoch", "val"}
    pred = tmp_path / "pred"
    for img in sorted((data / "images").glob("*.png")):
        assert run_cli(["infer", "--ckpt", str(tmp_path / "out" / "best.ckpt"), "--input", str(img), "--output", str(pred / img.name)]) == 0
    report = tmp_path / "report.json"
    assert run_cli(["eval", "--pred-dir", str(pred), "--gt-dir", str(data / "masks"), "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert doc["mean"]["dice"] >= 0.95
