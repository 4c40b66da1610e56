import json
import subprocess
import sys

import numpy as np
import pytest
import torch
from PIL import Image

from colonnet.cli import main
from colonnet.config import KEYS
from colonnet.model import load_checkpoint, save_checkpoint

SMALL_CFG = """
input_size = 64
backbone.name = tiny
unet.depth = 3
unet.base_channels = 8
train.detection_epochs = 1
train.classification_epochs = 1
train.segmentation_epochs = 1
train.learning_rate = 1e-3
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n", "30", "--size", "64", "--seed", "2", "--out", str(root / "data")]) == 0
    cfg = root / "run.cfg"
    cfg.write_text(SMALL_CFG + f"dataset.root = {root / 'data'}\noutput.dir = {root / 'run'}\n")
    assert main(["train", "--config", str(cfg)]) == 0
    return root


def test_train_outputs(trained):
    assert (trained / "run" / "checkpoint.bin").exists()
    report = json.loads((trained / "run" / "report.json").read_text())
    assert report["stage_order"] == ["detection", "classification", "segmentation"]
    assert [s["name"] for s in report["stages"]] == report["stage_order"]
    model, blob = load_checkpoint(trained / "run" / "checkpoint.bin")
    assert blob["seed"] == 0 and model.trained_stages == report["stage_order"]


def test_train_bad_key(tmp_path, caplog):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bakbone.name = tiny\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "bakbone.name" in caplog.text


def test_train_missing_dataset(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL_CFG + f"dataset.root = {tmp_path / 'none'}\noutput.dir = {tmp_path / 'o'}\n")
    assert main(["train", "--config", str(cfg)]) == 1


def test_evaluate(trained, tmp_path, capsys):
    args = ["evaluate", "--checkpoint", str(trained / "run" / "checkpoint.bin"),
            "--dataset", str(trained / "data"), "--split", "val", "--out", str(tmp_path)]
    assert main(args) == 0
    table = capsys.readouterr().out
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert set(metrics["classification"]) == {"accuracy", "recall", "f1"}
    assert set(metrics["detection"]) == {"avg_precision", "mean_box_iou"}
    assert set(metrics["segmentation"]) == {"dice", "mask_iou"}
    groups = [line.split()[0] for line in table.splitlines() if line[:1].isalpha() and not line.startswith("Metric")]
    assert groups == ["Classification", "Detection", "Segmentation"]
    first = (tmp_path / "metrics.json").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "metrics.json").read_bytes() == first


def test_evaluate_bad_checkpoint(tmp_path):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"not a checkpoint")
    assert main(["evaluate", "--checkpoint", str(junk), "--dataset", str(tmp_path)]) == 1


def _an_image(trained):
    return sorted((trained / "data" / "images").glob("*.png"))[0]


def test_predict_artifacts(trained, tmp_path):
    img = _an_image(trained)
    out = tmp_path / "pred"
    assert main(["predict", "--checkpoint", str(trained / "run" / "checkpoint.bin"),
                 "--image", str(img), "--out", str(out)]) == 0
    pngs = sorted(p.name for p in out.glob("*.png"))
    jsons = list(out.glob("*.json"))
    assert pngs == sorted(f"{img.stem}_{k}.png" for k in ("bbox", "mask", "cam"))
    assert len(jsons) == 1
    payload = json.loads(jsons[0].read_text())
    assert all(0.0 <= v <= 1.0 for v in payload["bbox"])
    assert 0.0 <= payload["bleed_prob"] <= 1.0
    mask = np.asarray(Image.open(out / f"{img.stem}_mask.png"))
    assert set(np.unique(mask)) <= {0, 255}
    first = (out / f"{img.stem}_mask.png").read_bytes()
    assert main(["predict", "--checkpoint", str(trained / "run" / "checkpoint.bin"),
                 "--image", str(img), "--out", str(out)]) == 0
    assert (out / f"{img.stem}_mask.png").read_bytes() == first


def test_predict_negative_suppresses_box(trained, tmp_path):
    model, blob = load_checkpoint(trained / "run" / "checkpoint.bin")
    with torch.no_grad():
        model.heads.classification.mlp[-1].bias.fill_(-100.0)
    ckpt = save_checkpoint(model, tmp_path / "neg.bin", blob["seed"], blob["extra"])
    img = _an_image(trained)
    assert main(["predict", "--checkpoint", str(ckpt), "--image", str(img), "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / f"{img.stem}.json").read_text())
    assert payload["label"] == 0 and payload["bbox_drawn"] is False
    assert (tmp_path / f"{img.stem}_mask.png").exists()
    drawn = np.asarray(Image.open(tmp_path / f"{img.stem}_bbox.png"))
    np.testing.assert_array_equal(drawn, np.asarray(Image.open(img).convert("RGB")))


def test_predict_unreadable_image(trained, tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_text("nope")
    assert main(["predict", "--checkpoint", str(trained / "run" / "checkpoint.bin"),
                 "--image", str(bad), "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("command", ["train", "evaluate", "predict", "synth"])
def test_help_lists_every_key(command):
    out = subprocess.run([sys.executable, "-m", "colonnet.cli", command, "--help"],
                         capture_output=True, text=True, check=True).stdout
    for key in KEYS:
        assert key in out


def test_synth_layout(tmp_path):
    assert main(["synth", "--n", "4", "--size", "32", "--fraction", "0.5", "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    assert len(list((tmp_path / "images").glob("*.png"))) == 4
    assert (tmp_path / "annotations.csv").read_text().splitlines()[0] == "id,label,x_min,y_min,x_max,y_max"
