import json

import numpy as np
import pytest

from msadnet.checkpoint import load_checkpoint
from msadnet.cli import main
from msadnet.data import load_pnm

from conftest import DESK_WIDTHS

SMALL = {
    "model": dict(input_size=32, enable_sam=False, bn_momentum=0.9, **{k: list(v) if isinstance(v, tuple) else v for k, v in DESK_WIDTHS.items()}),
    "train": {"base_lr": 0.001, "epochs": 2, "batch_size": 8},
    "synthetic": {"images_per_class": 6},
}


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


@pytest.fixture
def trained(tmp_path, small_cfg):
    out = tmp_path / "train"
    assert main(["train", "--config", small_cfg, "--out", str(out)]) == 0
    return out


def test_params_default_report(tmp_path, capsys):
    out = tmp_path / "p"
    assert main(["params", "--out", str(out)]) == 0
    text = (out / "params.txt").read_text()
    assert "100,576" in text and "184,480" in text and "83,904" in text
    assert "audit: PASS" in capsys.readouterr().out
    assert json.loads((out / "params.json").read_text())["layers"]
    assert (out / "resolved_config.json").exists()


def test_params_sam_override_drops_sam_sum(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["params", "--out", str(a)])
    main(["params", "--out", str(b), "--override", "enable_sam=false"])
    ja, jb = json.loads((a / "params.json").read_text()), json.loads((b / "params.json").read_text())
    sam_sum = sum(r["actual"] for r in ja["layers"] if r["layer"].startswith("sam."))
    assert ja["grand_total"] - jb["grand_total"] == sam_sum + 96 * 4


def test_snapshot_reproduces_params(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["params", "--out", str(a), "--override", "model.dense1_plan=[64,64,32,80,80,80]", "--seed", "3"])
    main(["params", "--out", str(b), "--config", str(a / "resolved_config.json")])
    assert (a / "params.json").read_text() == (b / "params.json").read_text()
    assert (a / "resolved_config.json").read_text() == (b / "resolved_config.json").read_text()


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["params", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "line 1" in capsys.readouterr().err
    assert main(["params", "--override", "nosuchkey=1", "--out", str(tmp_path / "x")]) == 1
    assert main(["params", "--override", "model.input_size=8", "--out", str(tmp_path / "x")]) == 1
    assert main(["params", "--override", "num_classes=3", "--out", str(tmp_path / "x")]) == 1  # ambiguous
    assert main(["params", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "x")]) == 2


def test_train_writes_artifacts(trained):
    for name in ("checkpoint.msad", "history.csv", "history.json", "split.json", "resolved_config.json"):
        assert (trained / name).exists()
    assert (trained / "history.csv").read_text().count("\n") == 3


def test_train_snapshot_rerun_is_bit_exact(tmp_path, trained):
    again = tmp_path / "again"
    assert main(["train", "--config", str(trained / "resolved_config.json"), "--out", str(again)]) == 0
    assert (trained / "checkpoint.msad").read_bytes() == (again / "checkpoint.msad").read_bytes()


def test_adaptive_schedule_logging(tmp_path, small_cfg, capsys):
    out = tmp_path / "ad"
    args = ["train", "--config", small_cfg, "--out", str(out), "--schedule", "adaptive",
            "--override", "train.epochs=8", "--override", "train.base_lr=1e-4"]
    assert main(args) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("epoch")]
    assert all("lr 0.0001 " in l for l in lines[:7])
    assert "lr 9.5e-05 " in lines[7]


def test_resume_reproduces_forward_outputs(tmp_path, trained, small_cfg):
    model, _ = load_checkpoint(trained / "checkpoint.msad")
    x = np.random.default_rng(0).uniform(0, 1, (2, 1, 32, 32)).astype(np.float32)
    ref = model.forward(x).data
    again, _ = load_checkpoint(trained / "checkpoint.msad")
    assert again.forward(x).data.tobytes() == ref.tobytes()
    out = tmp_path / "resumed"
    assert main(["train", "--config", small_cfg, "--out", str(out), "--resume", str(trained / "checkpoint.msad"),
                 "--override", "train.epochs=1"]) == 0
    assert main(["train", "--config", small_cfg, "--out", str(out), "--resume", str(trained / "checkpoint.msad"),
                 "--override", "model.sam_filters=4"]) == 1


def test_eval_reports(tmp_path, trained, capsys):
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.msad"), "--out", str(out), "--split", "all"]) == 0
    text = capsys.readouterr().out
    assert "macro avg" in text and "weighted avg" in text
    doc = json.loads((out / "metrics.json").read_text())
    assert sum(doc["per_class"][c]["support"] for c in doc["per_class"]) == 24
    assert (out / "confusion.csv").exists()
    # the test split is reconstructed from the settings stored in the checkpoint
    test_out = tmp_path / "ev_test"
    main(["eval", "--checkpoint", str(trained / "checkpoint.msad"), "--out", str(test_out)])
    a = json.loads((test_out / "metrics.json").read_text())
    b = json.loads((trained / "test_metrics.json").read_text())
    assert a["confusion"] == b["confusion"]


def test_eval_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.msad"), "--out", str(tmp_path / "e")]) == 2


def test_crossval_table(tmp_path, small_cfg, capsys):
    out = tmp_path / "cv"
    assert main(["crossval", "--config", small_cfg, "--out", str(out), "--k", "3", "--override", "train.epochs=1"]) == 0
    text = (out / "crossval.txt").read_text()
    assert text.count("fold") >= 3 and "Mean" in text and "±" in text
    assert len(json.loads((out / "crossval.json").read_text())["folds"]) == 3


def test_synth_and_gradcam(tmp_path, trained, capsys):
    s1, s2 = tmp_path / "s1", tmp_path / "s2"
    args = ["synth", "--override", "synthetic.images_per_class=2", "--override", "synthetic.image_size=32", "--seed", "4"]
    assert main(args + ["--out", str(s1)]) == 0
    assert main(args + ["--out", str(s2)]) == 0
    files = sorted((s1 / "dataset").rglob("*.pgm"))
    assert len(files) == 8 and (s1 / "dataset" / "manifest.json").exists()
    for f in files:
        assert f.read_bytes() == (s2 / "dataset" / f.relative_to(s1 / "dataset")).read_bytes()

    ck = str(trained / "checkpoint.msad")
    g = tmp_path / "g"
    assert main(["gradcam", "--checkpoint", ck, "--image", str(files[0]), "--out", str(g)]) == 0
    hm, ov = load_pnm(g / "map.pgm"), load_pnm(g / "overlay.ppm")
    assert (hm.channels, ov.channels) == (1, 3) and hm.height == 32
    gb = tmp_path / "gb"
    assert main(["gradcam", "--checkpoint", ck, "--image", str(files[0].parent), "--out", str(gb), "--class", "1"]) == 0
    assert len(list(gb.glob("*_map.pgm"))) == 2 and len(list(gb.glob("*_overlay.ppm"))) == 2
    capsys.readouterr()
    assert main(["gradcam", "--checkpoint", ck, "--image", str(files[0]), "--out", str(g), "--tap", "zzz"]) == 1
    assert "block5_conv" in capsys.readouterr().err
    assert main(["gradcam", "--checkpoint", ck, "--image", str(files[0]), "--out", str(g), "--class", "9"]) == 1


def test_synth_rejects_zero_classes(tmp_path):
    assert main(["synth", "--override", "synthetic.num_classes=0", "--out", str(tmp_path / "z")]) == 1


def test_threads_flag(tmp_path):
    assert main(["params", "--threads", "1", "--out", str(tmp_path / "t")]) == 0
