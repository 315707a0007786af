import json

import numpy as np
import pytest

from simgrasp.cli import main, verify_manifest
from simgrasp.dataset import evaluation_cloud
from simgrasp.evaluation import EvalConfig, success_row
from simgrasp.grasp import Grasp
from simgrasp.io import read_ply, read_scene, write_grasps
from simgrasp.model import GraspNetEstimator

TINY_MODEL = """\
model.sa1 = [32, 0.05, 8, [8, 8]]
model.sa2 = [8, 0.12, 8, [8, 16]]
model.fp2 = [16]
model.fp1 = [16]
model.head_hidden = [8]
scene.n_points = 256
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.txt").write_text(TINY_MODEL)
    cfg = str(root / "cfg.txt")
    assert main(["--seed", "3", "gen", "--scenes", "2", "--objects", "2", "--out", str(root / "data"),
                 "--config", cfg]) == 0
    assert main(["label", "--in", str(root / "data"), "--config", cfg]) == 0
    assert main(["train", "--data", str(root / "data"), "--config", cfg, "--epochs", "2",
                 "--out", str(root / "ckpt" / "m.ckpt")]) == 0
    assert main(["infer", "--cloud", str(root / "data"), "--ckpt", str(root / "ckpt" / "m.ckpt"),
                 "--out", str(root / "pred")]) == 0
    return root


def test_gen_single_empty_scene(tmp_path):
    assert main(["gen", "--scenes", "1", "--objects", "0", "--out", str(tmp_path / "d")]) == 0
    files = sorted(p.name for p in (tmp_path / "d").iterdir())
    assert files == ["config.txt", "manifest.json", "scene_0000.json", "scene_0000.ply"]
    scene = json.loads((tmp_path / "d" / "scene_0000.json").read_text())
    assert scene["objects"] == []
    assert np.all(read_ply(tmp_path / "d" / "scene_0000.ply").semantic == 0)


def test_gen_reruns_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["--seed", "11", "gen", "--scenes", "2", "--objects", "3", "--out", str(tmp_path / name)]) == 0
    for f in ("scene_0000.ply", "scene_0001.json", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert verify_manifest(tmp_path / "a") == []
    (tmp_path / "a" / "scene_0001.json").write_text("{}")
    assert verify_manifest(tmp_path / "a") == ["scene_0001.json"]


def test_pipeline_outputs(pipeline):
    labels = pipeline / "data" / "labels"
    assert (labels / "scene_0000.grasps.json").exists() and (labels / "config.txt").exists()
    ckpt = pipeline / "ckpt"
    assert {"m.ckpt", "m.history.csv", "m.config.txt"} <= {p.name for p in ckpt.iterdir()}
    hist = (ckpt / "m.history.csv").read_text().splitlines()
    assert hist[0].startswith("epoch,lr,loss") and len(hist) == 3
    preds = json.loads((pipeline / "pred" / "scene_0000.json").read_text())
    assert isinstance(preds, list)


def test_eval_writes_table(pipeline, capsys):
    out = pipeline / "eval" / "summary.csv"
    assert main(["eval", "--pred", str(pipeline / "pred"), "--scenes", str(pipeline / "data"),
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "scene,AP,AP_0.8,AP_0.4" and lines[-1].startswith("mean,") and len(lines) == 4
    assert "mean" in capsys.readouterr().out
    assert out.with_suffix(".txt").exists()


def test_infer_single_file(pipeline):
    out = pipeline / "single.json"
    assert main(["infer", "--cloud", str(pipeline / "data" / "scene_0001.ply"),
                 "--ckpt", str(pipeline / "ckpt" / "m.ckpt"), "--out", str(out)]) == 0
    assert isinstance(json.loads(out.read_text()), list)


def test_table_only_scene_label_and_infer(pipeline, tmp_path):
    cfg = str(pipeline / "cfg.txt")
    assert main(["gen", "--scenes", "1", "--objects", "0", "--out", str(tmp_path / "empty"), "--config", cfg]) == 0
    assert main(["label", "--in", str(tmp_path / "empty"), "--config", cfg]) == 0
    assert json.loads((tmp_path / "empty" / "labels" / "scene_0000.grasps.json").read_text()) == []
    # a checkpoint whose segmentation puts every point on the table
    est = GraspNetEstimator.load(pipeline / "ckpt" / "m.ckpt")
    est.net_.params["seg.out.1.b"][:2] = [50.0, -50.0]
    est.save(tmp_path / "bg.ckpt")
    out = tmp_path / "p.json"
    assert main(["infer", "--cloud", str(tmp_path / "empty" / "scene_0000.ply"),
                 "--ckpt", str(tmp_path / "bg.ckpt"), "--out", str(out)]) == 0
    assert json.loads(out.read_text()) == []


def test_train_with_predicted_collision_targets(pipeline, tmp_path):
    (tmp_path / "cfg.txt").write_text(TINY_MODEL + 'train.collision_targets = "predicted"\n')
    out = tmp_path / "m.ckpt"
    assert main(["train", "--data", str(pipeline / "data"), "--config", str(tmp_path / "cfg.txt"), "--epochs", "1",
                 "--out", str(out)]) == 0
    assert GraspNetEstimator.load(out).collision_targets == "predicted"
    assert 'train.collision_targets = "predicted"' in out.with_suffix(".config.txt").read_text()


def test_label_rerun_identical_and_filtered(pipeline, tmp_path):
    assert main(["label", "--in", str(pipeline / "data"), "--config", str(pipeline / "cfg.txt"),
                 "--out", str(tmp_path / "again")]) == 0
    for f in sorted((pipeline / "data" / "labels").iterdir()):
        assert (tmp_path / "again" / f.name).read_bytes() == f.read_bytes()
        if f.name.endswith(".grasps.json"):
            assert all(g["score"] > 0.5 for g in json.loads(f.read_text()))


def test_eval_perfect_predictions(pipeline, tmp_path, gripper):
    data = pipeline / "data"
    pred_dir = tmp_path / "perfect"
    pred_dir.mkdir()
    mus = EvalConfig().mu_thresholds
    counts = []
    for stem in ("scene_0000", "scene_0001"):
        cloud = evaluation_cloud(read_scene(data / f"{stem}.json"))
        grasps = [Grasp.from_dict(g) for g in json.loads((data / "labels" / f"{stem}.grasps.json").read_text())]
        good = [g for g in grasps if success_row(g, cloud, gripper, mus).all()]
        assert good
        write_grasps(pred_dir / f"{stem}.json", good)
        counts.append(len(good))
    (tmp_path / "k.txt").write_text(f"eval.k = {min(counts)}\n")
    out = tmp_path / "s.csv"
    assert main(["eval", "--pred", str(pred_dir), "--scenes", str(data), "--config", str(tmp_path / "k.txt"),
                 "--out", str(out)]) == 0
    assert out.read_text().splitlines()[-1] == "mean,1.0000,1.0000,1.0000"


def test_smoke_pipeline_deterministic(pipeline, tmp_path):
    root = tmp_path
    cfg = str(pipeline / "cfg.txt")
    assert main(["--seed", "3", "gen", "--scenes", "2", "--objects", "2", "--out", str(root / "data"),
                 "--config", cfg]) == 0
    assert main(["label", "--in", str(root / "data"), "--config", cfg]) == 0
    assert main(["train", "--data", str(root / "data"), "--config", cfg, "--epochs", "2",
                 "--out", str(root / "ckpt" / "m.ckpt")]) == 0
    assert main(["infer", "--cloud", str(root / "data"), "--ckpt", str(root / "ckpt" / "m.ckpt"),
                 "--out", str(root / "pred")]) == 0
    for rel in ("data/scene_0001.ply", "data/labels/scene_0000.grasps.json", "ckpt/m.ckpt",
                "ckpt/m.history.csv", "pred/scene_0000.json", "pred/scene_0001.json"):
        assert (root / rel).read_bytes() == (pipeline / rel).read_bytes(), rel


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    (tmp_path / "bad.txt").write_text("train.nope = 1\n")
    assert main(["gen", "--scenes", "1", "--out", str(tmp_path / "x"), "--config", str(tmp_path / "bad.txt")]) == 1
    assert main(["gen", "--scenes", "1", "--out", str(tmp_path / "x"), "--config", str(tmp_path / "nofile")]) == 1
    assert "error" in capsys.readouterr().err


def test_runtime_errors_exit_2(pipeline, tmp_path, capsys):
    assert main(["label", "--in", str(tmp_path)]) == 2
    assert main(["infer", "--cloud", str(pipeline / "data"), "--ckpt", str(tmp_path / "none.ckpt"),
                 "--out", str(tmp_path / "p")]) == 2
    raw = bytearray((pipeline / "ckpt" / "m.ckpt").read_bytes())
    raw[8] = 7
    (tmp_path / "v.ckpt").write_bytes(bytes(raw))
    assert main(["infer", "--cloud", str(pipeline / "data"), "--ckpt", str(tmp_path / "v.ckpt"),
                 "--out", str(tmp_path / "p")]) == 2
    assert "version" in capsys.readouterr().err


def test_unwritable_output_exit_2(tmp_path, capsys):
    (tmp_path / "file").write_text("x")
    assert main(["gen", "--scenes", "1", "--objects", "0", "--out", str(tmp_path / "file" / "sub")]) == 2
    assert "cannot create output directory" in capsys.readouterr().err
