import numpy as np
import pytest

from conftest import random_rotation, sphere_cloud
from simgrasp.evaluation import (EvalConfig, ap_from_successes, binary_f1, evaluate_dataset, grasp_success,
                                 instance_miou, precision_at_k, running_precision, success_row, top_k_success_rate)
from simgrasp.grasp import Grasp
from simgrasp.scene import PointCloud

CENTER = np.array([0.0, 0.0, 0.03])


SMALL = np.array([0.0, 0.0, 0.015])


def small_sphere():
    # fits inside the finger length, so a centered grasp clears the base
    return sphere_cloud(0.015, SMALL)


def sphere_grasp(score=0.5):
    return Grasp(SMALL.copy(), np.array([0.0, 0.0, -1.0]), np.array([1.0, 0.0, 0.0]), 0.04, 0.015, score)


def grasps_around_sphere(rng, n):
    out = []
    for _ in range(n):
        rot = random_rotation(rng)
        if rot[0, 1] < 0:
            rot[:, 1:] *= -1
        out.append(Grasp(CENTER + rng.normal(size=3) * 0.008, rot[:, 0], rot[:, 1], 0.075, 0.0,
                         float(rng.uniform())))
    return out


def test_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(k=0)
    with pytest.raises(ValueError):
        EvalConfig(mu_thresholds=(0.4, 0.2))


def test_running_precision_golden():
    assert running_precision([1, 1, 0, 1, 0], 5) == pytest.approx((1 + 1 + 2 / 3 + 3 / 4 + 3 / 5) / 5)
    assert running_precision([1, 1, 0, 1, 0], 5) == pytest.approx(0.8033333333333333)
    # short lists are padded with failures
    assert running_precision([1], 4) == pytest.approx((1 + 1 / 2 + 1 / 3 + 1 / 4) / 4)
    assert running_precision([], 3) == 0.0


def test_ap_bounds():
    cfg = EvalConfig(k=5)
    assert ap_from_successes(np.ones((5, 6)), cfg)[0] == 1.0
    assert ap_from_successes(np.zeros((5, 6)), cfg)[0] == 0.0
    rng = np.random.default_rng(0)
    for _ in range(50):
        ap, per = ap_from_successes(rng.uniform(size=(int(rng.integers(1, 9)), 6)) < 0.5, cfg)
        assert 0.0 <= ap <= 1.0 and np.all((per >= 0) & (per <= 1))


def test_success_examples(gripper):
    cloud = small_sphere()
    assert grasp_success(sphere_grasp(), cloud, gripper, 0.2)
    free_space = Grasp(np.array([0.3, 0.3, 0.3]), np.array([0, 0, -1.0]), np.array([1.0, 0, 0]), 0.05, 0.0)
    assert not success_row(free_space, cloud, gripper, EvalConfig().mu_thresholds).any()
    # the same perfect grasp with an obstacle point inside the fingers' volume
    blocker = PointCloud(np.vstack([cloud.points, [[-0.025, 0.0, 0.015]]]), np.zeros((len(cloud) + 1, 6)),
                         np.vstack([cloud.normals, [[0, 0, 1.0]]]))
    assert not grasp_success(sphere_grasp(), blocker, gripper, 1.2)


def test_success_monotone_in_mu(gripper):
    rng = np.random.default_rng(1)
    cloud = sphere_cloud(0.03, CENTER)
    mus = EvalConfig().mu_thresholds
    rows = np.array([success_row(g, cloud, gripper, mus) for g in grasps_around_sphere(rng, 60)])
    assert rows.any() and not rows.all()
    assert np.all(np.diff(rows.astype(int), axis=1) >= 0)
    ap, per = ap_from_successes(rows)
    assert np.all(np.diff(per) >= -1e-15)


def test_precision_at_k_rank_only(gripper):
    rng = np.random.default_rng(2)
    cloud = sphere_cloud(0.03, CENTER)
    gs = grasps_around_sphere(rng, 30)
    cfg = EvalConfig(k=10)
    base = precision_at_k(gs, cloud, cfg, gripper)
    for g in gs:
        g.score = float(np.exp(3 * g.score) + 1)
    again = precision_at_k(gs[::-1], cloud, cfg, gripper)
    assert base[0] == again[0]
    np.testing.assert_array_equal(base[1], again[1])


def test_precision_at_k_empty_warns(gripper):
    with pytest.warns(RuntimeWarning):
        ap, per = precision_at_k([], sphere_cloud(), EvalConfig(), gripper)
    assert ap == 0.0 and np.all(per == 0)


def test_dataset_manual_recomputation(gripper):
    rng = np.random.default_rng(3)
    cloud = sphere_cloud(0.03, CENTER)
    cfg = EvalConfig(k=6)
    preds = {f"s{i}": grasps_around_sphere(rng, 4 + 3 * i) for i in range(3)}
    clouds = {k: cloud for k in preds}
    summary = evaluate_dataset(preds, clouds, cfg, gripper)
    # spreadsheet-style: rank, mark success per threshold, running precision per column
    manual = []
    for sid in preds:
        ranked = sorted(preds[sid], key=lambda g: -g.score)[:cfg.k]
        cols = []
        for mu in cfg.mu_thresholds:
            hits = [grasp_success(g, cloud, gripper, mu) for g in ranked] + [False] * (cfg.k - len(ranked))
            cols.append(sum(sum(hits[:i + 1]) / (i + 1) for i in range(cfg.k)) / cfg.k)
        manual.append(cols)
    manual = np.array(manual)
    np.testing.assert_allclose(summary.ap_per_mu, manual, atol=1e-12)
    np.testing.assert_allclose(summary.ap, manual.mean(axis=1), atol=1e-12)
    m = summary.means()
    assert m["AP"] == pytest.approx(manual.mean())
    assert m["AP_0.8"] == pytest.approx(manual[:, 3].mean())
    assert m["AP_0.4"] == pytest.approx(manual[:, 1].mean())


def test_dataset_averaging_and_missing(gripper):
    cloud = small_sphere()
    cfg = EvalConfig(k=1)
    good = [sphere_grasp()]
    one = evaluate_dataset({"a": good}, {"a": cloud}, cfg, gripper)
    assert one.ap[0] == 1.0
    assert one.means()["AP"] == pytest.approx(one.ap[0])
    with pytest.warns(RuntimeWarning):
        two = evaluate_dataset({"a": good}, {"a": cloud, "b": cloud}, cfg, gripper)
    assert two.ap[1] == 0.0
    assert two.means()["AP"] == pytest.approx(one.ap[0] / 2)
    with pytest.raises(ValueError):
        evaluate_dataset({}, {}, cfg, gripper)


def test_summary_outputs(gripper):
    cloud = small_sphere()
    s = evaluate_dataset({"a": [sphere_grasp()]}, {"a": cloud}, EvalConfig(k=2), gripper)
    lines = s.to_csv().splitlines()
    assert lines[0] == "scene,AP,AP_0.8,AP_0.4"
    assert lines[-1].startswith("mean,")
    table = s.to_table()
    assert "AP_0.8" in table and "mean" in table
    with pytest.raises(KeyError):
        s.column(0.5)


def test_metric_helpers(gripper):
    assert binary_f1([1, 1, 0, 0], [1, 0, 1, 0]) == pytest.approx(0.5)
    assert binary_f1([0, 0], [0, 0]) == 1.0
    truth = np.array([0, 1, 1, 2, 2, 2])
    assert instance_miou(np.array([0, 5, 5, 3, 3, 3]), truth) == 1.0
    assert instance_miou(np.array([0, 1, 1, 1, 2, 2]), truth) == pytest.approx((2 / 3 + 2 / 3) / 2)
    assert instance_miou(np.zeros(6, int), truth) == 0.0
    cloud = small_sphere()
    assert top_k_success_rate([], cloud, gripper) == 0.0
    assert top_k_success_rate([sphere_grasp()], cloud, gripper) == 1.0
