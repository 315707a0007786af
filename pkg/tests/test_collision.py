import warnings

import numpy as np
import pytest

from conftest import random_rotation
from scipy.spatial import cKDTree

from simgrasp.collision import (CollisionBalanceWarning, CollisionLabel, SpatialGrid, build_grid, check_collision,
                                collision_free_many, generate_collision_dataset, gripper_occupancy, rebalance)
from simgrasp.grasp import Grasp, stack_grasps
from simgrasp.scene import PointCloud, generate_scene, sample_scene_surface


def brute_force_collision(grasp, points, gripper):
    """Independent point-in-box oracle over every point, world frame."""
    a, c = grasp.v_A, grasp.v_C
    b = np.cross(a, c)
    d = points - grasp.t
    x, y, z = d @ a, d @ c, d @ b
    hl, th, hh, bd, w = gripper.finger_length / 2, gripper.finger_thickness, gripper.finger_height / 2, \
        gripper.base_depth, grasp.width
    in_z = np.abs(z) <= hh
    left = (np.abs(x) <= hl) & (np.abs(y + (w / 2 + th / 2)) <= th / 2)
    right = (np.abs(x) <= hl) & (np.abs(y - (w / 2 + th / 2)) <= th / 2)
    base = (np.abs(x + hl + bd / 2) <= bd / 2) & (np.abs(y) <= w / 2 + th)
    closing = (np.abs(x) <= hl) & (np.abs(y) < w / 2) & in_z
    occupied = in_z & (left | right | base) & ~closing
    return int(not occupied.any()), int(closing.sum())


def random_grasps(rng, n, center, spread=0.06):
    out = []
    for _ in range(n):
        rot = random_rotation(rng)
        if rot[0, 1] < 0:
            rot[:, 1:] *= -1
        out.append(Grasp(center + rng.uniform(-spread, spread, 3), rot[:, 0], rot[:, 1],
                         float(rng.uniform(0.005, 0.085)), 0.01))
    return out


def test_occupancy_identity_pose(gripper):
    g = Grasp(np.zeros(3), np.array([0, 0, 1.0]), np.array([1.0, 0, 0]), 0.08, 0.0)
    boxes = gripper_occupancy(g, gripper)
    np.testing.assert_allclose(boxes[0].center, [-0.045, 0, 0], atol=1e-15)
    np.testing.assert_allclose(boxes[1].center, [0.045, 0, 0], atol=1e-15)
    np.testing.assert_allclose(boxes[2].center, [0, 0, -0.03], atol=1e-15)


def test_occupancy_rigid(gripper):
    rng = np.random.default_rng(0)
    g = Grasp(np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), 0.05, 0.0)
    ref = gripper_occupancy(g, gripper)
    for _ in range(10):
        rot, tr = random_rotation(rng), rng.normal(size=3)
        moved = gripper_occupancy(g.transformed(rot, tr), gripper)
        for b0, b1 in zip(ref, moved):
            np.testing.assert_allclose(b1.center, rot @ b0.center + tr, atol=1e-12)
            assert b1.volume == pytest.approx(b0.volume)


def test_free_space_and_table_examples(gripper):
    s = generate_scene(3, 3)
    full = sample_scene_surface(s, 0.004, 0.008)
    up = Grasp(np.array([0, 0, 0.5]), np.array([0, 0, -1.0]), np.array([1.0, 0, 0]), 0.05, 0.0)
    lab = check_collision(up, full, gripper)
    assert lab.c == 1 and lab.contact_exempt_count == 0
    # fingers pushed through the table slab
    sunk = Grasp(np.array([0.12, 0.12, 0.0]), np.array([0, 0, -1.0]), np.array([1.0, 0, 0]), 0.05, 0.0)
    assert check_collision(sunk, full, gripper).c == 0


def test_accelerated_matches_brute_force(gripper):
    rng = np.random.default_rng(1)
    s = generate_scene(3, 3)
    full = sample_scene_surface(s, 0.004, 0.008)
    grid = build_grid(full, gripper)
    for g in random_grasps(rng, 300, np.array([0, 0, 0.03])):
        lab = check_collision(g, full, gripper, grid)
        assert (lab.c, lab.contact_exempt_count) == brute_force_collision(g, full.points, gripper)


def test_batched_flags_match_brute_force(gripper):
    rng = np.random.default_rng(11)
    full = sample_scene_surface(generate_scene(6, 4), 0.004, 0.008)
    grasps = random_grasps(rng, 300, np.array([0, 0, 0.03]))
    t, rot, w = stack_grasps(grasps)
    flags = collision_free_many(t, rot, w, full.points, cKDTree(full.points), gripper)
    expected = np.array([brute_force_collision(g, full.points, gripper)[0] == 1 for g in grasps])
    assert 0 < expected.sum() < len(grasps)
    np.testing.assert_array_equal(flags, expected)
    far = collision_free_many(t + 5.0, rot, w, full.points, cKDTree(full.points), gripper)
    assert far.all()
    assert collision_free_many(np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros(0), full.points,
                               cKDTree(full.points), gripper).shape == (0,)


def test_spatial_grid_queries():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1, 1, size=(2000, 3))
    grid = SpatialGrid(pts, 0.3)
    lo, hi = np.array([-0.2, -0.5, 0.0]), np.array([0.4, 0.1, 0.7])
    got = set(grid.query_box(lo, hi).tolist())
    inside = set(np.nonzero(np.all((pts >= lo) & (pts <= hi), axis=1))[0].tolist())
    assert inside <= got
    c = np.array([0.1, 0.2, -0.3])
    ball = set(grid.query_ball(c, 0.45).tolist())
    assert set(np.nonzero(np.linalg.norm(pts - c, axis=1) <= 0.45)[0].tolist()) <= ball


def test_label_invariant_under_rigid_motion(gripper):
    rng = np.random.default_rng(3)
    s = generate_scene(5, 3)
    full = sample_scene_surface(s, 0.004, 0.008)
    grasps = random_grasps(rng, 40, np.array([0, 0, 0.03]))
    rot, tr = random_rotation(rng), rng.normal(size=3)
    moved = PointCloud(full.points @ rot.T + tr, full.features, full.normals @ rot.T)
    for g in grasps:
        a = check_collision(g, full, gripper)
        b = check_collision(g.transformed(rot, tr), moved, gripper)
        assert (a.c, a.contact_exempt_count) == (b.c, b.contact_exempt_count)


def test_shrinking_width_with_empty_band_keeps_free(gripper):
    rng = np.random.default_rng(4)
    s = generate_scene(6, 4)
    full = sample_scene_surface(s, 0.004, 0.008)
    checked = 0
    for g in random_grasps(rng, 400, np.array([0, 0, 0.03])):
        if check_collision(g, full, gripper).c == 0:
            continue
        local = (full.points - g.t) @ g.rotation
        in_reach = (np.abs(local[:, 0]) <= gripper.finger_length / 2) & (np.abs(local[:, 2]) <= gripper.finger_height / 2)
        new_w = g.width * 0.7
        band = in_reach & (np.abs(local[:, 1]) >= new_w / 2) & (np.abs(local[:, 1]) < g.width / 2)
        if band.any():
            continue
        shrunk = Grasp(g.t, g.v_A, g.v_C, new_w, g.depth)
        assert check_collision(shrunk, full, gripper).c == 1
        checked += 1
    assert checked > 10


def test_dataset_all_free_warns(gripper):
    s = generate_scene(7, 2)
    full = sample_scene_surface(s, 0.004, 0.008)
    gs = [Grasp(np.array([0, 0, 0.5 + 0.1 * i]), np.array([0, 0, -1.0]), np.array([1.0, 0, 0]), 0.05, 0.0)
          for i in range(5)]
    with pytest.warns(CollisionBalanceWarning):
        labels = generate_collision_dataset(gs, full, gripper, balance=1.0)
    assert len(labels) == 5 and all(lab.c == 1 for lab in labels)
    with pytest.raises(ValueError):
        generate_collision_dataset([], full, gripper)


def test_dataset_deterministic_and_balanced(gripper):
    rng = np.random.default_rng(8)
    s = generate_scene(8, 4)
    full = sample_scene_surface(s, 0.004, 0.008)
    gs = random_grasps(rng, 200, np.array([0, 0, 0.03]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = generate_collision_dataset(gs, full, gripper, balance=1.0, seed=3)
    b = generate_collision_dataset(gs, full, gripper, balance=1.0, seed=3)
    assert [x.to_dict() for x in a] == [x.to_dict() for x in b]
    pos = sum(lab.c for lab in a)
    assert abs(pos - (len(a) - pos)) <= 1
    ratio = generate_collision_dataset(gs, full, gripper, balance=2.0, seed=3)
    pos = sum(lab.c for lab in ratio)
    neg = len(ratio) - pos
    assert abs(pos - 2.0 * neg) <= 1 or abs(neg - pos / 2.0) <= 1


def test_rebalance_counting():
    labels = [CollisionLabel(i, int(i < 30), 0) for i in range(40)]
    out = rebalance(labels, 1.0, seed=0)
    assert sum(lab.c for lab in out) == 10 and len(out) == 20
    assert [lab.grasp_index for lab in out] == sorted(lab.grasp_index for lab in out)
    assert rebalance(labels, None) is labels


def test_label_dict_roundtrip():
    lab = CollisionLabel(4, 0, 12)
    assert CollisionLabel.from_dict(lab.to_dict()) == lab
