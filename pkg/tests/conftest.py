import numpy as np
import pytest

from simgrasp.grasp import GripperModel
from simgrasp.scene import DEFAULT_WORKSPACE, Camera, PointCloud, SceneObject, SceneSpec, generate_scene


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def sphere_cloud(radius=0.03, center=(0.0, 0.0, 0.03), n=4000, seed=0, instance_id=1):
    """Fibonacci-sphere samples with exact outward normals."""
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = np.pi * (1 + 5 ** 0.5) * k
    nrm = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    pts = np.asarray(center) + radius * nrm
    feats = np.zeros((n, 6))
    return PointCloud(pts, feats, nrm, np.ones(n, np.uint8), np.full(n, instance_id, np.int32))


def make_spec(objects, camera=None, seed=0):
    cam = camera or Camera(np.array([0.35, 0.0, 0.35]), np.array([0.0, 0.0, 0.02]))
    return SceneSpec(seed, objects, cam, DEFAULT_WORKSPACE, (DEFAULT_WORKSPACE[0], DEFAULT_WORKSPACE[1]))


def sphere_object(radius, xy, instance_id):
    return SceneObject("sphere", np.array([radius]), np.eye(3), np.array([xy[0], xy[1], radius]), instance_id)


def box_object(dims, xy, instance_id, yaw=0.0):
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    return SceneObject("box", np.asarray(dims, float), rot, np.array([xy[0], xy[1], dims[2] / 2.0]), instance_id)


@pytest.fixture
def gripper():
    return GripperModel()


@pytest.fixture(scope="session")
def scene3():
    return generate_scene(3, 3)


ACCEPTANCE_LINES = []


def record_acceptance(name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  criterion {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
