"""Synthetic tabletop scenes built from primitives, and single-view capture.

Scenes contain boxes, upright cylinders and spheres resting on a table at
``z = 0``.  Every primitive is analytic, so surface normals, signed distances
and visibility are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

SHAPES = ("box", "cylinder", "sphere")

TABLE_COLOR = (0.55, 0.5, 0.45)

# Workspace: ((xmin, xmax), (ymin, ymax), (zmin, zmax)) in meters.
DEFAULT_WORKSPACE = ((-0.16, 0.16), (-0.16, 0.16), (-0.01, 0.2))


class SceneError(RuntimeError):
    """Raised when a scene cannot be generated or captured."""


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    fx: float = 150.0
    fy: float = 150.0
    width: int = 160
    height: int = 120

    @property
    def cx(self) -> float:
        return (self.width - 1) / 2.0

    @property
    def cy(self) -> float:
        return (self.height - 1) / 2.0

    def frame(self):
        """Return (forward, right, down) unit vectors of the image frame."""
        fwd = np.asarray(self.look_at, float) - np.asarray(self.position, float)
        fwd /= np.linalg.norm(fwd)
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            # looking straight down: pick a fixed image x axis
            right = np.array([1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return fwd, right, down

    def rays(self):
        fwd, right, down = self.frame()
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        u = (u.ravel() - self.cx) / self.fx
        v = (v.ravel() - self.cy) / self.fy
        d = fwd[None, :] + u[:, None] * right[None, :] + v[:, None] * down[None, :]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(self.position, float), d

    def to_dict(self):
        return {
            "position": [float(x) for x in self.position],
            "look_at": [float(x) for x in self.look_at],
            "intrinsics": {"fx": self.fx, "fy": self.fy, "width": self.width, "height": self.height},
        }

    @classmethod
    def from_dict(cls, d):
        k = d["intrinsics"]
        return cls(np.asarray(d["position"], float), np.asarray(d["look_at"], float),
                   float(k["fx"]), float(k["fy"]), int(k["width"]), int(k["height"]))


@dataclass
class SceneObject:
    """A primitive. ``dimensions``: box (lx, ly, lz), cylinder (radius, height), sphere (radius,).

    The object frame origin is the geometric center; cylinders are aligned
    with their local z axis.
    """

    shape: str
    dimensions: tuple
    rotation: np.ndarray
    translation: np.ndarray
    instance_id: int

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        self.rotation = np.asarray(self.rotation, float).reshape(3, 3)
        self.translation = np.asarray(self.translation, float).reshape(3)
        self.dimensions = tuple(float(x) for x in self.dimensions)

    def to_local(self, p):
        return (np.asarray(p, float) - self.translation) @ self.rotation

    def to_world(self, q):
        return q @ self.rotation.T + self.translation

    def footprint_radius(self) -> float:
        if self.shape == "box":
            return 0.5 * math.hypot(self.dimensions[0], self.dimensions[1])
        return self.dimensions[0]

    def signed_distance(self, p):
        """Exact signed distance to the surface (negative inside)."""
        q = self.to_local(np.atleast_2d(p))
        if self.shape == "sphere":
            return np.linalg.norm(q, axis=1) - self.dimensions[0]
        if self.shape == "box":
            h = np.asarray(self.dimensions) / 2.0
            d = np.abs(q) - h
            outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
            inside = np.minimum(d.max(axis=1), 0.0)
            return outside + inside
        r, hgt = self.dimensions
        d = np.stack([np.hypot(q[:, 0], q[:, 1]) - r, np.abs(q[:, 2]) - hgt / 2.0], axis=1)
        return np.linalg.norm(np.maximum(d, 0.0), axis=1) + np.minimum(d.max(axis=1), 0.0)

    def area(self) -> float:
        if self.shape == "sphere":
            return 4.0 * math.pi * self.dimensions[0] ** 2
        if self.shape == "box":
            a, b, c = self.dimensions
            return 2.0 * (a * b + b * c + a * c)
        r, h = self.dimensions
        return 2.0 * math.pi * r * h + 2.0 * math.pi * r * r

    def sample_surface(self, n: int, rng: np.random.Generator):
        """Area-uniform surface samples: (points, outward normals), world frame."""
        if self.shape == "sphere":
            v = rng.normal(size=(n, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            q, nq = v * self.dimensions[0], v
        elif self.shape == "box":
            h = np.asarray(self.dimensions) / 2.0
            face_area = np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]])
            face = rng.choice(6, size=n, p=face_area / face_area.sum())
            axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
            q = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
            q[np.arange(n), axis] = sign * h[axis]
            nq = np.zeros((n, 3))
            nq[np.arange(n), axis] = sign
        else:
            r, hgt = self.dimensions
            side = 2.0 * math.pi * r * hgt
            cap = math.pi * r * r
            part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
            theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
            rad = r * np.sqrt(rng.uniform(0.0, 1.0, size=n))
            z = rng.uniform(-hgt / 2.0, hgt / 2.0, size=n)
            q = np.empty((n, 3))
            nq = np.zeros((n, 3))
            s = part == 0
            q[s] = np.stack([r * np.cos(theta[s]), r * np.sin(theta[s]), z[s]], axis=1)
            nq[s] = np.stack([np.cos(theta[s]), np.sin(theta[s]), np.zeros(s.sum())], axis=1)
            for k, zs in ((1, 1.0), (2, -1.0)):
                c = part == k
                q[c] = np.stack([rad[c] * np.cos(theta[c]), rad[c] * np.sin(theta[c]),
                                 np.full(c.sum(), zs * hgt / 2.0)], axis=1)
                nq[c, 2] = zs
        return self.to_world(q), nq @ self.rotation.T

    def intersect(self, origin, dirs):
        """Nearest positive ray hit per ray: (t, local normal) with t = inf on miss."""
        o = self.to_local(origin[None, :])[0]
        d = dirs @ self.rotation
        n_rays = len(d)
        t_best = np.full(n_rays, np.inf)
        n_best = np.zeros((n_rays, 3))
        eps = 1e-9
        if self.shape == "sphere":
            r = self.dimensions[0]
            b = d @ o
            c = o @ o - r * r
            disc = b * b - c
            ok = disc >= 0
            t = -b - np.sqrt(np.where(ok, disc, 0.0))
            ok &= t > eps
            t_best[ok] = t[ok]
            n_best[ok] = (o + t[ok, None] * d[ok]) / r
        elif self.shape == "box":
            h = np.asarray(self.dimensions) / 2.0
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / d
                t1 = (-h - o) * inv
                t2 = (h - o) * inv
            t1 = np.where(np.isnan(t1), -np.inf, t1)
            t2 = np.where(np.isnan(t2), np.inf, t2)
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            tn = tmin.max(axis=1)
            tf = tmax.min(axis=1)
            ok = (tn <= tf) & (tn > eps)
            axis = tmin.argmax(axis=1)
            t_best[ok] = tn[ok]
            idx = np.nonzero(ok)[0]
            n_best[idx, axis[idx]] = -np.sign(d[idx, axis[idx]])
        else:
            r, hgt = self.dimensions
            a = d[:, 0] ** 2 + d[:, 1] ** 2
            b = d[:, 0] * o[0] + d[:, 1] * o[1]
            c = o[0] ** 2 + o[1] ** 2 - r * r
            disc = b * b - a * c
            with np.errstate(divide="ignore", invalid="ignore"):
                ts = (-b - np.sqrt(np.maximum(disc, 0.0))) / a
            z = o[2] + ts * d[:, 2]
            ok = (disc >= 0) & (a > 1e-15) & (ts > eps) & (np.abs(z) <= hgt / 2.0)
            t_best[ok] = ts[ok]
            p = o + ts[ok, None] * d[ok]
            n_best[ok] = np.stack([p[:, 0] / r, p[:, 1] / r, np.zeros(ok.sum())], axis=1)
            for zs in (1.0, -1.0):
                with np.errstate(divide="ignore", invalid="ignore"):
                    tc = (zs * hgt / 2.0 - o[2]) / d[:, 2]
                px = o[0] + tc * d[:, 0]
                py = o[1] + tc * d[:, 1]
                okc = (tc > eps) & (px * px + py * py <= r * r) & (tc < t_best) & (d[:, 2] * zs < 0)
                t_best[okc] = tc[okc]
                n_best[okc] = np.array([0.0, 0.0, zs])
        return t_best, n_best @ self.rotation.T

    def to_dict(self):
        return {
            "shape": self.shape,
            "dimensions": list(self.dimensions),
            "pose": {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()},
            "instance_id": int(self.instance_id),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["shape"], tuple(d["dimensions"]), np.asarray(d["pose"]["rotation"]),
                   np.asarray(d["pose"]["translation"]), int(d["instance_id"]))


@dataclass
class SceneSpec:
    seed: int
    objects: list
    camera: Camera
    workspace: tuple = DEFAULT_WORKSPACE
    table_extents: tuple = ((-0.2, 0.2), (-0.2, 0.2))

    def __post_init__(self):
        ids = [o.instance_id for o in self.objects]
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise ValueError(f"instance ids must be contiguous from 1, got {ids}")

    def object_by_id(self, instance_id: int) -> SceneObject:
        return self.objects[instance_id - 1] if self.objects[instance_id - 1].instance_id == instance_id \
            else next(o for o in self.objects if o.instance_id == instance_id)

    def to_dict(self):
        return {
            "seed": int(self.seed),
            "table": {"z": 0.0, "extents": [list(e) for e in self.table_extents]},
            "workspace": [list(e) for e in self.workspace],
            "objects": [o.to_dict() for o in sorted(self.objects, key=lambda o: o.instance_id)],
            "camera": self.camera.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            seed=int(d["seed"]),
            objects=[SceneObject.from_dict(o) for o in d["objects"]],
            camera=Camera.from_dict(d["camera"]),
            workspace=tuple(tuple(float(v) for v in e) for e in d["workspace"]),
            table_extents=tuple(tuple(float(v) for v in e) for e in d["table"]["extents"]),
        )


@dataclass
class PointCloud:
    """Points with 6 feature channels (RGB, normalized xyz) and unit normals.

    ``semantic`` is 1 for foreground, 0 for table; ``instance_id`` is 0 on
    the table.  Both may be ``None`` for unlabeled clouds.
    """

    points: np.ndarray
    features: np.ndarray
    normals: np.ndarray
    semantic: Optional[np.ndarray] = None
    instance_id: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(
            self.points[idx], self.features[idx], self.normals[idx],
            None if self.semantic is None else self.semantic[idx],
            None if self.instance_id is None else self.instance_id[idx],
            dict(self.meta),
        )

    @property
    def network_input(self) -> np.ndarray:
        """``N x (3 + 6)`` array fed to the network."""
        return np.hstack([self.points, self.features])


def normalize_coordinates(points, workspace):
    lo = np.array([e[0] for e in workspace])
    hi = np.array([e[1] for e in workspace])
    return 2.0 * (points - lo) / (hi - lo) - 1.0


def instance_color(instance_id: int):
    if instance_id == 0:
        return TABLE_COLOR
    # golden-ratio hue walk: distinct, deterministic
    h = (instance_id * 0.618033988749895) % 1.0
    i = int(h * 6)
    f = h * 6 - i
    q, t = 1 - f, f
    return [(1, t, 0), (q, 1, 0), (0, 1, t), (0, q, 1), (t, 0, 1), (1, 0, q)][i % 6]


def _make_cloud(points, normals, ids, workspace, meta=None):
    colors = np.array([instance_color(int(i)) for i in range(int(ids.max(initial=0)) + 1)])
    # 8-bit colors so clouds survive a PLY round trip unchanged
    colors = np.round(colors * 255.0) / 255.0
    feats = np.hstack([colors[ids], normalize_coordinates(points, workspace)])
    return PointCloud(points, feats, normals, (ids > 0).astype(np.uint8), ids.astype(np.int32), meta or {})


def _random_object(rng, instance_id):
    shape = SHAPES[rng.integers(3)]
    yaw = rng.uniform(0.0, 2.0 * math.pi)
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    if shape == "box":
        dims = (rng.uniform(0.03, 0.06), rng.uniform(0.03, 0.06), rng.uniform(0.03, 0.07))
        z = dims[2] / 2.0
    elif shape == "cylinder":
        dims = (rng.uniform(0.017, 0.03), rng.uniform(0.04, 0.09))
        z = dims[1] / 2.0
    else:
        dims = (rng.uniform(0.02, 0.032),)
        z = dims[0]
        rot = np.eye(3)
    return SceneObject(shape, dims, rot, np.array([0.0, 0.0, z]), instance_id)


def random_camera(rng, look_at=(0.0, 0.0, 0.02), distance=(0.45, 0.55), elevation_deg=(40.0, 65.0)):
    az = rng.uniform(0.0, 2.0 * math.pi)
    el = math.radians(rng.uniform(*elevation_deg))
    dist = rng.uniform(*distance)
    look = np.asarray(look_at, float)
    pos = look + dist * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    return Camera(pos, look)


def _place_objects(rng, n_objects, placement_extent, clearance, max_tries):
    objects = []
    for k in range(n_objects):
        obj = _random_object(rng, k + 1)
        r = obj.footprint_radius()
        for _ in range(max_tries):
            xy = rng.uniform(-placement_extent + r, placement_extent - r, size=2) if placement_extent > r \
                else np.zeros(2)
            if all(np.hypot(*(xy - o.translation[:2])) >= r + o.footprint_radius() + clearance for o in objects):
                obj.translation[:2] = xy
                objects.append(obj)
                break
        else:
            return None
    return objects


def generate_scene(seed: int, n_objects: int, workspace=DEFAULT_WORKSPACE, placement_extent: float = 0.13,
                   clearance: float = 0.015, max_tries: int = 300, restarts: int = 30) -> SceneSpec:
    """Place ``n_objects`` random primitives on the table by rejection sampling.

    Footprint circles are kept ``clearance`` apart; since every object rests
    on the table this also separates the solids in 3D.  When an object cannot
    be placed within ``max_tries`` draws the whole layout is redrawn, up to
    ``restarts`` times.
    """
    if not 0 <= n_objects <= 16:
        raise ValueError("n_objects must be in [0, 16]")
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        objects = _place_objects(rng, n_objects, placement_extent, clearance, max_tries)
        if objects is not None:
            break
    else:
        raise SceneError(f"could not place {n_objects} objects after {restarts} layouts (seed={seed})")
    table = (tuple(workspace[0]), tuple(workspace[1]))
    return SceneSpec(int(seed), objects, random_camera(rng), tuple(tuple(e) for e in workspace), table)


def raycast(scene: SceneSpec):
    """Cast one ray per pixel. Returns (points, normals, instance ids) for hits, pixel order."""
    origin, dirs = scene.camera.rays()
    t_best = np.full(len(dirs), np.inf)
    n_best = np.zeros_like(dirs)
    id_best = np.full(len(dirs), -1, dtype=np.int64)

    with np.errstate(divide="ignore", invalid="ignore"):
        tt = -origin[2] / dirs[:, 2]
    hit = origin[None, :] + tt[:, None] * dirs
    (x0, x1), (y0, y1) = scene.table_extents
    ok = (tt > 1e-9) & (hit[:, 0] >= x0) & (hit[:, 0] <= x1) & (hit[:, 1] >= y0) & (hit[:, 1] <= y1) \
        & (dirs[:, 2] < 0)
    t_best[ok] = tt[ok]
    n_best[ok] = np.array([0.0, 0.0, 1.0])
    id_best[ok] = 0

    for obj in scene.objects:
        t, n = obj.intersect(origin, dirs)
        closer = t < t_best
        t_best[closer] = t[closer]
        n_best[closer] = n[closer]
        id_best[closer] = obj.instance_id

    m = np.isfinite(t_best)
    pts = origin[None, :] + t_best[m, None] * dirs[m]
    nrm = n_best[m] / np.linalg.norm(n_best[m], axis=1, keepdims=True)
    return pts, nrm, id_best[m]


def render_partial_cloud(scene: SceneSpec, n_points: int) -> PointCloud:
    """Single-view capture with z-buffer occlusion, subsampled to at most ``n_points``."""
    if n_points <= 0:
        raise ValueError("n_points must be positive")
    pts, nrm, ids = raycast(scene)
    if len(pts) == 0:
        raise SceneError("camera sees no geometry")
    if len(pts) > n_points:
        rng = np.random.default_rng([scene.seed, 1])
        keep = np.sort(rng.choice(len(pts), size=n_points, replace=False))
        pts, nrm, ids = pts[keep], nrm[keep], ids[keep]
    return _make_cloud(pts, nrm, ids, scene.workspace, {"scene_seed": scene.seed})


def sample_scene_surface(scene: SceneSpec, object_spacing: float = 0.002, table_spacing: float = 0.004,
                         seed: int = 0) -> PointCloud:
    """Dense complete-surface cloud of the scene (all objects plus the table).

    Used for label generation and evaluation, where the hidden back sides of
    objects matter for contacts and collisions.  Table points covered by an
    object footprint and object points inside other objects are dropped.
    """
    rng = np.random.default_rng([scene.seed, 2, seed])
    pts, nrm, ids = [], [], []
    (x0, x1), (y0, y1) = scene.table_extents
    gx = np.arange(x0, x1 + 1e-12, table_spacing)
    gy = np.arange(y0, y1 + 1e-12, table_spacing)
    tx, ty = np.meshgrid(gx, gy)
    table = np.stack([tx.ravel(), ty.ravel(), np.zeros(tx.size)], axis=1)
    pts.append(table)
    nrm.append(np.tile([0.0, 0.0, 1.0], (len(table), 1)))
    ids.append(np.zeros(len(table), dtype=np.int64))
    for obj in scene.objects:
        n = max(16, int(math.ceil(obj.area() / object_spacing ** 2)))
        p, q = obj.sample_surface(n, rng)
        pts.append(p)
        nrm.append(q)
        ids.append(np.full(n, obj.instance_id, dtype=np.int64))
    pts = np.vstack(pts)
    nrm = np.vstack(nrm)
    ids = np.concatenate(ids)
    keep = np.ones(len(pts), dtype=bool)
    for obj in scene.objects:
        other = ids != obj.instance_id
        keep[other] &= obj.signed_distance(pts[other]) > 1e-9
    return _make_cloud(pts[keep], nrm[keep], ids[keep], scene.workspace, {"scene_seed": scene.seed, "full": True})


def crop_to_workspace(points, workspace):
    lo = np.array([e[0] for e in workspace])
    hi = np.array([e[1] for e in workspace])
    return np.all((points >= lo) & (points <= hi), axis=1)


def preprocess(cloud: PointCloud, workspace=DEFAULT_WORKSPACE, n_target: int = 2048, seed: int = 0) -> PointCloud:
    """Workspace crop, random resampling to exactly ``n_target`` points, renormalization."""
    inside = np.nonzero(crop_to_workspace(cloud.points, workspace))[0]
    if len(inside) == 0:
        raise SceneError("no points left after workspace crop")
    rng = np.random.default_rng(seed)
    if len(inside) >= n_target:
        idx = rng.choice(inside, size=n_target, replace=False)
    else:
        extra = rng.choice(inside, size=n_target - len(inside), replace=True)
        idx = rng.permutation(np.concatenate([inside, extra]))
    out = cloud.subset(idx)
    out.features = out.features.copy()
    out.features[:, 3:6] = normalize_coordinates(out.points, workspace)
    return out


class CloudPreprocessor(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`preprocess` for pipeline use."""

    def __init__(self, workspace=DEFAULT_WORKSPACE, n_target=2048, seed=0):
        self.workspace = workspace
        self.n_target = n_target
        self.seed = seed

    def fit(self, X=None, y=None):
        if self.n_target <= 0:
            raise ValueError("n_target must be positive")
        return self

    def transform(self, X):
        if isinstance(X, PointCloud):
            return preprocess(X, self.workspace, self.n_target, self.seed)
        return [preprocess(c, self.workspace, self.n_target, self.seed) for c in X]
