"""File formats: binary PLY clouds, JSON documents, versioned checkpoints."""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .grasp import Grasp
from .scene import PointCloud, SceneSpec

PLY_FIELDS = [
    ("x", "double", "<f8"), ("y", "double", "<f8"), ("z", "double", "<f8"),
    ("nx", "double", "<f8"), ("ny", "double", "<f8"), ("nz", "double", "<f8"),
    ("red", "uchar", "u1"), ("green", "uchar", "u1"), ("blue", "uchar", "u1"),
    ("u", "double", "<f8"), ("v", "double", "<f8"), ("w", "double", "<f8"),
    ("semantic", "uchar", "u1"), ("instance_id", "int", "<i4"),
]
PLY_DTYPE = np.dtype([(name, code) for name, _, code in PLY_FIELDS])

CHECKPOINT_MAGIC = b"SGNETCK\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, corrupt or version-mismatched checkpoint."""


def write_ply(path, cloud: PointCloud):
    """Binary little-endian PLY with normals, 8-bit colors, normalized coordinates and labels."""
    n = len(cloud)
    rec = np.zeros(n, dtype=PLY_DTYPE)
    for j, name in enumerate(("x", "y", "z")):
        rec[name] = cloud.points[:, j]
    for j, name in enumerate(("nx", "ny", "nz")):
        rec[name] = cloud.normals[:, j]
    for j, name in enumerate(("red", "green", "blue")):
        rec[name] = np.round(np.clip(cloud.features[:, j], 0.0, 1.0) * 255.0).astype(np.uint8)
    for j, name in enumerate(("u", "v", "w")):
        rec[name] = cloud.features[:, 3 + j]
    rec["semantic"] = 0 if cloud.semantic is None else cloud.semantic
    rec["instance_id"] = 0 if cloud.instance_id is None else cloud.instance_id
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {typ} {name}" for name, typ, _ in PLY_FIELDS]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path) -> PointCloud:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    lines = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise ValueError(f"{path}: only binary little-endian PLY is supported")
    props = [ln.split()[-1] for ln in lines if ln.startswith("property")]
    if props != [name for name, _, _ in PLY_FIELDS]:
        raise ValueError(f"{path}: unexpected vertex layout {props}")
    n = int(next(ln.split()[-1] for ln in lines if ln.startswith("element vertex")))
    body = raw[end + len(b"end_header\n"):]
    if len(body) != n * PLY_DTYPE.itemsize:
        raise ValueError(f"{path}: truncated vertex data")
    rec = np.frombuffer(body, dtype=PLY_DTYPE)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    nrm = np.stack([rec["nx"], rec["ny"], rec["nz"]], axis=1).astype(np.float64)
    rgb = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.float64) / 255.0
    uvw = np.stack([rec["u"], rec["v"], rec["w"]], axis=1).astype(np.float64)
    return PointCloud(pts, np.hstack([rgb, uvw]), nrm, rec["semantic"].astype(np.uint8),
                      rec["instance_id"].astype(np.int32), {})


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def write_scene(path, scene: SceneSpec):
    dump_json(path, scene.to_dict())


def read_scene(path) -> SceneSpec:
    return SceneSpec.from_dict(load_json(path))


def write_grasps(path, grasps):
    dump_json(path, [g.to_dict() for g in grasps])


def read_grasps(path):
    return [Grasp.from_dict(d) for d in load_json(path)]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_checkpoint(path, config: dict, manifest, flat: np.ndarray, history=None):
    """``magic | version | header length | JSON header | float64 parameters``.

    The header holds the config, the ``(name, shape)`` manifest, the loss
    history and a CRC32 of the parameter bytes.
    """
    flat = np.ascontiguousarray(flat, dtype="<f8")
    payload = flat.tobytes()
    header = json.dumps({
        "config": config,
        "manifest": [[name, list(shape)] for name, shape in manifest],
        "history": history or [],
        "n_params": int(flat.size),
        "crc32": zlib.crc32(payload),
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload)


def read_checkpoint(path):
    """``(header dict, flat parameter array)``; raises :class:`CheckpointError` on any defect."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    m = len(CHECKPOINT_MAGIC)
    if len(raw) < m + 8 or raw[:m] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[m:m + 8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    try:
        header = json.loads(raw[m + 8:m + 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = raw[m + 8 + hlen:]
    if len(payload) != 8 * header.get("n_params", -1) or zlib.crc32(payload) != header.get("crc32"):
        raise CheckpointError(f"{path}: parameter block is truncated or corrupt")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    expected = sum(int(np.prod(s)) for _, s in header["manifest"])
    if expected != flat.size:
        raise CheckpointError(f"{path}: manifest does not match parameter count")
    return header, flat
