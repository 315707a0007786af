"""Shared point encoder with three parallel per-point decoders."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..losses import EMBED_DIM, HeadOutputs
from .layers import group_max_backward, group_max_forward, mlp_backward, mlp_forward, stage_geometry

HEADS = ("seg", "grasp", "coll")
HEAD_WIDTHS = {"seg": 2 + EMBED_DIM, "grasp": 2 + 6 + 1 + 1 + 1, "coll": 2}


@dataclass
class NetworkConfig:
    """Architecture; stage tuples are ``(centers, radius, neighbors, widths)``."""

    in_channels: int = 9
    xyz_scale: float = 10.0
    sa1: tuple = (512, 0.025, 16, (32, 32, 64))
    sa2: tuple = (128, 0.06, 16, (64, 64, 128))
    fp2: tuple = (128, 64)
    fp1: tuple = (64, 64)
    head_hidden: tuple = (64,)

    def __post_init__(self):
        self.sa1 = (int(self.sa1[0]), float(self.sa1[1]), int(self.sa1[2]), tuple(int(v) for v in self.sa1[3]))
        self.sa2 = (int(self.sa2[0]), float(self.sa2[1]), int(self.sa2[2]), tuple(int(v) for v in self.sa2[3]))
        self.fp2 = tuple(int(v) for v in self.fp2)
        self.fp1 = tuple(int(v) for v in self.fp1)
        self.head_hidden = tuple(int(v) for v in self.head_hidden)
        for stage in (self.sa1, self.sa2):
            if stage[0] < 1 or stage[1] <= 0 or stage[2] < 1 or not stage[3] or min(stage[3]) < 1:
                raise ValueError(f"invalid abstraction stage {stage}")
        if not self.fp2 or not self.fp1 or min(self.fp2 + self.fp1 + (1,) + self.head_hidden) < 1:
            raise ValueError("layer widths must be positive")
        if self.in_channels < 3 or self.xyz_scale <= 0:
            raise ValueError("bad input specification")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def layer_shapes(self):
        """Ordered ``name -> (fan_in, fan_out)`` for every dense layer."""
        shapes = {}

        def chain(prefix, fan_in, widths):
            for i, w in enumerate(widths):
                shapes[f"{prefix}.{i}"] = (fan_in, w)
                fan_in = w
            return fan_in

        f1 = chain("enc.sa1", self.in_channels + 3, self.sa1[3])
        f2 = chain("enc.sa2", f1 + 3, self.sa2[3])
        for h in HEADS:
            d2 = chain(f"{h}.fp2", f2 + f1, self.fp2)
            d1 = chain(f"{h}.fp1", d2 + self.in_channels, self.fp1)
            chain(f"{h}.out", d1, self.head_hidden + (HEAD_WIDTHS[h],))
        return shapes


@dataclass
class CloudGeometry:
    """Coordinate-only precomputation for one cloud."""

    n: int
    stage1: object
    stage2: object


@dataclass
class ForwardCache:
    geom: CloudGeometry
    feats: np.ndarray
    sa1: list
    arg1: np.ndarray
    f1: np.ndarray
    sa2: list
    arg2: np.ndarray
    f2: np.ndarray
    dec: dict = field(default_factory=dict)


class PointGraspNet:
    """Hand-differentiated network.  Parameters live in ``self.params`` keyed ``<layer>.W`` / ``<layer>.b``."""

    def __init__(self, config: NetworkConfig | None = None, seed: int = 0):
        self.config = config or NetworkConfig()
        self.shapes = self.config.layer_shapes()
        rng = np.random.default_rng(seed)
        self.params = {}
        for name, (fi, fo) in self.shapes.items():
            final = name.endswith(".out." + str(len(self.config.head_hidden)))
            limit = np.sqrt((1.0 if final else 6.0) / fi)
            self.params[name + ".W"] = rng.uniform(-limit, limit, size=(fi, fo))
            self.params[name + ".b"] = np.zeros(fo)

    # parameter vector plumbing
    def manifest(self):
        return [(k, v.shape) for k, v in self.params.items()]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def set_flat(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        off = 0
        for k, v in self.params.items():
            self.params[k] = flat[off:off + v.size].reshape(v.shape).copy()
            off += v.size

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def flatten_grads(self, grads: dict) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in self.params])

    def _layers(self, prefix):
        out = []
        i = 0
        while f"{prefix}.{i}.W" in self.params:
            out.append((self.params[f"{prefix}.{i}.W"], self.params[f"{prefix}.{i}.b"]))
            i += 1
        return out

    # forward / backward
    def geometry(self, points: np.ndarray) -> CloudGeometry:
        points = np.asarray(points, dtype=np.float64)
        c = self.config
        s1 = stage_geometry(points, c.sa1[0], c.sa1[1], c.sa1[2])
        s2 = stage_geometry(s1.xyz, c.sa2[0], c.sa2[1], c.sa2[2])
        return CloudGeometry(len(points), s1, s2)

    def _inputs(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected (N, {self.config.in_channels}) input, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input")
        feats = x.copy()
        feats[:, :3] *= self.config.xyz_scale
        return feats

    def forward(self, x, geom: CloudGeometry | None = None, heads=HEADS):
        """Head outputs for an ``(N, in_channels)`` cloud whose first three columns are xyz."""
        feats = self._inputs(x)
        if geom is None:
            geom = self.geometry(x[:, :3])
        if geom.n != len(feats):
            raise ValueError("geometry built for a different cloud")
        s1, s2 = geom.stage1, geom.stage2
        h, sa1 = mlp_forward(np.hstack([s1.gather @ feats, s1.rel]), self._layers("enc.sa1"))
        f1, arg1 = group_max_forward(h, s1.nsample)
        h, sa2 = mlp_forward(np.hstack([s2.gather @ f1, s2.rel]), self._layers("enc.sa2"))
        f2, arg2 = group_max_forward(h, s2.nsample)
        cache = ForwardCache(geom, feats, sa1, arg1, f1, sa2, arg2, f2)
        outs = {}
        for name in HEADS:
            if name not in heads:
                outs[name] = np.zeros((geom.n, HEAD_WIDTHS[name]))
                continue
            d2, c2 = mlp_forward(np.hstack([s2.upsample @ f2, f1]), self._layers(f"{name}.fp2"))
            d1, c1 = mlp_forward(np.hstack([s1.upsample @ d2, feats]), self._layers(f"{name}.fp1"))
            y, c0 = mlp_forward(d1, self._layers(f"{name}.out"), final_relu=False)
            outs[name] = y
            cache.dec[name] = (c2, c1, c0)
        return HeadOutputs(outs["seg"], outs["grasp"], outs["coll"]), cache

    def backward(self, cache: ForwardCache, grad: HeadOutputs) -> dict:
        """Gradients of every parameter given gradients of the head outputs."""
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        s1, s2 = cache.geom.stage1, cache.geom.stage2
        n1 = cache.f1.shape[1]
        g_f1 = np.zeros_like(cache.f1)
        g_f2 = np.zeros_like(cache.f2)
        for name, g in (("seg", grad.seg), ("grasp", grad.grasp), ("coll", grad.coll)):
            if name not in cache.dec or not np.any(g):
                continue
            c2, c1, c0 = cache.dec[name]
            pg, g = mlp_backward(g, self._layers(f"{name}.out"), c0)
            self._store(grads, f"{name}.out", pg)
            pg, g = mlp_backward(g, self._layers(f"{name}.fp1"), c1)
            self._store(grads, f"{name}.fp1", pg)
            g_d2 = s1.upsample.T @ g[:, :-self.config.in_channels]
            pg, g = mlp_backward(g_d2, self._layers(f"{name}.fp2"), c2)
            self._store(grads, f"{name}.fp2", pg)
            g_f2 += s2.upsample.T @ g[:, :-n1]
            g_f1 += g[:, -n1:]
        g = group_max_backward(g_f2, cache.arg2, s2.nsample)
        pg, g = mlp_backward(g, self._layers("enc.sa2"), cache.sa2)
        self._store(grads, "enc.sa2", pg)
        g_f1 += s2.gather.T @ g[:, :-3]
        g = group_max_backward(g_f1, cache.arg1, s1.nsample)
        pg, _ = mlp_backward(g, self._layers("enc.sa1"), cache.sa1)
        self._store(grads, "enc.sa1", pg)
        return grads

    @staticmethod
    def _store(grads, prefix, pg):
        for i, (gw, gb) in enumerate(pg):
            grads[f"{prefix}.{i}.W"] = gw
            grads[f"{prefix}.{i}.b"] = gb
