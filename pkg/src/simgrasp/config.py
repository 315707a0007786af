"""Plain-text ``section.key = value`` run configuration.

Values are parsed as JSON literals where possible (numbers, lists, booleans,
``null``) and kept as strings otherwise.  Unknown keys are rejected and every
section is validated by constructing its dataclass before any work starts.
"""

from __future__ import annotations

import json
from dataclasses import MISSING, fields
from pathlib import Path

from .evaluation import EvalConfig
from .grasp import GripperModel
from .labeling import LabelConfig
from .losses import LossWeights
from .model.network import NetworkConfig
from .model.training import TrainConfig
from .nms import NmsConfig
from .scoring import FrictionSweep


class ConfigError(ValueError):
    """Malformed, unknown or invalid configuration entry."""


def _field_defaults(cls):
    return {f.name: (f.default if f.default_factory is MISSING else f.default_factory()) for f in fields(cls)}


SECTIONS = {
    "scene": (None, {"n_points": 2048, "objects_min": 3, "objects_max": 5}),
    "gripper": (GripperModel, _field_defaults(GripperModel)),
    "sweep": (FrictionSweep, _field_defaults(FrictionSweep)),
    "label": (LabelConfig, _field_defaults(LabelConfig)),
    "loss": (LossWeights, _field_defaults(LossWeights)),
    "train": (TrainConfig, dict(_field_defaults(TrainConfig), head_weights=(1.0, 1.0, 1.0))),
    "model": (NetworkConfig, _field_defaults(NetworkConfig)),
    "infer": (None, {"bandwidth": 1.5, "graspable_threshold": 0.5, "collision_threshold": 0.5,
                     "use_instances": True, "use_collision": True}),
    "nms": (NmsConfig, _field_defaults(NmsConfig)),
    "eval": (EvalConfig, _field_defaults(EvalConfig)),
}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


class RunConfig:
    """Effective configuration: defaults overlaid with file and command-line entries."""

    def __init__(self, overrides: dict | None = None):
        self.values = {sec: dict(defaults) for sec, (_, defaults) in SECTIONS.items()}
        for key, value in (overrides or {}).items():
            self.set(key, value)
        self.validate()

    def set(self, key: str, value):
        sec, _, name = key.partition(".")
        if sec not in self.values or name not in self.values[sec]:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[sec][name] = value

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        entries = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            entries[key.strip()] = _parse_value(value.strip())
        try:
            return cls(entries)
        except ConfigError as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text(), str(path))

    def dump(self) -> str:
        lines = []
        for sec in SECTIONS:
            for name in sorted(self.values[sec]):
                lines.append(f"{sec}.{name} = {json.dumps(_jsonable(self.values[sec][name]))}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.dump())

    def build(self, section: str):
        """Instantiate the dataclass owning ``section``."""
        cls, _ = SECTIONS[section]
        vals = dict(self.values[section])
        if section == "train":
            vals.pop("head_weights")
        for k, v in vals.items():
            if isinstance(v, list):
                vals[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        return cls(**vals) if cls is not None else vals

    def validate(self):
        try:
            for sec in SECTIONS:
                self.build(sec)
            s = self.values["scene"]
            if not (int(s["n_points"]) > 0 and 0 <= int(s["objects_min"]) <= int(s["objects_max"]) <= 16):
                raise ValueError("scene needs n_points > 0 and 0 <= objects_min <= objects_max <= 16")
            inf = self.values["infer"]
            if inf["bandwidth"] <= 0 or not (0 < inf["graspable_threshold"] < 1 and 0 < inf["collision_threshold"] < 1):
                raise ValueError("infer thresholds must lie in (0, 1) and bandwidth be positive")
            hw = self.values["train"]["head_weights"]
            if len(hw) != 3 or min(hw) < 0 or not any(hw):
                raise ValueError("train.head_weights needs three nonnegative entries, not all zero")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def estimator_params(self) -> dict:
        """Keyword arguments for :class:`~simgrasp.model.GraspNetEstimator`."""
        tr = self.values["train"]
        inf = self.values["infer"]
        nms = self.values["nms"]
        return dict(
            network={k: _jsonable(v) for k, v in self.values["model"].items()},
            loss_weights=dict(self.values["loss"]),
            epochs=tr["epochs"], lr=tr["lr"], lr_decay=tr["lr_decay"], decay_every=tr["decay_every"],
            batch_size=tr["batch_size"], adam_beta1=tr["adam_beta1"], adam_beta2=tr["adam_beta2"],
            adam_eps=tr["adam_eps"], seed=tr["seed"], head_weights=tuple(tr["head_weights"]),
            collision_targets=tr["collision_targets"], collision_samples=tr["collision_samples"],
            bandwidth=inf["bandwidth"], graspable_threshold=inf["graspable_threshold"],
            collision_threshold=inf["collision_threshold"], use_instances=inf["use_instances"],
            use_collision=inf["use_collision"], nms_epsilon_t=nms["epsilon_t"], nms_epsilon_r=nms["epsilon_r"],
            nms_mode=nms["mode"], gripper=dict(self.values["gripper"]),
        )
