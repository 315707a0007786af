"""Command-line driver: gen -> label -> train -> infer -> eval.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from threadpoolctl import threadpool_limits

from . import io
from .config import ConfigError, RunConfig
from .dataset import evaluation_cloud, view_cloud
from .evaluation import evaluate_dataset
from .grasp import GripperModel
from .labeling import label_scene, labels_from_json, labels_to_json
from .losses import Targets
from .model import GraspNetEstimator
from .scene import SceneError, generate_scene

log = logging.getLogger("simgrasp")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return RunConfig.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _outdir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {p}: {exc}") from exc
    return p


def _scene_stems(directory: Path):
    stems = sorted(p.stem for p in directory.glob("scene_*.json"))
    if not stems:
        raise FileNotFoundError(f"no scene_*.json files in {directory}")
    return stems


def cmd_gen(args) -> int:
    cfg = _config(args.config)
    sc = cfg.values["scene"]
    out = _outdir(args.out)
    rng = np.random.default_rng(args.seed)
    seeds = rng.integers(0, 2 ** 31 - 1, size=args.scenes)
    manifest = {}
    for i, s in enumerate(seeds):
        n_obj = args.objects if args.objects is not None else int(rng.integers(sc["objects_min"], sc["objects_max"] + 1))
        scene = generate_scene(int(s), n_obj)
        cloud = view_cloud(scene, int(sc["n_points"]))
        stem = f"scene_{i:04d}"
        io.write_scene(out / f"{stem}.json", scene)
        io.write_ply(out / f"{stem}.ply", cloud)
        for ext in ("json", "ply"):
            manifest[f"{stem}.{ext}"] = io.file_digest(out / f"{stem}.{ext}")
    io.dump_json(out / "manifest.json", manifest)
    cfg.write(out / "config.txt")
    log.info("wrote %d scenes to %s", args.scenes, out)
    return EXIT_OK


def verify_manifest(directory) -> list:
    """Files whose digest differs from ``manifest.json`` (empty when intact)."""
    d = Path(directory)
    manifest = io.load_json(d / "manifest.json")
    return [name for name, digest in sorted(manifest.items())
            if not (d / name).exists() or io.file_digest(d / name) != digest]


def cmd_label(args) -> int:
    cfg = _config(args.config or args.gripper)
    src = Path(args.inp)
    stems = _scene_stems(src)
    out = _outdir(args.out or src / "labels")
    gripper = cfg.build("gripper")
    for stem in stems:
        scene = io.read_scene(src / f"{stem}.json")
        cloud = io.read_ply(src / f"{stem}.ply")
        labels = label_scene(scene, cloud, gripper, cfg.build("label"), cfg.build("sweep"), evaluation_cloud(scene))
        grasps, coll, points = labels_to_json(labels)
        io.dump_json(out / f"{stem}.grasps.json", grasps)
        io.dump_json(out / f"{stem}.collision.json", coll)
        io.dump_json(out / f"{stem}.points.json", points)
        log.info("%s: %s", stem, labels.stats)
    cfg.write(out / "config.txt")
    return EXIT_OK


def load_training_set(data: Path, label_dir: Path | None = None, with_scene_clouds: bool = False):
    """Clouds and targets, plus complete-surface clouds when ``with_scene_clouds``."""
    label_dir = label_dir or data / "labels"
    clouds, targets, scene_clouds = [], [], []
    for stem in _scene_stems(data):
        if with_scene_clouds:
            scene_clouds.append(evaluation_cloud(io.read_scene(data / f"{stem}.json")))
        cloud = io.read_ply(data / f"{stem}.ply")
        labels = labels_from_json(io.load_json(label_dir / f"{stem}.grasps.json"),
                                  io.load_json(label_dir / f"{stem}.collision.json"),
                                  io.load_json(label_dir / f"{stem}.points.json"))
        clouds.append(cloud)
        targets.append(Targets.from_labels(cloud, labels))
    return clouds, targets, (scene_clouds if with_scene_clouds else None)


def history_csv(history) -> str:
    keys = ["epoch", "lr", "loss", "sem", "ins", "gp", "rot", "reg", "coll"]
    keys = [k for k in keys if any(k in row for row in history)]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for row in history:
        w.writerow([row.get(k, "") if k == "epoch" else f"{row[k]:.8g}" if k in row else "" for k in keys])
    return buf.getvalue()


def cmd_train(args) -> int:
    cfg = _config(args.config)
    if args.epochs is not None:
        cfg.set("train.epochs", args.epochs)
        cfg.validate()
    data = Path(args.data)
    params = cfg.estimator_params()
    clouds, targets, scene_clouds = load_training_set(data, Path(args.labels) if args.labels else None,
                                                      params["collision_targets"] == "predicted")
    est = GraspNetEstimator(**params)
    est.fit(clouds, targets, scene_clouds=scene_clouds,
            callback=lambda row: log.info("epoch %d loss %.4f", row["epoch"], row["loss"]))
    ckpt = Path(args.out)
    _outdir(ckpt.parent)
    est.save(ckpt)
    ckpt.with_suffix(".history.csv").write_text(history_csv(est.history_))
    cfg.write(ckpt.with_suffix(".config.txt"))
    return EXIT_OK


def _predict_file(est, cloud_path: Path, out_path: Path):
    cloud = io.read_ply(cloud_path)
    res = est.infer(cloud)
    io.write_grasps(out_path, res.grasps)
    return len(res.grasps)


def cmd_infer(args) -> int:
    est = GraspNetEstimator.load(args.ckpt)
    src = Path(args.cloud)
    if src.is_dir():
        out = _outdir(args.out)
        for stem in _scene_stems(src):
            n = _predict_file(est, src / f"{stem}.ply", out / f"{stem}.json")
            log.info("%s: %d grasps", stem, n)
        cfg_path = out / "config.txt"
    else:
        out = Path(args.out)
        _outdir(out.parent)
        _predict_file(est, src, out)
        cfg_path = out.with_suffix(".config.txt")
    cfg_path.write_text("".join(f"checkpoint.{k} = {v!r}\n" for k, v in sorted(est.get_params().items())))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args.config)
    scenes_dir, pred_dir = Path(args.scenes), Path(args.pred)
    clouds, preds = {}, {}
    for stem in _scene_stems(scenes_dir):
        clouds[stem] = evaluation_cloud(io.read_scene(scenes_dir / f"{stem}.json"))
        p = pred_dir / f"{stem}.json"
        if p.exists():
            preds[stem] = io.read_grasps(p)
    summary = evaluate_dataset(preds, clouds, cfg.build("eval"), cfg.build("gripper"))
    out = Path(args.out)
    _outdir(out.parent)
    out.write_text(summary.to_csv())
    out.with_suffix(".txt").write_text(summary.to_table())
    cfg.write(out.with_suffix(".config.txt"))
    sys.stdout.write(summary.to_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simgrasp", description="Synthetic 6-DoF grasp detection pipeline")
    p.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="numeric library threads (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate scenes and rendered clouds")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--objects", type=int, default=None, help="objects per scene (default: config range)")
    g.add_argument("--out", required=True)
    g.add_argument("--config", default=None)
    g.set_defaults(func=cmd_gen)

    lb = sub.add_parser("label", help="generate grasp and collision labels")
    lb.add_argument("--in", dest="inp", required=True)
    lb.add_argument("--gripper", default=None, help="config file with gripper.* keys")
    lb.add_argument("--config", default=None)
    lb.add_argument("--out", default=None, help="label directory (default IN/labels)")
    lb.set_defaults(func=cmd_label)

    t = sub.add_parser("train", help="train the network")
    t.add_argument("--data", required=True)
    t.add_argument("--labels", default=None)
    t.add_argument("--config", default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="predict final grasps for a cloud or a scene directory")
    i.add_argument("--cloud", required=True)
    i.add_argument("--ckpt", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions")
    e.add_argument("--pred", required=True)
    e.add_argument("--scenes", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        parser.error("--threads must be positive")
    if getattr(args, "scenes", 1) is not None and args.command == "gen" and args.scenes < 0:
        parser.error("--scenes must be nonnegative")
    try:
        with threadpool_limits(args.threads), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"simgrasp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, KeyError, SceneError) as exc:
        print(f"simgrasp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
