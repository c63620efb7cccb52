"""Command line interface: dataset simulation, resampling, statistics,
evaluation, subset selection and chain optimization.

All commands take a single JSON config file; every numeric setting has a
default, so a minimal config is runnable. Exit codes: 0 success, 2 config
error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

from . import __version__
from .errors import ConfigError, DataError, RangeforgeError, WorkspaceLocked
from .geometry import PointCloud, RangeSpec
from .io import (
    DatasetLayout,
    read_cloud,
    read_labels,
    select_subsets,
    write_cloud,
    write_labels,
    write_manifest,
)
from .mcmc import (
    ConstantObjective,
    ExternalObjective,
    SurrogateObjective,
    default_bounds,
    default_step,
    run_chain,
)
from .metrics import ApVector, Box3D, EvalConfig, density_stats, per_range_ap
from .resampling import (
    DEFAULT_T_NORM,
    DEFAULT_WINDOW,
    Method,
    ResampleParams,
    SensorSpec,
    resample_pipeline,
)
from .synth import Scene, simulate_scan

SENSOR_PRESETS = {
    "waymo64": SensorSpec.waymo_like,
    "once40": SensorSpec.once_like,
}


class RunConfig:
    """Parsed config document with defaults for every setting."""

    def __init__(self, doc: dict, base_dir: Path):
        if not isinstance(doc, dict):
            raise ConfigError("config top level must be an object")
        self.doc = doc
        self.base_dir = base_dir

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls(doc, path.parent)

    def range_spec(self) -> RangeSpec:
        try:
            return RangeSpec(tuple(self.doc.get("ranges", RangeSpec().boundaries)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"ranges: {exc}") from exc

    def sensor(self) -> SensorSpec:
        section = self.doc.get("sensor", {"preset": "waymo64"})
        try:
            if "preset" in section:
                name = section["preset"]
                if name not in SENSOR_PRESETS:
                    raise ConfigError(
                        f"unknown sensor preset {name!r}; options: {sorted(SENSOR_PRESETS)}"
                    )
                return SENSOR_PRESETS[name]()
            return SensorSpec(
                beam_count=int(section["beam_count"]),
                delta_elev=float(section["delta_elev"]),
                delta_azim=float(section["delta_azim"]),
                fov=tuple(section["fov"]),
                beam_elevations=(
                    tuple(section["beam_elevations"])
                    if section.get("beam_elevations") is not None
                    else None
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"sensor: {exc}") from exc

    def resample_params(self) -> ResampleParams:
        section = self.doc.get("resample", {})
        n_rings = self.range_spec().n_rings
        try:
            params = ResampleParams(
                method=Method(section.get("method", "passthrough")),
                values=tuple(section.get("values", (1.0,) * n_rings)),
                rng_seed=int(section.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"resample: {exc}") from exc
        params.validate(n_rings)
        return params

    def resample_options(self) -> dict:
        section = self.doc.get("resample", {})
        return {
            "window": int(section.get("window", DEFAULT_WINDOW)),
            "t_norm": float(section.get("t_norm", DEFAULT_T_NORM)),
            "include_anchor_in_mean": bool(section.get("include_anchor_in_mean", True)),
        }

    def eval_config(self) -> EvalConfig:
        section = self.doc.get("eval", {})
        try:
            kwargs = {"range_spec": self.range_spec()}
            if "iou_thresholds" in section:
                kwargs["iou_thresholds"] = {
                    str(k): float(v) for k, v in section["iou_thresholds"].items()
                }
            if "recall_positions" in section:
                kwargs["recall_positions"] = int(section["recall_positions"])
            return EvalConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"eval: {exc}") from exc

    def mcmc_section(self) -> dict:
        return self.doc.get("mcmc", {})

    def scenes(self) -> List[dict]:
        if "scenes" in self.doc:
            return list(self.doc["scenes"])
        if "scene" in self.doc:
            return [self.doc["scene"]]
        raise ConfigError("simulate needs a 'scene' or 'scenes' section")

    def subset_sizes(self):
        section = self.doc.get("subsets", {})
        return int(section.get("train", 1000)), int(section.get("val", 250))


def _parse_scene(doc: dict) -> tuple:
    try:
        frame_id = str(doc.get("frame_id", "000000"))
        objects = []
        for record in doc.get("objects", []):
            objects.append(
                Box3D(
                    center=tuple(record["center"]),
                    dims=tuple(record["dims"]),
                    yaw=float(record.get("yaw", 0.0)),
                    class_label=str(record["class"]),
                    frame_id=frame_id,
                )
            )
        scene = Scene(
            objects=tuple(objects),
            ground_z=doc.get("ground_z", -1.8),
            max_range=float(doc.get("max_range", 80.0)),
        )
        return frame_id, scene
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scene: {exc}") from exc


def _thread_count() -> int:
    env = os.environ.get("RANGEFORGE_THREADS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError as exc:
        raise ConfigError(f"RANGEFORGE_THREADS={env!r} is not an integer") from exc


def _map_frames(work, frame_ids):
    """Apply ``work(frame_id)`` over frames, optionally in a thread pool."""
    threads = _thread_count()
    if threads == 1 or len(frame_ids) < 2:
        return [work(fid) for fid in frame_ids]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, frame_ids))


def cmd_simulate(args) -> int:
    config = RunConfig.from_file(args.config)
    sensor = config.sensor()
    out = DatasetLayout(args.output).create()
    frame_ids = []
    for doc in config.scenes():
        frame_id, scene = _parse_scene(doc)
        cloud, boxes = simulate_scan(
            scene, sensor, range_noise_sigma=float(doc.get("range_noise_sigma", 0.0)),
            noise_seed=int(doc.get("noise_seed", 0)),
        )
        write_cloud(cloud, out.points_path(frame_id))
        write_labels(boxes, out.labels_path(frame_id))
        frame_ids.append(frame_id)
        print(f"{frame_id}: {len(cloud)} points, {len(boxes)} boxes")
    write_manifest(frame_ids, out.manifest_path)
    return 0


def cmd_subset(args) -> int:
    config = RunConfig.from_file(args.config)
    dataset = DatasetLayout(args.input)
    n_train, n_val = config.subset_sizes()
    train, val = select_subsets(dataset.frame_ids(), n_train, n_val)
    out_dir = Path(args.output) if args.output else dataset.root
    write_manifest(train, out_dir / "train.txt")
    write_manifest(val, out_dir / "val.txt")
    print(f"train: {len(train)} frames -> {out_dir / 'train.txt'}")
    print(f"val:   {len(val)} frames -> {out_dir / 'val.txt'}")
    return 0


def cmd_resample(args) -> int:
    config = RunConfig.from_file(args.config)
    spec = config.range_spec()
    params = config.resample_params()
    options = config.resample_options()
    sensor = config.sensor() if params.method is Method.DGR else None
    src = DatasetLayout(args.input)
    dst = DatasetLayout(args.output).create()
    frame_ids = src.frame_ids()
    started = time.perf_counter()

    def work(frame_id: str):
        cloud = read_cloud(src.points_path(frame_id))
        out, report = resample_pipeline(cloud, spec, params, sensor, **options)
        write_cloud(out, dst.points_path(frame_id))
        label_src = src.labels_path(frame_id)
        if label_src.exists():
            dst.labels_path(frame_id).write_bytes(label_src.read_bytes())
        return frame_id, report

    reports = _map_frames(work, frame_ids)
    write_manifest(frame_ids, dst.manifest_path)
    provenance = {
        "tool": "rangeforge",
        "version": __version__,
        "method": params.method.value,
        "values": list(params.values),
        "seed": params.rng_seed,
        "ranges": list(spec.boundaries),
        "window": options["window"],
        "t_norm": options["t_norm"],
        "elapsed_sec": time.perf_counter() - started,
        "frames": {fid: report.to_dict() for fid, report in reports},
    }
    (dst.root / "provenance.json").write_text(json.dumps(provenance, indent=2) + "\n")
    total_in = sum(r.n_in for _, r in reports)
    total_out = sum(r.n_out for _, r in reports)
    print(f"{len(frame_ids)} frames: {total_in} -> {total_out} points")
    return 0


def cmd_stats(args) -> int:
    config = RunConfig.from_file(args.config)
    spec = config.range_spec()
    dataset = DatasetLayout(args.input)

    def load(frame_id: str):
        cloud = read_cloud(dataset.points_path(frame_id))
        label_path = dataset.labels_path(frame_id)
        boxes = read_labels(label_path) if label_path.exists() else []
        return cloud, boxes

    frames = _map_frames(load, dataset.frame_ids())
    stats = density_stats(frames, spec)
    Path(args.output).write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
    print(f"wrote {args.output}")
    if args.csv:
        lines = ["class,range,mean_points,boxes"]
        for (cls_name, ring), mean in sorted(stats.mean_points.items()):
            lines.append(
                f"{cls_name},{stats.ring_label(ring)},{mean},{stats.box_counts[(cls_name, ring)]}"
            )
        Path(args.csv).write_text("\n".join(lines) + "\n")
        print(f"wrote {args.csv}")
    return 0


def cmd_evaluate(args) -> int:
    config = RunConfig.from_file(args.config)
    eval_config = config.eval_config()
    gt_root = DatasetLayout(args.ground_truth)
    det_dir = Path(args.detections)
    detections: List[Box3D] = []
    ground_truth: List[Box3D] = []
    for frame_id in gt_root.frame_ids():
        label_path = gt_root.labels_path(frame_id)
        if label_path.exists():
            ground_truth.extend(read_labels(label_path))
        det_path = det_dir / f"{frame_id}.json"
        if det_path.exists():
            detections.extend(read_labels(det_path))
    result = per_range_ap(detections, ground_truth, eval_config)
    doc = result.mean_ap.to_dict()
    doc["per_class"] = {name: ap.to_dict() for name, ap in result.per_class.items()}
    Path(args.output).write_text(json.dumps(doc, indent=2) + "\n")
    print(f"overall AP {result.mean_ap.overall:.4f} -> {args.output}")
    return 0


def _build_objective(config: RunConfig, workspace: Path, n_rings: int):
    section = config.mcmc_section().get("objective", {})
    kind = section.get("kind", "quadratic")
    if kind == "quadratic":
        target = section.get("target")
        if target is None:
            raise ConfigError("mcmc.objective.target required for kind 'quadratic'")
        return SurrogateObjective(tuple(float(v) for v in target), n_rings)
    if kind == "constant":
        return ConstantObjective(
            ApVector(float(section.get("overall", 0.0)),
                     tuple(section.get("ranges", (0.0,) * n_rings)))
        )
    if kind == "external":
        command = section.get("command")
        if not command:
            raise ConfigError("mcmc.objective.command required for kind 'external'")
        dataset = None
        train_ids: List[str] = []
        val_ids: List[str] = []
        if "dataset" in section:
            dataset = DatasetLayout(config.base_dir / section["dataset"])
            manifest = dataset.frame_ids()
            n_train, n_val = config.subset_sizes()
            train_ids, val_ids = select_subsets(manifest, n_train, n_val)
        return ExternalObjective(
            command=[str(c) for c in command],
            workspace=workspace,
            dataset=dataset,
            train_ids=train_ids,
            val_ids=val_ids,
            range_spec=config.range_spec(),
            sensor=config.sensor(),
            timeout_sec=float(section.get("timeout_sec", 3600.0)),
        )
    raise ConfigError(f"unknown objective kind {kind!r}")


class _WorkspaceLock:
    """One live process per workspace; stale locks from dead PIDs are stolen."""

    def __init__(self, workspace: Path):
        self.path = Path(workspace) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, str(os.getpid()).encode())
                os.close(fd)
                return self
            except FileExistsError:
                try:
                    pid = int(self.path.read_text().strip())
                    os.kill(pid, 0)
                except (ValueError, FileNotFoundError, ProcessLookupError):
                    self.path.unlink(missing_ok=True)
                    continue
                except PermissionError:
                    pass
                raise WorkspaceLocked(f"workspace is owned by live pid {pid}")
        raise WorkspaceLocked(f"could not acquire {self.path}")

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def cmd_optimize(args) -> int:
    config = RunConfig.from_file(args.config)
    section = config.mcmc_section()
    n_rings = config.range_spec().n_rings
    workspace = Path(args.workspace)
    method = Method(section.get("method", "rs"))
    init = ResampleParams(
        method=method,
        values=tuple(section.get("init", (1.0,) * n_rings)),
        rng_seed=int(section.get("theta_seed", 0)),
    )
    sensor = config.sensor() if method is Method.DGR else None
    step = section.get("step")
    bounds = section.get("bounds")
    objective = _build_objective(config, workspace, n_rings)
    with _WorkspaceLock(workspace):
        state = run_chain(
            objective,
            init,
            n_iter=int(section.get("iterations", 500)),
            rng_seed=int(section.get("seed", 0)),
            workspace=workspace,
            sigma=float(section.get("sigma", 0.5)),
            step=float(step) if step is not None else default_step(method),
            bounds=tuple(bounds) if bounds is not None else default_bounds(method, sensor),
            acceptance=section.get("acceptance", "metropolis"),
            stop_after=args.stop_after,
            resume=args.resume,
        )
    print(
        f"t={state.t}/{state.n_iter} best overall AP {state.p_best.overall:.4f} "
        f"at {list(state.theta_best.values)}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rangeforge",
        description="Range-stratified point cloud density manipulation and "
        "hyperparameter search.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset from scene configs")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True, help="dataset root to create")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("subset", help="deterministic train/val manifest selection")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True, help="dataset root")
    p.add_argument("--output", help="directory for train.txt/val.txt (default: dataset root)")
    p.set_defaults(func=cmd_subset)

    p = sub.add_parser("resample", help="materialize a density-modified dataset copy")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True, help="source dataset root")
    p.add_argument("--output", required=True, help="destination dataset root")
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("stats", help="per-class, per-range object density statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True, help="dataset root")
    p.add_argument("--output", required=True, help="stats JSON path")
    p.add_argument("--csv", help="optional CSV path")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("evaluate", help="AP per range for detections against ground truth")
    p.add_argument("--config", required=True)
    p.add_argument("--ground-truth", required=True, help="dataset root with labels")
    p.add_argument("--detections", required=True, help="directory of <frame>.json detections")
    p.add_argument("--output", required=True, help="ap JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize", help="run or resume the hyperparameter search chain")
    p.add_argument("--config", required=True)
    p.add_argument("--workspace", required=True, help="chain workspace directory")
    p.add_argument("--resume", action="store_true", help="continue from chain.json")
    p.add_argument("--stop-after", type=int, help="halt after this iteration's checkpoint")
    p.set_defaults(func=cmd_optimize)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except RangeforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
