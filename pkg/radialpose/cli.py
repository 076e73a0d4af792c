"""
Command-line surface.

    radialpose synth        --out scene.ply [scene flags]
    radialpose run ARCH     --out-dir DIR [--scene scene.ply] [pipeline flags]
    radialpose eval         --scene scene.ply --pose pose.json
    radialpose demo-voting  --out-dir DIR [--dump-accumulators]
    radialpose ablate-votes --out-dir DIR [--config exp.json] [--M-grid 128 256 ...]
    radialpose ablate-loss  --out-dir DIR [--config exp.json]
    radialpose experiment   --config exp.json

Flags override the JSON config; the resolved config is written next to every
result. Errors go to stderr as one JSON object; the exit code is 2 for config
errors and 1 for everything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .config import (
    EXPERIMENT_KINDS,
    MODEL_SHAPES,
    ExperimentConfig,
    RunConfig,
    merge_overrides,
    resolve_log_level,
)
from .errors import ConfigError, RadialPoseError
from .experiments import RESOLVED_CONFIG, ExperimentRunner, load_experiment_config
from .fileio import (
    load_pose,
    load_scene,
    read_json,
    read_scene_recipe,
    save_keypoints,
    save_pose,
    save_scene,
    write_json,
)
from .metrics import add_decision, add_metric, add_s_metric
from .pipeline import ARCHITECTURES, PosePipeline
from .simulator import Scene, build_object, oracle_offsets, oracle_regressor, scene_from_config
from .voting import (
    cast_radial_votes,
    dump_accumulator,
    estimate_keypoints,
    estimate_keypoints_offset,
    new_accumulator,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="RunConfig JSON (seed, scene, params, noise, seg_flip)")
    parser.add_argument("--seed", type=int, help="scene and noise seed")
    scene = parser.add_argument_group("scene")
    scene.add_argument("--shape", choices=MODEL_SHAPES)
    scene.add_argument("--model-points", type=int)
    scene.add_argument("--model-size", type=float)
    scene.add_argument("--keypoint-scheme", choices=("fps", "bbox"))
    scene.add_argument("--clutter", type=float, help="clutter fraction in [0, 1)")
    scene.add_argument("--occlusion", type=float, help="occluded fraction of the model")
    scene.add_argument("--sensor-sigma", type=float)
    pipeline = parser.add_argument_group("pipeline")
    pipeline.add_argument("--N", type=int, dest="N", help="scene point budget")
    pipeline.add_argument("--M", type=int, dest="M", help="number of voters")
    pipeline.add_argument("--K", type=int, dest="K", help="number of keypoints (fps scheme)")
    pipeline.add_argument("--rho", type=float, help="voxel edge, normalized units")
    pipeline.add_argument("--icp", action="store_true", default=None, help="refine with ICP")
    pipeline.add_argument("--fit-method", choices=("svd", "horn"))
    pipeline.add_argument("--sampling", choices=("uniform", "probability"))
    pipeline.add_argument("--symmetric", action="store_true", default=None, help="decide with ADD-S")
    noise = parser.add_argument_group("oracles")
    noise.add_argument("--sigma", type=float, help="radius noise std-dev, normalized units")
    noise.add_argument("--outliers", type=float, help="outlier fraction of radii")
    noise.add_argument("--seg-flip", type=float, help="segmentation label flip rate")


def _run_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "seed": args.seed,
        "seg_flip": args.seg_flip,
        "scene": {
            "shape": args.shape,
            "model_points": args.model_points,
            "model_size": args.model_size,
            "keypoint_scheme": args.keypoint_scheme,
            "clutter_fraction": args.clutter,
            "occlusion_fraction": args.occlusion,
            "sensor_sigma": args.sensor_sigma,
        },
        "params": {
            "N": args.N,
            "M": args.M,
            "K": args.K,
            "rho": args.rho,
            "use_icp": args.icp,
            "fit_method": args.fit_method,
            "sampling": args.sampling,
            "symmetric": args.symmetric,
        },
        "noise": {"gaussian_sigma": args.sigma, "outlier_fraction": args.outliers},
    }


def _load_json_object(path: str) -> Dict[str, Any]:
    try:
        data = read_json(path)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return data


def resolve_run_config(args: argparse.Namespace, base: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults < scene recipe < config file < flags."""
    data: Dict[str, Any] = dict(base or {})
    if args.config:
        data = merge_overrides(data, _load_json_object(args.config))
    return RunConfig.from_dict(merge_overrides(data, _run_overrides(args)))


def _scene_and_object(args: argparse.Namespace):
    """Load ``--scene`` (taking the model recipe from its sidecar) or synthesize one."""
    base = None
    if getattr(args, "scene", None):
        recipe = read_scene_recipe(args.scene)
        base = {"scene": recipe} if recipe else None
    config = resolve_run_config(args, base)
    model, keypoints = build_object(config.scene, config.params.K)
    if getattr(args, "scene", None):
        scene = load_scene(args.scene)
        if len(scene.scene_keypoints) != len(keypoints):
            raise ConfigError(
                f"scene {args.scene} carries {len(scene.scene_keypoints)} keypoints, "
                f"the run is configured for {len(keypoints)}"
            )
    else:
        scene = scene_from_config(config.scene, model, keypoints, config.seed)
    return config, scene, model, keypoints


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_synth(args: argparse.Namespace) -> int:
    config = resolve_run_config(args)
    model, keypoints = build_object(config.scene, config.params.K)
    scene = scene_from_config(config.scene, model, keypoints, config.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scene(scene, out, recipe=config.scene.to_dict())
    save_keypoints(out.with_name(out.stem + "_keypoints.json"), keypoints)
    write_json(out.parent / RESOLVED_CONFIG, config.to_dict())
    _emit({
        "scene": str(out),
        "points": len(scene),
        "foreground": int(np.count_nonzero(scene.labels == 1)),
        "diameter": keypoints.diameter,
    })
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config, scene, model, keypoints = _scene_and_object(args)
    pipeline = PosePipeline(args.architecture, config.params, model, keypoints)
    T_est, report = pipeline.run(scene, config.seg_flip, config.noise.with_seed(config.seed))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_pose(out_dir / "pose.json", T_est)
    write_json(out_dir / "report.json", report.to_dict())
    write_json(out_dir / RESOLVED_CONFIG, config.to_dict())
    _emit({
        "architecture": report.architecture,
        "success": report.success,
        "add": report.add,
        "add_s": report.add_s,
        "vcs": report.vcs,
    })
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config, scene, model, keypoints = _scene_and_object(args)
    T_est = load_pose(args.pose)
    add = add_metric(model, scene.gt_pose, T_est)
    add_s = add_s_metric(model, scene.gt_pose, T_est)
    decisive = add_s if config.params.symmetric else add
    result = {
        "add": add,
        "add_s": add_s,
        "diameter": keypoints.diameter,
        "symmetric": config.params.symmetric,
        "success": add_decision(decisive, keypoints.diameter),
    }
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.pose).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "eval.json", result)
    write_json(out_dir / RESOLVED_CONFIG, config.to_dict())
    _emit(result)
    return EXIT_OK


def demo_voting(config: RunConfig, scene: Scene, dump_dir: Optional[Path] = None) -> Dict[str, Any]:
    """
    Radial and offset voting on the GT foreground of one scene with the same
    noise level; reports per-keypoint errors of both in normalized units.
    """
    params = config.params
    fg_idx = np.flatnonzero(scene.labels == 1)
    rng = np.random.default_rng(config.seed)
    picked = np.sort(rng.choice(fg_idx, size=min(params.M, fg_idx.size), replace=False))
    voters = scene.cloud.subset(picked)
    voting = params.voting
    bounds = voting.bounds()
    noise = config.noise.with_seed(config.seed)
    radii = oracle_regressor(voters, scene.scene_keypoints, noise)
    offsets = oracle_offsets(voters, scene.scene_keypoints, noise, bounds)
    radial = estimate_keypoints(voters, radii, voting.rho, bounds, voting.max_voxels)
    offset = estimate_keypoints_offset(voters, offsets, voting.rho, bounds, voting.max_voxels)
    kps = scene.scene_keypoints
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
        for i in range(radii.shape[1]):
            acc = new_accumulator(bounds[0], bounds[1], voting.rho, voting.max_voxels)
            cast_radial_votes(acc, voters.points, radii.values[:, i])
            dump_accumulator(acc, dump_dir / f"radial_k{i}.rpac")
    return {
        "voters": len(voters),
        "rho": voting.rho,
        "radial_errors": [float(np.linalg.norm(e.position - kps[e.keypoint_index])) for e in radial],
        "offset_errors": [float(np.linalg.norm(e.position - kps[e.keypoint_index])) for e in offset],
        "radial_scores": [e.score for e in radial],
        "offset_scores": [e.score for e in offset],
    }


def cmd_demo_voting(args: argparse.Namespace) -> int:
    config, scene, _, _ = _scene_and_object(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = demo_voting(config, scene, out_dir / "accumulators" if args.dump_accumulators else None)
    write_json(out_dir / "demo_voting.json", result)
    write_json(out_dir / RESOLVED_CONFIG, config.to_dict())
    _emit(result)
    return EXIT_OK


def _experiment_overrides(args: argparse.Namespace, kind: Optional[str]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        "kind": kind,
        "output_dir": args.out_dir,
        "workers": args.workers,
        "seeds": list(range(args.seeds)) if args.seeds is not None else None,
    }
    if getattr(args, "M_grid", None):
        overrides["grid"] = {"M": list(args.M_grid)}
    return overrides


def _run_experiment_command(args: argparse.Namespace, kind: Optional[str]) -> int:
    overrides = _experiment_overrides(args, kind)
    if args.config:
        config = load_experiment_config(args.config, overrides)
    else:
        data = merge_overrides({"seeds": list(range(10))}, overrides)
        if kind == "votes-ablation" and "grid" not in data:
            data["grid"] = {"M": [2**7, 2**8, 2**9, 2**10, 2**11]}
        if "output_dir" not in data:
            raise ConfigError("--out-dir is required without --config")
        config = ExperimentConfig.from_dict(data)
    result = ExperimentRunner(config).run()
    _emit({
        "kind": result.kind,
        "output_dir": str(result.output_dir),
        "rows": len(result.rows),
        "files": [str(p) for p in result.files],
    })
    return EXIT_OK


def cmd_ablate_votes(args: argparse.Namespace) -> int:
    return _run_experiment_command(args, "votes-ablation")


def cmd_ablate_loss(args: argparse.Namespace) -> int:
    return _run_experiment_command(args, "loss-ablation")


def cmd_experiment(args: argparse.Namespace) -> int:
    return _run_experiment_command(args, args.kind)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radialpose",
        description="Cascade radial-voting 6DoF pose estimation on synthetic scenes",
    )
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING, ... (default from RADIALPOSE_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a labelled scene to PLY + JSON sidecar")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="output .ply path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run the cascade or parallel pipeline on one scene")
    p.add_argument("architecture", choices=ARCHITECTURES)
    _add_run_flags(p)
    p.add_argument("--scene", help="scene .ply written by synth (synthesized from --seed otherwise)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a pose against a scene's ground truth")
    _add_run_flags(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--pose", required=True, help="pose JSON written by run")
    p.add_argument("--out-dir", help="defaults to the pose file's directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo-voting", help="compare radial and offset voting on one scene")
    _add_run_flags(p)
    p.add_argument("--scene")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dump-accumulators", action="store_true", help="write radial accumulators as .rpac files")
    p.set_defaults(func=cmd_demo_voting)

    for name, func, help_text in (
        ("ablate-votes", cmd_ablate_votes, "vote-count ablation over a grid of M"),
        ("ablate-loss", cmd_ablate_loss, "residual vs combined loss on structured toy problems"),
        ("experiment", cmd_experiment, "run any experiment config"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name == "experiment", help="experiment JSON")
        p.add_argument("--out-dir", help="overrides output_dir")
        p.add_argument("--seeds", type=int, help="use seeds 0..n-1")
        p.add_argument("--workers", type=int)
        if name == "ablate-votes":
            p.add_argument("--M-grid", type=int, nargs="+", dest="M_grid")
        if name == "experiment":
            p.add_argument("--kind", choices=EXPERIMENT_KINDS, help="overrides the config's kind")
        p.set_defaults(func=func)
    return parser


def _fail(error: RadialPoseError) -> int:
    print(json.dumps(error.to_dict(), sort_keys=True), file=sys.stderr)
    return EXIT_CONFIG if isinstance(error, ConfigError) else EXIT_FAILURE


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        level = resolve_log_level(args.log_level)
    except ConfigError as e:
        return _fail(e)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RadialPoseError as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        return _fail(e)
    except OSError as e:
        return _fail(RadialPoseError(str(e)))
    except KeyError as e:
        return _fail(RadialPoseError(f"missing field {e} in input file"))


if __name__ == "__main__":
    sys.exit(main())
