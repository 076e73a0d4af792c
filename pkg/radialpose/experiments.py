"""
Experiment families: cascade vs parallel, vote-count ablation and loss ablation.

Each run writes into its output directory:

- ``results.csv``: one row per (grid value, seed)
- ``summary.json``: aggregates per grid value
- ``plot.svg``: the swept variable against accuracy (or loss traces)
- ``resolved_config.json``: the config with every default filled in
- ``traces/``: per-trial loss traces (loss-ablation only)

Runs are paired: every grid value sees the same scene and the same oracle
noise for a given seed.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from matplotlib import rc_context
from matplotlib.figure import Figure
from numpy.typing import NDArray

from .config import ExperimentConfig, PipelineParams, SceneConfig, merge_overrides
from .errors import ConfigError, RadialPoseError
from .fileio import read_json, write_csv, write_json, write_trace_csv
from .geometry import PointCloud
from .keypoints import KeypointSet
from .losses import LossKind, steps_to_reach, toy_fit
from .metrics import auc
from .pipeline import PosePipeline
from .simulator import build_object, scene_from_config

logger = logging.getLogger(__name__)

RESULTS_CSV = "results.csv"
SUMMARY_JSON = "summary.json"
PLOT_SVG = "plot.svg"
RESOLVED_CONFIG = "resolved_config.json"
TRACE_DIR = "traces"

POSE_HEADER = (
    "seed",
    "architecture",
    "M",
    "ok",
    "success",
    "add",
    "add_s",
    "vcs",
    "miou",
    "bce",
    "keypoint_error_mean",
    "icp_iterations",
    "error",
)
LOSS_HEADER = ("seed", "loss_kind", "steps_to_threshold", "initial_residual", "final_residual")

LOSS_DEFAULTS: Dict[str, Any] = {
    "rows": 8,
    "steps": 400,
    "lr": 1.0,
    "noise_scale": 0.1,
    "threshold": 1e-3,
}
# smallest gap between two GT radii of one row in structured loss trials
RADIUS_SEPARATION = 0.6


@dataclass
class ExperimentResult:
    kind: str
    output_dir: Path
    rows: List[Dict[str, Any]]
    summary: Dict[str, Any]
    files: List[Path] = field(default_factory=list)


@lru_cache(maxsize=8)
def _object_for(scene: SceneConfig, K: int) -> Tuple[PointCloud, KeypointSet]:
    return build_object(scene, K)


def run_pose_trial(config: ExperimentConfig, architecture: str, M: int, seed: int) -> Dict[str, Any]:
    """
    One pipeline run on the scene of ``seed``. Failures become an ``ok=False``
    row instead of an exception.
    """
    params = config.params.replace(M=M)
    model, keypoints = _object_for(config.scene, params.K)
    row: Dict[str, Any] = {h: None for h in POSE_HEADER}
    row.update(seed=seed, architecture=architecture, M=M, ok=False, success=False)
    try:
        scene = scene_from_config(config.scene, model, keypoints, seed)
        pipeline = PosePipeline(architecture, params, model, keypoints)
        _, report = pipeline.run(scene, config.seg_flip, config.noise.with_seed(seed))
    except RadialPoseError as e:
        logger.warning(f"{architecture} run failed for seed={seed}, M={M}: {e.code}: {e.message}")
        row["error"] = e.code
        return row
    row.update(
        ok=True,
        success=report.success,
        add=report.add,
        add_s=report.add_s,
        vcs=report.vcs,
        miou=report.miou,
        bce=report.bce,
        keypoint_error_mean=float(np.mean(report.keypoint_errors)),
        icp_iterations=report.icp_iterations,
    )
    return row


def structured_trial(seed: int, rows: int, K: int, noise_scale: float) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    GT radii and a perturbed starting point for the loss ablation.

    Within each row the GT radii are at least RADIUS_SEPARATION apart and the
    perturbation sums to zero, so the error lies entirely in the radii
    differences the pair loss constrains.
    """
    rng = np.random.default_rng(seed)
    rank = np.argsort(rng.random((rows, K)), axis=1)
    gt = 0.5 + RADIUS_SEPARATION * rank + rng.uniform(0.0, 0.1, size=(rows, K))
    noise = rng.normal(0.0, noise_scale, size=(rows, K))
    noise -= noise.mean(axis=1, keepdims=True)
    return gt, np.maximum(gt + noise, 0.0)


def run_loss_trial(settings: Mapping[str, Any], K: int, loss_kind: str, seed: int) -> Tuple[Dict[str, Any], list]:
    gt, init = structured_trial(seed, settings["rows"], K, settings["noise_scale"])
    _, trace = toy_fit(gt, init, loss_kind, settings["steps"], settings["lr"])
    row = {
        "seed": seed,
        "loss_kind": loss_kind,
        "steps_to_threshold": steps_to_reach(trace, settings["threshold"]),
        "initial_residual": trace[0].residual,
        "final_residual": trace[-1].residual,
    }
    return row, trace


def _pose_task(task: Tuple[Dict[str, Any], str, int, int]) -> Dict[str, Any]:
    config_dict, architecture, M, seed = task
    return run_pose_trial(ExperimentConfig.from_dict(config_dict), architecture, M, seed)


def _loss_task(task: Tuple[Dict[str, Any], int, str, int]) -> Tuple[Dict[str, Any], list]:
    settings, K, loss_kind, seed = task
    return run_loss_trial(settings, K, loss_kind, seed)


class ExperimentRunner:
    """
    Runs one ExperimentConfig and writes its artifacts.

    Usage:
        result = ExperimentRunner(config).run()
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.output_dir = Path(config.output_dir)
        self.loss_settings = {**LOSS_DEFAULTS, **config.loss}
        logger.info(
            f"ExperimentRunner initialized: kind={config.kind}, seeds={len(config.seeds)}, "
            f"grid={dict(config.grid)}, workers={config.workers}, "
            f"output_dir={self.output_dir}"
        )

    def _map(self, fn: Callable[[Any], Any], tasks: Sequence[Any]) -> List[Any]:
        # map() keeps task order, so results stay seed-ordered with any worker count
        if self.config.workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
                return list(pool.map(fn, tasks))
        return [fn(t) for t in tasks]

    def run(self) -> ExperimentResult:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Experiment {self.config.kind} started")
        if self.config.kind == "loss-ablation":
            result = self._run_loss_ablation()
        else:
            result = self._run_pose_sweep()
        resolved = self.output_dir / RESOLVED_CONFIG
        write_json(resolved, self.config.to_dict())
        result.files.append(resolved)
        logger.info(f"Experiment {self.config.kind} finished: {len(result.rows)} rows in {self.output_dir}")
        return result

    def _pose_grid(self) -> Tuple[str, List[Tuple[str, int]]]:
        if self.config.kind == "votes-ablation":
            return "M", [("cascade", int(m)) for m in self.config.grid["M"]]
        return "architecture", [(a, self.config.params.M) for a in self.config.grid["architecture"]]

    def _run_pose_sweep(self) -> ExperimentResult:
        swept, grid = self._pose_grid()
        config_dict = self.config.to_dict()
        tasks = [(config_dict, arch, m, seed) for arch, m in grid for seed in self.config.seeds]
        rows = self._map(_pose_task, tasks)

        csv_path = self.output_dir / RESULTS_CSV
        write_csv(csv_path, POSE_HEADER, rows)
        groups = [
            (arch if swept == "architecture" else m, [r for r in rows if r["architecture"] == arch and r["M"] == m])
            for arch, m in grid
        ]
        summary = {
            "kind": self.config.kind,
            "swept": swept,
            "seeds": len(self.config.seeds),
            "groups": [summarize_pose_rows(value, group, self.config.params) for value, group in groups],
        }
        summary_path = self.output_dir / SUMMARY_JSON
        write_json(summary_path, summary)
        plot_path = self.output_dir / PLOT_SVG
        plot_pose_summary(summary, plot_path)
        return ExperimentResult(self.config.kind, self.output_dir, rows, summary, [csv_path, summary_path, plot_path])

    def _run_loss_ablation(self) -> ExperimentResult:
        settings = self.loss_settings
        kinds = [LossKind(k).value for k in self.config.grid["loss_kind"]]
        K = self.config.params.K
        tasks = [(settings, K, kind, seed) for kind in kinds for seed in self.config.seeds]
        outcomes = self._map(_loss_task, tasks)

        trace_dir = self.output_dir / TRACE_DIR
        trace_dir.mkdir(exist_ok=True)
        files = []
        for row, trace in outcomes:
            path = trace_dir / f"{row['loss_kind']}_seed{row['seed']}.csv"
            write_trace_csv(path, trace)
            files.append(path)
        rows = [row for row, _ in outcomes]
        csv_path = self.output_dir / RESULTS_CSV
        write_csv(csv_path, LOSS_HEADER, rows)

        mean_traces = {
            kind: np.mean([[s.residual for s in trace] for row, trace in outcomes if row["loss_kind"] == kind], axis=0)
            for kind in kinds
        }
        summary = summarize_loss_rows(rows, kinds, settings)
        summary_path = self.output_dir / SUMMARY_JSON
        write_json(summary_path, summary)
        plot_path = self.output_dir / PLOT_SVG
        plot_loss_traces(mean_traces, settings["threshold"], plot_path)
        files += [csv_path, summary_path, plot_path]
        return ExperimentResult(self.config.kind, self.output_dir, rows, summary, files)


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def summarize_pose_rows(value: Any, rows: Sequence[Mapping[str, Any]], params: PipelineParams) -> Dict[str, Any]:
    """Aggregates for one grid value; failed runs count as misses and as infinite error."""
    ok = [r for r in rows if r["ok"]]
    decisive = "add_s" if params.symmetric else "add"
    add_like = [r[decisive] if r["ok"] else float("inf") for r in rows]
    add_s = [r["add_s"] if r["ok"] else float("inf") for r in rows]
    return {
        "value": value,
        "runs": len(rows),
        "failures": len(rows) - len(ok),
        "success_rate": sum(bool(r["success"]) for r in rows) / len(rows),
        "mean_vcs": _mean([r["vcs"] for r in ok]),
        "mean_add": _mean([r["add"] for r in ok]),
        "mean_add_s": _mean([r["add_s"] for r in ok]),
        "mean_miou": _mean([r["miou"] for r in ok]),
        "add_auc": auc(add_like),
        "add_s_auc": auc(add_s),
    }


def summarize_loss_rows(rows: Sequence[Mapping[str, Any]], kinds: Sequence[str], settings: Mapping[str, Any]) -> Dict[str, Any]:
    per_kind = {}
    for kind in kinds:
        reached = [r["steps_to_threshold"] for r in rows if r["loss_kind"] == kind and r["steps_to_threshold"] is not None]
        trials = sum(r["loss_kind"] == kind for r in rows)
        per_kind[kind] = {
            "trials": trials,
            "reached": len(reached),
            "mean_steps": _mean(reached),
            "mean_final_residual": _mean([r["final_residual"] for r in rows if r["loss_kind"] == kind]),
        }
    summary: Dict[str, Any] = {"kind": "loss-ablation", "threshold": settings["threshold"], "per_kind": per_kind}
    if {"residual", "combined"} <= set(kinds):
        summary["combined_not_slower"] = combined_not_slower_fraction(rows)
    return summary


def combined_not_slower_fraction(rows: Sequence[Mapping[str, Any]]) -> float:
    """Share of seeds where the combined loss reaches the threshold in no more steps than residual-only."""
    steps = {(r["loss_kind"], r["seed"]): r["steps_to_threshold"] for r in rows}
    seeds = sorted({r["seed"] for r in rows})
    wins = 0
    for seed in seeds:
        combined, residual = steps.get(("combined", seed)), steps.get(("residual", seed))
        if combined is not None and (residual is None or combined <= residual):
            wins += 1
    return wins / len(seeds)


def _save_svg(fig: Figure, path: Path) -> None:
    with rc_context({"svg.hashsalt": "radialpose", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    logger.info(f"Plot written: {path}")


def plot_pose_summary(summary: Mapping[str, Any], path: Path) -> None:
    groups = summary["groups"]
    labels = [str(g["value"]) for g in groups]
    x = np.arange(len(groups))
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    ax.plot(x, [g["success_rate"] for g in groups], marker="o", label="ADD(S) success rate")
    ax.plot(x, [g["add_auc"] for g in groups], marker="s", label="ADD(S) AUC")
    ax.plot(x, [g["mean_vcs"] or 0.0 for g in groups], marker="^", label="mean VCS")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_xlabel(summary["swept"])
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    ax.set_title(summary["kind"])
    _save_svg(fig, path)


def plot_loss_traces(mean_traces: Mapping[str, NDArray[np.float64]], threshold: float, path: Path) -> None:
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    for kind, trace in mean_traces.items():
        ax.plot(np.arange(len(trace)), trace, label=kind)
    ax.axhline(threshold, color="gray", linestyle="--", linewidth=1, label="threshold")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("mean residual loss")
    ax.grid(True, alpha=0.3)
    ax.legend()
    ax.set_title("loss-ablation")
    _save_svg(fig, path)


def load_experiment_config(config_path: str | Path, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """
    Read a JSON experiment config and merge CLI overrides into it.

    Raises:
        ConfigError: unreadable JSON, unknown kind, invalid grid, empty seed list
    """
    try:
        data = read_json(config_path)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {config_path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a JSON object")
    return ExperimentConfig.from_dict(merge_overrides(data, overrides or {}))


def run_experiment(config_path: str | Path, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentResult:
    """Validate the config fully, then run it."""
    return ExperimentRunner(load_experiment_config(config_path, overrides)).run()
