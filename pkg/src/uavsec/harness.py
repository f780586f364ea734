"""Experiment runner: one mode, one seed, one output directory."""
from __future__ import annotations

import csv
import json
import logging
import math
import platform
import traceback
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np

from . import __version__
from .channel import capacity_eve, capacity_ue, distance, secrecy_rate_per_slot
from .config import ExperimentConfig, WorldConfig
from .dqn import EpisodeMetrics, EvalResult, evaluate_with, evaluate_policy, evaluate_random, greedy_action, train_dqn
from .env import UavEnv, optimal_static_policy
from .neural import load_checkpoint, save_checkpoint
from .tabular import Lattice, load_qtable, save_qtable, train_tabular

log = logging.getLogger(__name__)

MODES = ("dqn", "tabular", "random", "static-optimal")
METRIC_COLUMNS = (
    "episode", "cumulative_reward", "mean_c_u", "mean_c_j", "secrecy_capacity",
    "final_dx", "final_dy", "final_power", "epsilon",
)


def _fmt(value) -> str:
    # repr() of a float is locale-independent and round-trips exactly
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def export_training_curve(metrics: Iterable[EpisodeMetrics], path) -> Path:
    rows = list(metrics)
    if not rows:
        raise ValueError("no metrics to export")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in rows:
            w.writerow([_fmt(getattr(m, c)) for c in METRIC_COLUMNS])
    return path


def read_metrics(path) -> List[EpisodeMetrics]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            EpisodeMetrics(int(r["episode"]), *(float(r[c]) for c in METRIC_COLUMNS[1:]))
            for r in reader
        ]


def static_optimal_metrics(config: WorldConfig) -> EpisodeMetrics:
    """Closed-form row for hovering above the UE at peak power for all T slots."""
    pos, p, reward = optimal_static_policy(config)
    ch = config.channel
    c_u = capacity_ue(p, distance(pos, config.ue_pos), ch)
    c_j = capacity_eve(p, distance(config.ue_pos, config.eve_pos), ch)
    return EpisodeMetrics(
        0, config.T * reward, c_u, c_j, secrecy_rate_per_slot(c_u, c_j),
        pos.x - config.ue_pos.x, pos.y - config.ue_pos.y, p, 0.0,
    )


def eval_metrics(result: EvalResult, epsilon: float = 0.0) -> List[EpisodeMetrics]:
    return [r.metrics(i, epsilon) for i, r in enumerate(result.episodes)]


def evaluate_qtable(q: np.ndarray, config: WorldConfig, episodes: int, seed: int) -> EvalResult:
    lattice = Lattice(config)
    return evaluate_with(config, lambda env: greedy_action(q[lattice.key_of(env)]), episodes, seed)


@dataclass
class RunManifest:
    mode: str
    seed: int
    config: Dict
    code_version: str
    started: str
    finished: Optional[str] = None
    status: str = "running"
    outputs: Dict[str, Dict] = field(default_factory=dict)
    summary: Dict = field(default_factory=dict)
    error: Optional[str] = None
    python: str = field(default_factory=platform.python_version)
    numpy: str = np.__version__

    def add_output(self, name: str, path: Path, complete: bool = True) -> None:
        self.outputs[name] = {"path": Path(path).name, "complete": complete}

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunFailed(RuntimeError):
    def __init__(self, message: str, manifest: RunManifest):
        super().__init__(message)
        self.manifest = manifest


def _summary(result: EvalResult) -> Dict:
    return {
        "eval_episodes": len(result.episodes),
        "eval_mean_cumulative_reward": result.mean_cumulative_reward,
        "eval_mean_secrecy_capacity": result.mean_secrecy_capacity,
        "eval_final_position": list(result.final_positions[0].as_tuple()),
        "eval_final_power": result.final_powers[0],
        "eval_final_reward": result.final_rewards[0],
    }


def run_experiment(mode: str, config: ExperimentConfig, seed: int, out_dir) -> RunManifest:
    """Run ``mode`` and write manifest.json, metrics.csv and mode-specific artifacts to ``out_dir``.

    The manifest is written before any work starts and rewritten at the end. On
    failure it records the error and which outputs are incomplete, then
    ``RunFailed`` is raised.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = config.world
    manifest = RunManifest(mode, seed, config.to_dict(), __version__, _now())
    manifest_path = out / "manifest.json"
    metrics_path = out / "metrics.csv"
    manifest.add_output("metrics", metrics_path, complete=False)
    manifest.write(manifest_path)

    try:
        if mode == "static-optimal":
            row = static_optimal_metrics(world)
            export_training_curve([row], metrics_path)
            pos, p, reward = optimal_static_policy(world)
            manifest.summary = {
                "optimal_position": list(pos.as_tuple()), "optimal_power": p, "optimal_reward": reward,
                "eval_mean_secrecy_capacity": row.secrecy_capacity,
                "eval_mean_cumulative_reward": row.cumulative_reward,
            }
        elif mode == "random":
            result = evaluate_random(world, config.dqn.episodes, seed)
            export_training_curve(eval_metrics(result, 1.0), metrics_path)
            manifest.summary = _summary(result)
        elif mode == "tabular":
            trained = train_tabular(world, config.tabular, seed)
            export_training_curve(trained.metrics, metrics_path)
            table_path = out / "qtable.csv"
            save_qtable(trained.q, trained.lattice, table_path)
            manifest.add_output("qtable", table_path)
            ev = evaluate_qtable(trained.q, world, config.dqn.eval_episodes, seed)
            eval_path = export_training_curve(eval_metrics(ev), out / "evaluation.csv")
            manifest.add_output("evaluation", eval_path)
            manifest.summary = _summary(ev)
        else:
            trained = train_dqn(world, config.dqn, seed)
            export_training_curve(trained.metrics, metrics_path)
            ckpt = out / "model.qmlp"
            save_checkpoint(trained.net, ckpt)
            manifest.add_output("checkpoint", ckpt)
            eval_path = export_training_curve(eval_metrics(trained.evaluation), out / "evaluation.csv")
            manifest.add_output("evaluation", eval_path)
            manifest.summary = _summary(trained.evaluation)
            manifest.summary.update(updates=trained.n_updates, target_syncs=trained.n_syncs)
        manifest.add_output("metrics", metrics_path)
        manifest.status = "completed"
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        if getattr(exc, "report", None):
            manifest.summary["failure_report"] = exc.report
        manifest.finished = _now()
        manifest.write(manifest_path)
        raise RunFailed(manifest.error, manifest) from exc
    manifest.finished = _now()
    manifest.write(manifest_path)
    return manifest


def evaluate_saved(mode: str, config: ExperimentConfig, seed: int, episodes: int, artifact=None) -> EvalResult:
    """Greedy evaluation of a stored checkpoint (dqn), Q-table (tabular) or a baseline."""
    world = config.world
    if mode == "dqn":
        env = UavEnv(world)
        net = load_checkpoint(artifact, [env.obs_dim, *config.dqn.hidden, 12])
        return evaluate_policy(net, world, episodes, seed)
    if mode == "tabular":
        lattice = Lattice(world)
        return evaluate_qtable(load_qtable(artifact, lattice), world, episodes, seed)
    if mode == "random":
        return evaluate_random(world, episodes, seed)
    raise ValueError(f"evaluate does not support mode {mode!r}")
