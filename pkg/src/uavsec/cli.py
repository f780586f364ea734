"""Command-line entry point: ``uavsec train | evaluate | sweep``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .harness import MODES, RunFailed, eval_metrics, evaluate_saved, export_training_curve, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("uavsec")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def _cmd_train(args) -> int:
    cfg = _config(args.config)
    manifest = run_experiment(args.mode, cfg, args.seed, args.out_dir)
    for key, value in sorted(manifest.summary.items()):
        print(f"{key}: {value}")
    print(f"outputs written to {args.out_dir}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = _config(args.config)
    if args.mode in ("dqn", "tabular") and not args.artifact:
        raise ConfigError(f"--artifact (checkpoint or Q-table) is required for mode {args.mode}")
    if args.mode == "static-optimal":
        raise ConfigError("static-optimal needs no evaluation; use `train --mode static-optimal`")
    episodes = args.episodes or cfg.dqn.eval_episodes
    result = evaluate_saved(args.mode, cfg, args.seed, episodes, args.artifact)
    print(f"episodes: {episodes}")
    print(f"mean_cumulative_reward: {result.mean_cumulative_reward!r}")
    print(f"mean_secrecy_capacity: {result.mean_secrecy_capacity!r}")
    print(f"final_position[0]: {result.final_positions[0].as_tuple()}")
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        path = export_training_curve(eval_metrics(result), Path(args.out_dir) / "evaluation.csv")
        print(f"wrote {path}")
    return EXIT_OK


def _sweep_one(job):
    mode, cfg, seed, out_dir = job
    try:
        m = run_experiment(mode, cfg, seed, out_dir)
        return seed, m.status, m.summary.get("eval_mean_secrecy_capacity"), m.summary.get("eval_mean_cumulative_reward")
    except RunFailed as exc:
        return seed, "failed", None, None


def _cmd_sweep(args) -> int:
    cfg = _config(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(args.mode, cfg, s, out / f"seed_{s}") for s in args.seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "status", "eval_mean_secrecy_capacity", "eval_mean_cumulative_reward"])
        for seed, status, sec, ret in rows:
            w.writerow([seed, status, "" if sec is None else repr(sec), "" if ret is None else repr(ret)])
    for row in rows:
        print(*row)
    return EXIT_OK if all(r[1] == "completed" for r in rows) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uavsec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="YAML config file (defaults used when omitted)")
        sp.add_argument("--mode", choices=MODES, default="dqn")
        sp.add_argument("--out-dir", required=out_required)

    t = sub.add_parser("train", help="run one experiment")
    common(t)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("evaluate", help="greedy evaluation of a saved checkpoint, Q-table or baseline")
    common(e, out_required=False)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--artifact", help="model.qmlp (dqn) or qtable.csv (tabular)")
    e.add_argument("--episodes", type=int)
    e.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("sweep", help="one run per seed")
    common(s)
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunFailed as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
