"""Command-line entry points: train, eval, overhead."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from ramac.controllers import ALGORITHMS, run_episode
from ramac.harness import (
    ExperimentConfig,
    emit_outputs,
    load_checkpoint,
    load_config,
    overhead_table,
    run_experiment,
    save_checkpoint,
    summarize,
    write_overhead_csv,
    _episode_row,
)
from ramac.simulator import Simulator


def _cmd_train(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.runs is not None:
        overrides["runs"] = args.runs
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.algo is not None:
        overrides["algorithm"] = args.algo
    if overrides:
        config = dataclasses.replace(config, **overrides)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-probe"
    probe.write_text("")  # fail before the campaign if the path is unwritable
    probe.unlink()

    def progress(run, episode):
        if args.verbose and (episode + 1) % 100 == 0:
            print(f"run {run}: episode {episode + 1}/{config.episodes}", file=sys.stderr)

    result = run_experiment(config, progress=progress)
    paths = emit_outputs(result, out)
    save_checkpoint(result, out)
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    print(f"wrote {paths['episodes']}, {paths['summary']}, {paths['timeseries']}")
    return 0


def _cmd_eval(args) -> int:
    controller, config = load_checkpoint(args.checkpoint, run=args.run)
    config = dataclasses.replace(config, episodes=args.episodes, runs=1)
    rows = []
    seeds = np.random.SeedSequence([config.master_seed, args.run, 7]).spawn(args.episodes)
    for episode in range(args.episodes):
        sim = Simulator(config.sim, device_seeds=seeds[episode].spawn(config.sim.n_devices))
        metrics = run_episode(sim, controller)
        rows.append(_episode_row(0, episode, config.algorithm, sim, metrics, config.sim))
    summary = summarize(dataclasses.replace(config, summary_window=args.episodes), rows)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_overhead(args) -> int:
    table = overhead_table(
        range(2, args.nmax + 1), history_len=args.history_len, eps=args.eps
    )
    if args.out:
        write_overhead_csv(table, args.out)
        print(f"wrote {args.out}")
    else:
        for row in table:
            print(row)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ramac",
        description="Random-access MAC simulation and decentralized learning campaigns",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a seeded training/evaluation campaign")
    train.add_argument("--config", help="flat YAML config file")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--seed", type=int, help="override master seed")
    train.add_argument("--runs", type=int, help="override number of runs")
    train.add_argument("--episodes", type=int, help="override episodes per run")
    train.add_argument("--algo", choices=ALGORITHMS, help="override algorithm")
    train.add_argument("--verbose", action="store_true")
    train.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="evaluate a saved checkpoint with frozen policies")
    ev.add_argument("--checkpoint", required=True, help="checkpoint directory")
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--run", type=int, default=0, help="which run's parameters to load")
    ev.set_defaults(func=_cmd_eval)

    ov = sub.add_parser("overhead", help="per-step communication overhead comparison")
    ov.add_argument("--eps", type=float, default=0.005, help="consensus accuracy target")
    ov.add_argument("--nmax", type=int, default=64, help="largest device count")
    ov.add_argument("--history-len", type=int, default=4)
    ov.add_argument("--out", help="CSV output path")
    ov.set_defaults(func=_cmd_overhead)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
