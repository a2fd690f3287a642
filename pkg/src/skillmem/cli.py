"""Command-line experiment harness.

Subcommands: gen-data, train, recall, fault-grid, follow-through,
speed-accuracy, capacity. Each command merges built-in defaults, an
optional smoke profile, an optional config file (``key = value`` lines,
``#`` comments) and ``--set key=value`` overrides, then writes its report
bundle into --out. Exit code is 0 on success; failures print a single
machine-readable line ``error kind=<Type> message=<...>`` on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import demos, experiments
from .sequences import save_sequences

SMOKE_PROFILES = {
    "train": {"epochs": "100", "seeds": "0"},
    "fault-grid": {
        "heldout_trials_per_skill": "10",
        "grid_times": "1.0 2.5 4.0",
        "grid_overshoots": "-10.0 0.0 10.0",
    },
    "follow-through": {"seeds": "0 1", "epochs": "25", "hidden": "64", "recall_per_cue": "4"},
    "speed-accuracy": {"seeds": "0 1", "epochs": "25", "hidden": "64", "recall_per_cue": "4"},
    "capacity": {"seeds": "0 1", "epochs": "60", "hidden": "64", "n_reps": "4"},
    "recall": {},
    "gen-data": {},
}

GEN_DATA_DEFAULTS = {
    "task": "pick_place",
    "n_reps": "10",
    "n_skills": "2",
    "noise": "0.01",
    "seeds": "0",
    "condition": "plan_and_execute",
    "reps_per_cue": "6",
    "amplitude": "0.12",
}


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def run_gen_data(cfg: experiments.RunConfig, out_dir: Path) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    task = cfg.get("task", "pick_place")
    seed = cfg.seeds()[0]
    if task == "pick_place":
        seqs = demos.gen_pick_place(
            n_reps=cfg.get_int("n_reps", 10),
            n_skills=cfg.get_int("n_skills", 2),
            noise=cfg.get_float("noise", 0.01),
            seed=seed,
        )
    elif task == "followthrough":
        cond = demos.followthrough_condition(cfg.get("condition", "plan_and_execute"))
        kwargs = dict(
            n_reps=cfg.get_int("reps_per_cue", 6),
            seed=seed,
            noise=cfg.get_float("noise", 0.01),
            amplitude=cfg.get_float("amplitude", 0.12),
        )
        seqs = demos.gen_followthrough(cond, demos.CUE_CW, **kwargs) + demos.gen_followthrough(
            cond, demos.CUE_CCW, **kwargs
        )
    else:
        raise ValueError(f"unknown gen-data task {task!r}")
    path = out_dir / "demos.txt"
    save_sequences(path, seqs)
    entries = {"dataset_file": path.name, "n_sequences": str(len(seqs))}
    experiments.write_summary(out_dir, cfg, entries)
    return entries


COMMANDS = {
    "gen-data": (GEN_DATA_DEFAULTS, run_gen_data),
    "train": (experiments.TRAIN_DEFAULTS, experiments.run_train),
    "recall": (experiments.RECALL_DEFAULTS, experiments.run_recall_trial),
    "fault-grid": (experiments.FAULT_GRID_DEFAULTS, experiments.run_fault_grid),
    "follow-through": (experiments.FOLLOWTHROUGH_DEFAULTS, experiments.run_followthrough),
    "speed-accuracy": (experiments.SPEED_ACCURACY_DEFAULTS, experiments.run_speed_accuracy),
    "capacity": (experiments.CAPACITY_DEFAULTS, experiments.run_capacity),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skillmem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="config file with 'key = value' lines")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", help="space- or comma-separated seed list")
        p.add_argument("--smoke", action="store_true", help="fast CI profile")
        p.add_argument(
            "--set", dest="overrides", action="append", default=[],
            metavar="KEY=VALUE", help="override one config key",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    defaults, runner = COMMANDS[args.command]
    try:
        overlays = []
        if args.smoke:
            overlays.append(SMOKE_PROFILES[args.command])
        if args.config:
            overlays.append(parse_config_file(args.config))
        cli_overrides = {}
        for item in args.overrides:
            if "=" not in item:
                raise ValueError(f"--set needs KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            cli_overrides[key.strip()] = value.strip()
        if args.seeds:
            cli_overrides["seeds"] = args.seeds
        overlays.append(cli_overrides)
        cfg = experiments.merge_config(defaults, *overlays)
        runner(cfg, Path(args.out))
    except Exception as exc:  # single machine-readable failure line
        print(f"error kind={type(exc).__name__} message={exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
