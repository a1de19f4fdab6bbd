"""Command line front end: ``run``, ``sweep``, and ``replay`` subcommands.

Every ``RunConfig`` field is a flag; a JSON config file may be supplied
with ``--config`` and explicit flags override it. The output directory can
also be overridden with the ``FLEETLEARN_OUTPUT_DIR`` environment variable.
Exit code is 0 only when the requested work completed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Optional

from .config import ENV_NAMES, PRIORITY_NAMES, SUPERVISOR_MODES, RunConfig
from .runner import replay, run_experiment, run_sweep

_SKIP_FLAGS = {"env_params", "seeds"}  # these need custom parsing


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    parser.add_argument("--env-params", help="JSON object of environment parameters")
    parser.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2")
    for f in dataclasses.fields(RunConfig):
        if f.name in _SKIP_FLAGS:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            parser.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        elif f.name == "env_name":
            parser.add_argument(flag, choices=ENV_NAMES, default=None)
        elif f.name == "priority":
            parser.add_argument(flag, choices=PRIORITY_NAMES, default=None)
        elif f.name == "supervisor":
            parser.add_argument(flag, choices=SUPERVISOR_MODES, default=None)
        elif f.type in ("int", int):
            parser.add_argument(flag, type=int, default=None)
        elif f.type in ("float", float, "Optional[float]"):
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, default=None)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        with open(args.config) as fh:
            data.update(json.load(fh))
    for f in dataclasses.fields(RunConfig):
        if f.name in _SKIP_FLAGS:
            continue
        value = getattr(args, f.name, None)
        if value is not None:
            data[f.name] = value
    if args.env_params is not None:
        data["env_params"] = json.loads(args.env_params)
    if args.seeds is not None:
        data["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
    return RunConfig.from_dict(data)


def _print_final(artifacts) -> None:
    for seed, rec in sorted(artifacts.final_records.items()):
        print(
            f"seed {seed}: successes={rec.cum_successes} hard_resets={rec.cum_hard_resets} "
            f"idle={rec.cum_idle_time} human_steps={rec.cum_human_steps} rohe={rec.rohe:.4f}"
        )
    print(f"artifacts in {artifacts.run_dir}")


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="fleetlearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment across its seeds")
    _add_config_flags(p_run)

    p_sweep = sub.add_parser("sweep", help="repeat an experiment along one parameter axis")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=["M", "t_T", "t_R", "priority"])
    p_sweep.add_argument(
        "--values", required=True, help="comma-separated values for the swept axis"
    )

    p_replay = sub.add_parser("replay", help="re-execute a run directory and verify digests")
    p_replay.add_argument("run_dir")
    p_replay.add_argument("--output-dir", default=None)

    args = parser.parse_args(argv)

    if args.command == "run":
        artifacts = run_experiment(_config_from_args(args))
        _print_final(artifacts)
        return 0

    if args.command == "sweep":
        cfg = _config_from_args(args)
        if args.axis == "priority":
            values: list = args.values.split(",")
        else:
            values = [int(v) for v in args.values.split(",")]
        all_artifacts = run_sweep(cfg, args.axis, values)
        for value, artifacts in zip(values, all_artifacts):
            print(f"--- {args.axis} = {value}")
            _print_final(artifacts)
        return 0

    ok, report = replay(args.run_dir, args.output_dir)
    for seed, row in sorted(report.items()):
        status = "match" if row["match"] else "MISMATCH"
        print(f"seed {seed}: {status} ({row['actual'][:12]}...)")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
