"""Command-line interface.

Subcommands: split, subword-train, train, translate, evaluate, autobuild,
report, deploy, serve, green. Global flags: --config, --run-dir, --seed.
Exit code 0 on success; failures use stage-specific codes (see EXIT_CODES).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import orchestrator as orch
from .green import format_green_report, GreenReport

EXIT_CODES = {
    "config": 2,
    "lock": 3,
    "split": 10,
    "subword": 11,
    "train": 12,
    "translate": 13,
    "evaluate": 14,
    "report": 15,
    "deploy": 16,
    "serve": 17,
    "green": 18,
}

STAGE_COMMANDS = {
    "split": "split",
    "subword-train": "subword",
    "train": "train",
    "translate": "translate",
    "evaluate": "evaluate",
    "report": "report",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmtbench",
        description="Desk-scale neural machine translation workbench",
    )
    # global flags work both before and after the subcommand; the subcommand
    # copies use SUPPRESS so they never clobber values parsed by the root
    parser.add_argument("--config", default=None, help="run config file (YAML)")
    parser.add_argument("--run-dir", default=None, help="existing run directory")
    parser.add_argument("--seed", type=int, default=None, help="override split/training seed")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--run-dir", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)

    sub = parser.add_subparsers(dest="command", required=True)
    help_text = {"autobuild": "run the whole pipeline"}
    for name in ("autobuild", *STAGE_COMMANDS):
        sub.add_parser(
            name,
            parents=[common],
            help=help_text.get(name, f"run the {name} stage"),
        )

    deploy_p = sub.add_parser(
        "deploy", parents=[common], help="package the best checkpoint as a serving bundle"
    )
    deploy_p.add_argument("destination", help="bundle output directory")

    serve_p = sub.add_parser(
        "serve", parents=[common], help="serve deployed models and run state over HTTP"
    )
    serve_p.add_argument("--root", default=".", help="directory holding runs and bundles")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8000)

    sub.add_parser("green", parents=[common], help="print a run's green report")
    sub.add_parser("plots", parents=[common], help="export chart files from the event log")
    return parser


def _load_config(args) -> tuple[orch.RunConfig, bytes]:
    path = args.config
    if path is None and args.run_dir:
        return orch.load_config_from_run(Path(args.run_dir))
    if path is None:
        raise orch.ConfigError("--config is required")
    config, raw = orch.load_config(path)
    if args.seed is not None:
        config = replace(
            config,
            split=replace(config.split, seed=args.seed),
            hyperparameters=replace(config.hyperparameters, seed=args.seed),
        )
        raw = orch.dump_config(config)
    return config, raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    try:
        if command == "autobuild" or command in STAGE_COMMANDS:
            config, raw = _load_config(args)
            only = STAGE_COMMANDS.get(command)
            orch.autobuild(config, config_bytes=raw, only=only)
            return 0
        if command == "deploy":
            run_dir = args.run_dir
            if run_dir is None:
                raise orch.ConfigError("deploy needs --run-dir")
            bundle = orch.deploy(run_dir, args.destination)
            print(f"bundle written to {bundle}")
            return 0
        if command == "serve":
            from .gateway import serve

            serve(Path(args.root), host=args.host, port=args.port)
            return 0
        if command == "green":
            run_dir = args.run_dir
            if run_dir is None:
                raise orch.ConfigError("green needs --run-dir")
            green_path = Path(run_dir) / "reports" / "green.json"
            if not green_path.exists():
                raise orch.OrchestratorError(
                    f"no green report at {green_path}; run the report stage first"
                )
            report = GreenReport.from_dict(json.loads(green_path.read_text()))
            print(format_green_report(report))
            return 0
        if command == "plots":
            if args.run_dir is None:
                raise orch.ConfigError("plots needs --run-dir")
            written = orch.export_plots(args.run_dir)
            for _, path in sorted(written.items()):
                print(f"wrote {path}")
            return 0
        raise orch.ConfigError(f"unknown command {command!r}")
    except orch.StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CODES.get(e.stage, 1)
    except orch.LockHeld as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CODES["lock"]
    except orch.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CODES["config"]
    except orch.OrchestratorError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CODES.get(command, 1)


if __name__ == "__main__":
    sys.exit(main())
