"""Command-line entry point.

Subcommands mirror the study workflow and are individually re-runnable
against the same output directory::

    sagtwin run        # generate -> identify -> train -> calibrate ->
                       # evaluate -> scenarios -> report
    sagtwin generate   # synthetic plant data + ingest (raw/train/test CSVs)
    sagtwin identify   # regulatory state-space identification
    sagtwin train      # NARX training (optional grid search)
    sagtwin calibrate  # detector thresholds (Algorithm-style iteration)
    sagtwin evaluate   # horizon-error quantiles (figure analogues)
    sagtwin scenario NAME
    sagtwin report     # merge stage metrics into metrics.json
    sagtwin serve      # twin-service HTTP API

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import sys

from . import workflow
from .config import RunConfig, load_config
from .errors import ConfigError, SagTwinError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", default=None, help="YAML config file")
    p.add_argument("--set", "-s", action="append", default=[], metavar="KEY.PATH=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--output", "-o", default=None, help="output directory override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sagtwin", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "identify", "train", "calibrate", "evaluate", "report", "run"):
        p = sub.add_parser(name)
        _add_common(p)
    p = sub.add_parser("scenario")
    _add_common(p)
    p.add_argument("name", help="scenario name from the config")
    p = sub.add_parser("serve")
    _add_common(p)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    return parser


def _load(args) -> RunConfig:
    overrides = list(args.set)
    if args.output:
        overrides.append(f"output_dir={args.output}")
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    stage = args.command
    try:
        if stage == "generate":
            workflow.stage_generate(cfg)
            workflow.stage_prepare(cfg)
        elif stage == "identify":
            workflow.stage_identify(cfg)
        elif stage == "train":
            workflow.stage_train(cfg)
        elif stage == "calibrate":
            workflow.stage_calibrate(cfg)
        elif stage == "evaluate":
            workflow.stage_evaluate(cfg)
        elif stage == "scenario":
            workflow.stage_scenario(cfg, args.name)
        elif stage == "report":
            workflow.stage_report(cfg)
        elif stage == "run":
            workflow.run_all(cfg)
        elif stage == "serve":
            from . import service
            import uvicorn
            app = service.create_app(cfg)
            port = args.port if args.port is not None else cfg.service_port
            uvicorn.run(app, host=args.host, port=port, log_level="warning")
    except ConfigError as exc:
        print(f"config error in stage {stage}: {exc}", file=sys.stderr)
        return 2
    except (SagTwinError, OSError, ValueError) as exc:
        print(f"stage {stage} failed: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
