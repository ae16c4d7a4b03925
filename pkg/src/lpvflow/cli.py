"""Command-line entry point: ``lpvflow {init,run,convert,report}``.

Progress goes to stdout; failures are reported on stderr as one JSON object
and mapped to the exit code of the error class.  ``LPVFLOW_THREADS`` caps the
BLAS/OpenMP thread count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _cap_threads() -> None:
    cap = os.environ.get("LPVFLOW_THREADS")
    if cap:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpvflow", description="POD-based LPV modelling and polytopic gain-scheduled control.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a commented configuration template")
    p.add_argument("--config", default=None, help="target file (stdout when omitted)")

    p = sub.add_parser("run", help="run pipeline stages")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", default=None, help="comma-separated subset of stages (default: all)")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default=None, help="override the artifact directory")

    p = sub.add_parser("convert", help="convert matrix files and bundles")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--from", dest="format_in", required=True, choices=("matrix-market", "csv", "json-bundle"))
    p.add_argument("--to", dest="format_out", required=True, choices=("matrix-market", "csv", "json-bundle"))

    p = sub.add_parser("report", help="generate report files from existing artifacts")
    p.add_argument("--config", default=None, help="configuration (default: the one stored in the manifest)")
    p.add_argument("--out", default=None, help="artifact directory")
    return parser


def _configure(args):
    from .config import PipelineConfig, load_config
    from .errors import ConfigError
    from .pipeline import load_manifest

    if args.config is not None:
        cfg = load_config(args.config)
    elif getattr(args, "out", None) and (Path(args.out) / "manifest.json").exists():
        cfg = PipelineConfig.from_dict(load_manifest(args.out).get("config"))
    else:
        raise ConfigError("no configuration: pass --config or an --out directory with a manifest")
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stdout,
    )
    from .errors import LpvFlowError

    try:
        if args.command == "init":
            from .config import template

            if args.config:
                Path(args.config).write_text(template())
                print(f"wrote {args.config}")
            else:
                sys.stdout.write(template())
        elif args.command == "run":
            from .pipeline import run_pipeline

            cfg = _configure(args)
            stages = None if args.stages is None else [s.strip() for s in args.stages.split(",") if s.strip()]
            manifest = run_pipeline(cfg, stages)
            print(f"{len(manifest['artifacts'])} artifacts listed in {Path(cfg.out) / 'manifest.json'}")
        elif args.command == "convert":
            from .io import convert

            convert(args.input, args.format_in, args.output, args.format_out)
            print(f"wrote {args.output}")
        elif args.command == "report":
            from .pipeline import run_pipeline

            cfg = _configure(args)
            run_pipeline(cfg, ["report"])
            print(f"report written to {Path(cfg.out) / 'report'}")
    except LpvFlowError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        if getattr(exc, "stage", None):
            err["stage"] = exc.stage
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
