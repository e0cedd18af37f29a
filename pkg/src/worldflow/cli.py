"""Command-line entry point for the scene generation pipeline.

Each subcommand runs one pipeline stage against an output directory; `run`
executes the whole chain in order. Stage artifacts are content-checked, so
commands fail fast with the name of the missing or stale upstream stage.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import InvalidArgumentError
from .forge import LayoutSpec
from .formats import canonical_json
from .pipeline import (STAGES, Pipeline, PipelineConfig, config_hash,
                       load_pipeline_config)

_STAGE_COMMANDS = {s.replace("_", "-"): s for s in STAGES}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="worldflow",
        description="chunk-based sketch-to-world scene generation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="pipeline config JSON (defaults to the desk-scale setup)")
        p.add_argument("--out", type=Path, required=True,
                       help="artifact directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    run = sub.add_parser("run", help="run all stages in order")
    common(run)
    run.add_argument("--stage", choices=sorted(STAGES), default=None,
                     help="stop after this stage")

    for cmd in _STAGE_COMMANDS:
        p = sub.add_parser(cmd, help=f"run the {cmd} stage")
        common(p)

    gen = sub.add_parser("generate-job",
                         help="one-off generation from a job descriptor")
    common(gen)
    gen.add_argument("--job", type=Path, required=True,
                     help='JSON: {"sketch": path, "layout": [R,C] | "predict", '
                          '"steps": n, "guidance": g, "seed": s}')
    gen.add_argument("--result", type=Path, required=True,
                     help="output latent grid path (.nwlat)")

    exp = sub.add_parser("export", help="decode a latent grid to a PLY mesh")
    common(exp)
    exp.add_argument("--latent", type=Path, required=True)
    exp.add_argument("--ply", type=Path, required=True)

    prof = sub.add_parser("profile",
                          help="token/activation/time report per layout")
    common(prof)
    prof.add_argument("--layouts", type=str, default="2x2,4x4,8x20",
                      help="comma-separated RxC list")
    prof.add_argument("--steps", type=int, default=2,
                      help="integration steps per profiled generation")

    cfg = sub.add_parser("show-config",
                         help="print the resolved config and its hash")
    cfg.add_argument("--config", type=Path, default=None)
    cfg.add_argument("--seed", type=int, default=None)
    return parser


def _parse_layouts(text: str) -> list[LayoutSpec]:
    layouts = []
    for part in text.split(","):
        part = part.strip().lower()
        try:
            rows, cols = part.split("x")
            layouts.append(LayoutSpec(int(rows), int(cols)))
        except ValueError as exc:
            raise InvalidArgumentError(
                f"bad layout {part!r}; expected RxC like 4x12") from exc
    return layouts


def _resolve_config(args) -> PipelineConfig:
    config = (load_pipeline_config(args.config) if args.config
              else PipelineConfig())
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    config = _resolve_config(args)

    if args.command == "show-config":
        print(canonical_json(dataclasses.asdict(config)))
        print(f"hash: {config_hash(config)}")
        return 0

    pipe = Pipeline(config, args.out)

    if args.command == "run":
        pipe.run_all(upto=args.stage)
        print(f"completed {'all stages' if args.stage is None else args.stage} "
              f"under {args.out} (config {pipe.hash})")
        return 0

    if args.command in _STAGE_COMMANDS:
        stage = _STAGE_COMMANDS[args.command]
        result = pipe.run(stage)
        if stage == "eval":
            print(result.to_json())
        else:
            print(f"stage {stage} done (config {pipe.hash})")
        return 0

    if args.command == "generate-job":
        job = json.loads(args.job.read_text())
        out = pipe.generate_job(job, args.result)
        print(f"wrote {out}")
        return 0

    if args.command == "export":
        out = pipe.export_scene(args.latent, args.ply)
        print(f"wrote {out}")
        return 0

    if args.command == "profile":
        rows = pipe.profile(_parse_layouts(args.layouts), steps=args.steps)
        print(json.dumps(rows, indent=2))
        return 0

    raise InvalidArgumentError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
