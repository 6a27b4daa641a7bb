"""Command line front end.

One subcommand per pipeline stage plus the experimental title mapper.
Exit codes: 0 on success, 1 for bad input or configuration, 2 when a
pipeline stage fails partway.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from proctext.errors import PipelineError, ProctextError
from proctext.pipeline import (
    STAGES,
    PipelineConfig,
    load_pipeline_config,
    map_titles,
    run_pipeline,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 is reserved for stage failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_run_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="config JSON file; flags override its entries")
    sub.add_argument("--corpus", help="recipe corpus JSONL")
    sub.add_argument("--glossary", help="glossary JSON")
    sub.add_argument("--embeddings", help="word embeddings, word2vec text format")
    sub.add_argument("--pairs", help="dish pairs JSON")
    sub.add_argument("--instances", help="evaluation instances JSONL")
    sub.add_argument("--annotations", help="annotation results CSV")
    sub.add_argument("--out-dir", required=True, help="artifact output directory")
    sub.add_argument("--seed", type=int, default=None, help="master seed")
    sub.add_argument("--strict", action="store_true", help="fail on any malformed input line")
    sub.add_argument(
        "--resume", action="store_true", help="reuse existing artifacts instead of rerunning"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proctext", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub = commands.add_parser(stage, help=f"run the pipeline through the {stage} stage")
        _add_run_options(sub)
    mapper = commands.add_parser(
        "map-titles", help="match free-form recipe titles to known dish names"
    )
    mapper.add_argument("--titles", required=True, help="file with one title per line")
    mapper.add_argument("--dishes", required=True, help="file with one dish name per line")
    return parser


def _read_lines(path: str) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.strip() for line in fh if line.strip()]
    except OSError as exc:
        raise ProctextError(f"cannot read {path}: {exc}") from exc


def _run_stage(args: argparse.Namespace) -> int:
    overrides = {
        "corpus": args.corpus,
        "glossary": args.glossary,
        "embeddings": args.embeddings,
        "pairs": args.pairs,
        "instances": args.instances,
        "annotations": args.annotations,
        "seed": args.seed,
        "strict": args.strict or None,
    }
    if args.config is not None:
        config = load_pipeline_config(args.config, overrides)
    else:
        missing = [k for k in ("corpus", "glossary", "pairs") if overrides[k] is None]
        if missing:
            raise ProctextError(
                "without --config these flags are required: "
                + ", ".join("--" + m for m in missing)
            )
        config = PipelineConfig(
            corpus=Path(args.corpus),
            glossary=Path(args.glossary),
            pairs=Path(args.pairs),
            embeddings=None if args.embeddings is None else Path(args.embeddings),
            instances=None if args.instances is None else Path(args.instances),
            annotations=None if args.annotations is None else Path(args.annotations),
            seed=args.seed if args.seed is not None else 0,
            strict=args.strict,
        )
    result = run_pipeline(config, args.out_dir, resume=args.resume, stages=[args.command])
    for stage in result.stages_run:
        print(f"{stage}: wrote {result.artifacts[stage]}")
    skipped = [s for s in result.artifacts if s not in result.stages_run]
    for stage in skipped:
        print(f"{stage}: reused {result.artifacts[stage]}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "map-titles":
            mapping = map_titles(_read_lines(args.titles), _read_lines(args.dishes))
            print(json.dumps(mapping, ensure_ascii=False, indent=2, sort_keys=True))
            return 0
        return _run_stage(args)
    except PipelineError as exc:
        print(f"proctext: {exc}", file=sys.stderr)
        return 2
    except ProctextError as exc:
        print(f"proctext: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
