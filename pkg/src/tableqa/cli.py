"""Command-line surface: ingest, build-index, train, predict, eval, run."""

from __future__ import annotations

import argparse
import json
import sys

from .pipeline import cmd_build_index, cmd_eval, cmd_ingest, cmd_predict, load_config, run_pipeline


def _add_common(parser: argparse.ArgumentParser, split: bool = False) -> None:
    parser.add_argument("--config", required=True, help="pipeline config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--mode", choices=("template", "remote"), default=None)
    parser.add_argument("--endpoint", default=None, help="generation service URL")
    if split:
        parser.add_argument("--split", choices=("train", "dev", "test"), default="test")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tableqa",
        description="Free-form question answering over tables",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("ingest", help="parse splits and report statistics"))
    _add_common(sub.add_parser("build-index", help="build the retrieval index"))
    _add_common(sub.add_parser("train", help="train the cell selector"))
    _add_common(sub.add_parser("predict", help="produce predictions for a split"), split=True)
    eval_parser = sub.add_parser("eval", help="score a predictions file")
    _add_common(eval_parser, split=True)
    eval_parser.add_argument("predictions", help="predictions JSONL file")
    _add_common(sub.add_parser("run", help="full pipeline: ingest through eval"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "mode": args.mode,
        "endpoint": args.endpoint,
    }
    config = load_config(args.config, overrides)

    log = lambda message: print(message, file=sys.stderr)  # noqa: E731
    if args.command == "ingest":
        result = cmd_ingest(config)
    elif args.command == "build-index":
        result = cmd_build_index(config)
    elif args.command == "train":
        from .pipeline import cmd_train

        result = cmd_train(config, log=log)
    elif args.command == "predict":
        result = cmd_predict(config, args.split)
    elif args.command == "eval":
        result = cmd_eval(config, args.predictions, args.split)
    elif args.command == "run":
        result = run_pipeline(config, log=log)
    else:  # pragma: no cover
        raise AssertionError(args.command)

    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
