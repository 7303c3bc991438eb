"""Command-line entry point: ``longmem {index,search,answer,evaluate,compile,run}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ConfigValidationError, RunConfig


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--dataset", help="dataset file (overrides config)")
    common.add_argument("--output-dir")
    common.add_argument("--force", action="store_true", help="recompute existing outputs")
    common.add_argument("--workers", type=int)
    common.add_argument("--stub-providers", action="store_true", help="use deterministic offline providers")
    common.add_argument("--k", type=int)
    common.add_argument("--method", choices=["bm25", "dense", "merged"])
    common.add_argument("--granularity", choices=["session", "round", "summary", "facts"])
    common.add_argument("--key-strategy")
    common.add_argument("--time-expansion", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--con", action=argparse.BooleanOptionalAction, default=None,
                        help="chain-of-note reading")
    common.add_argument("--style", choices=["plain", "json"])
    common.add_argument("--mode", choices=["retrieved", "offline_full_history"])
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="longmem", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("index", parents=[common], help="build per-question memory indexes")
    s = sub.add_parser("search", parents=[common], help="retrieve top-k items and write the trace")
    s.add_argument("--question-id")
    sub.add_parser("answer", parents=[common], help="read retrieved items and answer")
    sub.add_parser("evaluate", parents=[common], help="score traces and answers, write the report")
    sub.add_parser("run", parents=[common], help="index, search, answer and evaluate")
    c = sub.add_parser("compile", help="compile a chat history from a JSON spec")
    c.add_argument("--spec", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--force", action="store_true")
    c.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if args.config else {}
    if args.dataset:
        base["dataset_path"] = args.dataset
    if not base.get("dataset_path"):
        raise ConfigValidationError(["dataset_path: required (--dataset or config)"])
    cfg = RunConfig.from_dict(base)
    style = {"json": "json_structured", "plain": "plain"}.get(args.style) if args.style else None
    return cfg.with_overrides(**{
        "output_dir": args.output_dir,
        "workers": args.workers,
        "retrieval.k": args.k,
        "retrieval.method": args.method,
        "retrieval.time_expansion": args.time_expansion,
        "index.granularity": args.granularity,
        "index.key_strategy": args.key_strategy,
        "reading.chain_of_note": args.con,
        "reading.style": style,
        "reading.mode": args.mode,
    })


def _fail(code: int, kind: str, message: str, details=None) -> int:
    err = {"error": kind, "message": message}
    if details:
        err["details"] = details
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None, providers: pipeline.Providers | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compile":
            out = pipeline.cmd_compile(args.spec, args.out, args.force)
            print(out)
            return 0
        cfg = config_from_args(args)
        prov = providers or pipeline.build_providers(cfg, stub=args.stub_providers)
        if args.command == "index":
            print(pipeline.cmd_index(cfg, prov, args.force))
        elif args.command == "search":
            print(pipeline.cmd_search(cfg, prov, args.force, args.question_id))
        elif args.command == "answer":
            print(pipeline.cmd_answer(cfg, prov, args.force))
        elif args.command == "evaluate":
            print(pipeline.cmd_evaluate(cfg, prov, args.force).to_table())
        elif args.command == "run":
            result = pipeline.cmd_run(cfg, prov, args.force)
            if isinstance(result, dict):
                print(json.dumps(result, indent=2, sort_keys=True))
            else:
                print(result.to_table())
        return 0
    except ConfigValidationError as e:
        return _fail(2, "config", "invalid configuration", e.problems)
    except Exception as e:  # noqa: BLE001 - top-level error summary
        logging.getLogger(__name__).debug("failure", exc_info=True)
        return _fail(1, type(e).__name__, str(e))


if __name__ == "__main__":
    sys.exit(main())
