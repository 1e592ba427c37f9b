"""Command-line entry point.

Subcommands: `run` (full pipeline), `keyframes` (media stage only),
`evidence` (retrieval only), `report` (assembly from cached stage files).
Exit codes: 0 success, 1 fatal error (including usage errors), 2 completed
but flagged for human review.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .errors import PipelineError
from .pipeline import ALL_STAGES, PipelineConfig, run_case

log = logging.getLogger(__name__)

_SUBCOMMAND_STAGES = {
    "run": ALL_STAGES,
    "keyframes": frozenset({"media"}),
    "evidence": frozenset({"evidence"}),
    "report": frozenset({"report"}),
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this pipeline reserves 2 for review."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mmverify",
                     description="Multimedia news-verification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("run", "run the full pipeline for a case"),
        ("keyframes", "run the media stage only"),
        ("evidence", "run evidence retrieval only"),
        ("report", "assemble the report from cached stage files"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--case", action="append", required=True,
                       help="case directory (repeatable)")
        p.add_argument("--config", type=Path, default=None,
                       help="JSON pipeline config file")
        p.add_argument("--offline", action="store_true",
                       help="use stub backends only; refuse real transports")
        p.add_argument("--refresh", action="store_true",
                       help="ignore cached stage files")
        p.add_argument("--jobs", type=int, default=1,
                       help="number of cases processed concurrently")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_config(args) -> PipelineConfig:
    config = (PipelineConfig.from_file(args.config) if args.config
              else PipelineConfig())
    if args.offline:
        config.offline = True
    if args.refresh:
        config.refresh = True
    return config


def cli_main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load_config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 1

    stages = _SUBCOMMAND_STAGES[args.command]
    cases = [Path(c) for c in args.case]

    def run_one(case_dir: Path) -> int:
        try:
            status = run_case(case_dir, config, stages=stages)
        except (FileNotFoundError, PipelineError, OSError, ValueError) as exc:
            print(f"error: {case_dir}: {exc}", file=sys.stderr)
            return 1
        print(f"{case_dir}: stage={status.stage} "
              f"human_review={'yes' if status.human_review_required else 'no'}")
        for reason in status.reasons:
            print(f"  - {reason}")
        return 2 if status.human_review_required else 0

    if args.jobs > 1 and len(cases) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(run_one, cases))
    else:
        codes = [run_one(c) for c in cases]

    if 1 in codes:
        return 1
    if 2 in codes:
        return 2
    return 0


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
