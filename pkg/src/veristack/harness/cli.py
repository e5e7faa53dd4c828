"""opera command line: run benchmark episodes and emit reports."""

from __future__ import annotations

import argparse
import sys

from .episode import MAIN_VARIANTS, VARIANTS
from .report import report_to_csv
from .scenarios import DEFAULT_SUITE_SCENARIOS, SCENARIO_NAMES, fixture_ispec_document
from .suite import DEFAULT_SEEDS, SuiteConfig, run_suite


def cmd_run(args) -> int:
    scenarios = SCENARIO_NAMES if args.scenario == "all" else (args.scenario,)
    if args.scenario == "default":
        scenarios = DEFAULT_SUITE_SCENARIOS
    variants = VARIANTS if args.variant == "all" else (args.variant,)
    if args.variant == "main":
        variants = MAIN_VARIANTS
    seeds = tuple(range(args.seed, args.seed + args.episodes))

    if args.ispec is not None:
        # the bundled contract is the only one the scripted scenarios target
        import json
        from pathlib import Path

        supplied = json.loads(Path(args.ispec).read_text(encoding="utf-8"))
        if supplied != fixture_ispec_document():
            print(
                "warning: scripted scenarios are calibrated to the bundled "
                "content-moderation ispec; supplied file ignored for scripting",
                file=sys.stderr,
            )

    config = SuiteConfig(scenarios=scenarios, variants=variants, seeds=seeds, out_dir=args.out)
    report = run_suite(config)
    print(report_to_csv(report), end="")
    if args.out:
        print(f"wrote report.csv, report.json and chain files under {args.out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opera")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run benchmark episodes")
    p_run.add_argument(
        "--scenario",
        default="default",
        choices=("default", "all") + SCENARIO_NAMES,
        help="scenario name, 'default' (5-scenario suite) or 'all'",
    )
    p_run.add_argument(
        "--variant",
        default="main",
        choices=("main", "all") + VARIANTS,
        help="system variant, 'main' (3 variants) or 'all'",
    )
    p_run.add_argument("--episodes", type=int, default=len(DEFAULT_SEEDS), help="seeds per cell")
    p_run.add_argument("--seed", type=int, default=0, help="first seed")
    p_run.add_argument("--ispec", default=None, help="ISpec file (informational; see warning)")
    p_run.add_argument("--out", default=None, help="output directory for reports and chains")
    p_run.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
