import argparse
import json
from typing import List, Optional, Sequence, Tuple

from closedloop.errors import ClosedLoopError
from closedloop.load_config import DEFAULT_CONFIG_FILE, ConfigLoader
from closedloop.runner import EXIT_ERROR, EXIT_OK, run_batch, run_scenario
from closedloop.utils import format_verdicts


def get_args(argv: Optional[Sequence[str]] = None) -> Tuple[argparse.ArgumentParser, argparse.Namespace]:
    """Define and parse command-line arguments."""
    parser = argparse.ArgumentParser(
        prog="closedloop",
        description="Closed-loop monotone inclusion experiments: equilibria, flows, curvature, primal-dual",
    )
    parser.add_argument('--verbose', action='store_true', help='Log progress to stderr')
    parser.add_argument('--debug', action='store_true', help='With --verbose, log at DEBUG level')
    sub = parser.add_subparsers(dest='command', required=True)

    # Run scenarios
    run = sub.add_parser('run', help='Run one or more scenario configs')
    run.add_argument('configs', nargs='+', help='Scenario config file(s) (JSON)')
    run.add_argument('--csv', type=str, help='CSV trajectory output (single config only)')
    run.add_argument('--json', type=str, help='JSON report output (single config only)')
    run.add_argument('--quiet', action='store_true', help='Do not print the verdict summary')

    # Validate only
    check = sub.add_parser('check', help='Validate a scenario config and print the normalized form')
    check.add_argument('config', nargs='?', default=DEFAULT_CONFIG_FILE,
                       help=f'Scenario config file (JSON); {DEFAULT_CONFIG_FILE} falls back to the packaged example')
    check.add_argument('--out', type=str, help='Also write the normalized config to this path')

    # Pretty-print a report
    report = sub.add_parser('report', help='Pretty-print the verdicts of a JSON report')
    report.add_argument('report', type=str, help='JSON report written by "run"')

    args = parser.parse_args(argv)
    if args.command == 'run' and len(args.configs) > 1 and (args.csv or args.json):
        parser.error('--csv/--json need a single config; set outputs in each config for batches')
    return parser, args


def _run(args: argparse.Namespace) -> int:
    if len(args.configs) > 1:
        return run_batch(args.configs, quiet=args.quiet)
    try:
        config = ConfigLoader.load_config_file(args.configs[0])
    except (ClosedLoopError, FileNotFoundError) as e:
        print(f"[CONFIG] {args.configs[0]}: {type(e).__name__}: {e}")
        return EXIT_ERROR
    return run_scenario(config, csv_path=args.csv, json_path=args.json, quiet=args.quiet)


def _check(args: argparse.Namespace) -> int:
    try:
        config = ConfigLoader.load_config_file(args.config)
    except (ClosedLoopError, FileNotFoundError) as e:
        print(f"[CONFIG] {args.config}: {type(e).__name__}: {e}")
        return EXIT_ERROR
    if args.out:
        ConfigLoader.save_config_file(config, args.out)
    print(json.dumps(config.to_dict(), indent=4))
    return EXIT_OK


def _report(args: argparse.Namespace) -> int:
    try:
        with open(args.report, 'r', encoding='utf-8') as f:
            report = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        print(f"[RUN] {args.report}: {e}")
        return EXIT_ERROR
    lines: List[str] = format_verdicts(report)
    print("\n".join(lines))
    return EXIT_OK


def handle_args(args: argparse.Namespace) -> int:
    """
    Dispatch the parsed subcommand.
    Returns:
        int: process exit status (0 ok, 1 error, 2 check violation)
    """
    handlers = {'run': _run, 'check': _check, 'report': _report}
    return handlers[args.command](args)
