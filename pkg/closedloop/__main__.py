#!/usr/bin/env python3
"""
closedloop - simulate and verify closed-loop monotone inclusion dynamics
(decision-dependent distributions) from declarative JSON scenarios.

No warranty is provided. Use at your own risk.
"""

import sys

from closedloop.argument_parser import get_args, handle_args
from closedloop.utils import enable_verbose


def start() -> None:
    """Entrypoint for the closedloop CLI. Parses args, enables logging if asked, and runs the subcommand."""
    _, args = get_args()
    if args.verbose:
        enable_verbose(True, debug=args.debug)
    sys.exit(handle_args(args))


if __name__ == "__main__":
    start()
