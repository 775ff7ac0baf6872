"""
Command line entry point for the boundary control lab

    bclab <subcommand> --config <path> [--out <dir>] [--threads <k>] [--verbose]

Exit codes: 0 success, 2 configuration or validation error, 3 numerical
failure (flagged rows beyond their threshold).
"""
import argparse
import logging
import re
import sys
from pathlib import Path
from typing import List, Optional

# Add src directory to path
src_path = Path(__file__).parent.parent
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from backend.errors import ConfigValidationError, NumericalFailure  # noqa: E402
from backend.reporting.report_generator import ReportGenerator  # noqa: E402
from backend.services.config_validator import ConfigValidator, ValidationIssue, line_of  # noqa: E402
from backend.services.configuration_manager import ConfigurationManager  # noqa: E402
from backend.services.experiment_builder import build_experiment  # noqa: E402
from backend.services.experiment_runner import (  # noqa: E402
    EXIT_NUMERICAL, EXIT_VALIDATION, ExperimentRunner, Subcommand,
)
from backend.services.parallel import set_default_threads  # noqa: E402
from frontend.config import APP_DESCRIPTION, APP_NAME, APP_VERSION, LOG_FORMAT  # noqa: E402

logger = logging.getLogger(APP_NAME)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_NAME, description=APP_DESCRIPTION)
    parser.add_argument("subcommand", choices=Subcommand.names(), help="experiment to run")
    parser.add_argument("--config", required=True, help="experiment configuration (JSON)")
    parser.add_argument("--out", default=None, help="output directory (default: run.output)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: system.threads)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    return parser


def format_issues(error: ConfigValidationError, source: str, text: str) -> List[str]:
    """One 'path:line: field: message' line per issue"""
    lines = []
    for issue in error.issues or [str(error)]:
        if isinstance(issue, ValidationIssue):
            lines.append(issue.format(source))
            continue
        message = str(issue)
        if re.match(rf"^{re.escape(source)}:\d+:", message):
            lines.append(message)
            continue
        field, _, rest = message.partition(": ")
        line = line_of(text, field) if rest else None
        where = f"{source}:{line}" if line is not None else source
        lines.append(f"{where}: {message}")
    return lines


def run(argv: Optional[List[str]] = None) -> int:
    """Parse, validate, run; returns the exit code"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format=LOG_FORMAT,
        force=True,
    )
    manager = None
    try:
        manager = ConfigurationManager(args.config)
        config = manager.config
        if args.threads is not None:
            config.system.threads = args.threads
        if not args.verbose:
            logging.getLogger().setLevel(config.system.log_level)
        ConfigValidator(manager.source_text).require_valid(config)
    except ConfigValidationError as e:
        text = manager.source_text if manager is not None else ""
        for line in format_issues(e, args.config, text):
            print(line, file=sys.stderr)
        return EXIT_VALIDATION

    set_default_threads(config.system.threads)
    out_dir = args.out or config.run.output
    reporter = ReportGenerator(out_dir, args.subcommand, args.config, config.run.seed)
    try:
        experiment = build_experiment(config)
        outcome = ExperimentRunner(experiment, reporter).run(args.subcommand)
    except NumericalFailure as e:
        logger.error(f"Numerical failure: {e}")
        print(f"{args.config}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        print(f"{args.config}: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except RuntimeError as e:
        logger.error(f"Numerical failure: {e}")
        print(f"{args.config}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL

    print(reporter.build_summary(f"{APP_NAME} {outcome.subcommand}", {
        "exit code": outcome.exit_code,
        "flagged rows": len(outcome.flagged),
        "output directory": out_dir,
        "files written": len(outcome.files),
    }))
    for message in outcome.flagged:
        print(f"  flagged: {message}")
    return outcome.exit_code


def main():
    """Console script entry point"""
    sys.exit(run())


if __name__ == "__main__":
    main()
