"""Command-line interface for circle-qka."""

import argparse
import json
import logging
import os
import sys
import traceback
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

from .analysis import (
    Convention,
    ExperimentRunner,
    efficiency,
    qber_report,
    render_qber_table,
)
from .config import (
    CONFIG_KEYS,
    CliConfig,
    build_config,
    config_defaults,
    load_config_file,
    parse_value,
    render_default,
)
from .errors import ConfigError
from .protocol import ProtocolRunner
from .version import __description__, __version__

logger = logging.getLogger(__name__)

LOG_FORMAT = "[%(levelname)s] %(message)s"


# ANSI color codes for the human-facing messages on stderr
class Colors:
    """ANSI color codes for terminal output."""

    RESET = "\033[0m"
    RED = "\033[91m"
    GREEN = "\033[92m"
    YELLOW = "\033[93m"
    BLUE = "\033[94m"
    CYAN = "\033[96m"

    @classmethod
    def colorize(cls, text: str, color: str) -> str:
        """Colorize text if stderr is a terminal and NO_COLOR is unset."""
        if os.getenv("NO_COLOR") or not sys.stderr.isatty():
            return text
        return f"{color}{text}{cls.RESET}"

    @classmethod
    def success(cls, text: str) -> str:
        """Green, for completed work."""
        return cls.colorize(text, cls.GREEN)

    @classmethod
    def error(cls, text: str) -> str:
        """Red, for failures."""
        return cls.colorize(text, cls.RED)

    @classmethod
    def warning(cls, text: str) -> str:
        """Yellow, for aborts and disagreements."""
        return cls.colorize(text, cls.YELLOW)

    @classmethod
    def info(cls, text: str) -> str:
        """Blue, for section headings."""
        return cls.colorize(text, cls.BLUE)

    @classmethod
    def highlight(cls, text: str) -> str:
        """Cyan, for numbers worth spotting."""
        return cls.colorize(text, cls.CYAN)


def create_progress_bar(current: int, total: int, width: int = 50) -> str:
    """Create a simple progress bar string."""
    if total == 0:
        return "[" + "=" * width + "]"

    progress = current / total
    filled = int(width * progress)
    progress_bar = "=" * filled + "-" * (width - filled)
    percentage = int(progress * 100)
    return f"[{progress_bar}] {percentage:3d}% ({current}/{total})"


def show_progress(current: int, total: int, prefix: str = "Trials") -> None:
    """Redraw the progress bar on stderr roughly every 5%."""
    if total < 50:
        return

    if current % max(1, total // 20) == 0 or current == total:
        progress_bar = create_progress_bar(current, total)
        print(f"\r{prefix}: {progress_bar}", end="", file=sys.stderr, flush=True)
        if current == total:
            print(file=sys.stderr)


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps unset flags out of the namespace, so a flag given before
    # the subcommand is not overwritten by the subcommand's parser.
    defaults = config_defaults()
    parser.add_argument(
        "--config",
        metavar="PATH",
        default=argparse.SUPPRESS,
        help="flat 'key = value' file; flags override it (default: none)",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        default=argparse.SUPPRESS,
        help="Enable verbose output (default: off)",
    )
    parser.add_argument(
        "-q",
        "--quiet",
        action="store_true",
        default=argparse.SUPPRESS,
        help="Suppress all output except errors and data (default: off)",
    )
    for key in CONFIG_KEYS:
        parser.add_argument(
            key.flag,
            dest=key.name,
            metavar=key.metavar,
            default=argparse.SUPPRESS,
            help=f"{key.help} (default: {render_default(defaults[key.name])})",
        )


def create_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser."""
    common = argparse.ArgumentParser(add_help=False)
    _add_common_arguments(common)

    parser = argparse.ArgumentParser(
        prog="circle-qka",
        description=__description__,
        epilog="""
Examples:
  %(prog)s run --seed 42 --m 8 --l 2 --decoys 16
  %(prog)s run --attack intercept-resend --hops A1
  %(prog)s sweep --attack intercept-resend --decoys 1 --qber-threshold 0 \\
      --sweep decoy_count --sweep-values 1..12 --trials 10000
  %(prog)s sweep --sweep flip_prob --sweep-values 0.02,0.05,0.089
  %(prog)s efficiency --m 1000 --l 0
  %(prog)s --config experiment.conf sweep --workers 4 --out result.csv

Environment:
  QKA_SEED   default master seed (config file and --seed win)
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common],
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for name, summary in (
        ("run", "execute one protocol run and print its transcript as JSON"),
        ("sweep", "run a Monte Carlo experiment and print CSV or JSON"),
        ("efficiency", "print the efficiency under both counting conventions"),
    ):
        subparsers.add_parser(
            name,
            parents=[common],
            help=summary,
            description=summary,
        )
    return parser


def validate_arguments(args: argparse.Namespace) -> None:
    """Reject conflicting options.

    Raises:
        ConfigError: If --quiet and --verbose are both given
    """
    if getattr(args, "quiet", False) and getattr(args, "verbose", False):
        raise ConfigError("cannot use both --quiet and --verbose")


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.INFO if verbose else logging.ERROR if quiet else logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def load_cli_config(
    args: argparse.Namespace, environ: Optional[Dict[str, str]] = None
) -> CliConfig:
    """Merge defaults, QKA_SEED, the --config file and explicit flags.

    Raises:
        ConfigError: If a value cannot be parsed or is rejected; file values
            carry their path and line
        FileNotFoundError: If --config names a missing file
    """
    file_values: Dict[str, Any] = {}
    path = getattr(args, "config", None)
    if path:
        file_values = load_config_file(path)
    overrides = {
        key.name: parse_value(key.name, getattr(args, key.name))
        for key in CONFIG_KEYS
        if hasattr(args, key.name)
    }
    return build_config(file_values, overrides, environ)


def _require_format(config: CliConfig, allowed: Sequence[str], default: str) -> str:
    fmt = config.format or default
    if fmt not in allowed:
        raise ConfigError(f"this command writes {', '.join(allowed)} only", key="format")
    return fmt


def cmd_run(config: CliConfig, verbose: bool = False, quiet: bool = False) -> str:
    """One protocol run; returns the RunRecord as JSON.

    Args:
        config: The merged configuration
        verbose: Log each protocol step
        quiet: Skip the summary line on stderr

    Raises:
        ConfigError: If a format other than json is requested
    """
    _require_format(config, ("json",), "json")
    params = config.to_params()
    attack = config.to_attack()
    record = ProtocolRunner(params, verbose=verbose).run(attack)

    if not quiet:
        if record.aborted:
            print(
                Colors.warning(f"⚠️  Aborted at {record.abort_stage}")
                + f" (detected: {str(record.detected).lower()})",
                file=sys.stderr,
            )
        elif record.keys_agree:
            length = len(next(iter(record.derived_keys.values())))
            print(
                f"{Colors.success('✅ Keys agree:')} "
                f"{Colors.highlight(str(length))} bits",
                file=sys.stderr,
            )
        else:
            print(Colors.warning("⚠️  Derived keys differ"), file=sys.stderr)
    return record.to_json()


def cmd_sweep(config: CliConfig, verbose: bool = False, quiet: bool = False) -> str:
    """Run the experiment plan; returns CSV (default) or JSON."""
    fmt = _require_format(config, ("csv", "json"), "csv")
    plan = config.to_plan()
    runner = ExperimentRunner(workers=config.workers, verbose=verbose)
    result = runner.run(plan, progress=show_progress if verbose else None)

    if not quiet:
        print(f"\n{Colors.info('📊 Decoy error rates:')}", file=sys.stderr)
        print(render_qber_table(qber_report(result)), file=sys.stderr)
    return result.to_csv() if fmt == "csv" else result.to_json()


def cmd_efficiency(config: CliConfig, verbose: bool = False, quiet: bool = False) -> str:
    """Both efficiency conventions side by side, as JSON."""
    _require_format(config, ("json",), "json")
    params = config.to_params()
    reports = {c.value: efficiency(params, c) for c in Convention}

    if not quiet:
        for name, report in reports.items():
            print(
                f"{Colors.info(f'{name:>6}:')} eta = "
                f"{Colors.highlight(f'{report.eta:.6f}')} "
                f"(c={report.c:.3f}, q={report.q}, b={report.b})",
                file=sys.stderr,
            )
    return json.dumps(
        {
            "params": params.to_dict(),
            "conventions": {name: r.to_dict() for name, r in reports.items()},
        },
        indent=2,
    )


COMMANDS: Dict[str, Callable[..., str]] = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "efficiency": cmd_efficiency,
}


def write_output(text: str, out: Optional[str]) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    path.write_text(text, encoding="utf-8")
    logger.info("Wrote %s", path)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point.

    Returns:
        Exit code (0 for success, including runs aborted by detection)
    """
    args: Optional[argparse.Namespace] = None
    try:
        parser = create_parser()
        args = parser.parse_args(argv)
        validate_arguments(args)

        verbose = bool(getattr(args, "verbose", False))
        quiet = bool(getattr(args, "quiet", False))
        configure_logging(verbose, quiet)

        config = load_cli_config(args)

        if not quiet:
            print(Colors.highlight(f"circle-qka v{__version__}"), file=sys.stderr)
            print("=" * 50, file=sys.stderr)

        output = COMMANDS[args.command](config, verbose=verbose, quiet=quiet)
        write_output(output, config.out)
        return 0

    except KeyboardInterrupt:
        if not (args is not None and getattr(args, "quiet", False)):
            print(
                f"\n{Colors.error('❌ Operation cancelled by user.')}", file=sys.stderr
            )
        return 130

    except FileNotFoundError as e:
        print(Colors.error(f"❌ File error: {e}"), file=sys.stderr)
        return 2

    except PermissionError as e:
        print(Colors.error(f"❌ Permission error: {e}"), file=sys.stderr)
        return 13

    except ValueError as e:
        print(Colors.error(f"❌ Invalid input: {e}"), file=sys.stderr)
        return 22

    except RuntimeError as e:
        print(Colors.error(f"❌ Runtime error: {e}"), file=sys.stderr)
        if args is not None and getattr(args, "verbose", False):
            traceback.print_exc()
        return 1

    except OSError as e:
        print(Colors.error(f"❌ System error: {e}"), file=sys.stderr)
        if args is not None and getattr(args, "verbose", False):
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
