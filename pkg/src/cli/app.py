import argparse
import logging
import os
import sys
from typing import List, Optional

from src import __version__
from src.cli.stages import StageContext, cmd_diagnose, cmd_generator, cmd_partition, cmd_simulate
from src.cli.study import cmd_study, format_summary
from src.utils.artifacts import write_text
from src.utils.config_manager import ConfigManager
from src.utils.errors import ChainHarnessError, ConfigError

logger = logging.getLogger(__name__)

COMMANDS = ("partition", "generator", "simulate", "diagnose", "study")
LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbm-chains",
        description="Corrected Markov chains on partitions and their reflected Brownian motion limit.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS, help="pipeline stage to run")
    parser.add_argument("--config", metavar="PATH", help="JSON run config (defaults apply when omitted)")
    parser.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
    parser.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides partition.seed)")
    parser.add_argument("--threads", type=int, metavar="N", help="worker threads")
    parser.add_argument(
        "--level-filter",
        metavar="N[,N...]",
        help="comma-separated subset of the configured levels to process",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def parse_level_filter(text: Optional[str], levels: List[int]) -> List[int]:
    if not text:
        return list(levels)
    try:
        wanted = sorted({int(part) for part in text.split(",") if part.strip()})
    except ValueError as e:
        raise ConfigError(f"--level-filter expects comma-separated integers, got {text!r}") from e
    unknown = [n for n in wanted if n not in levels]
    if unknown:
        raise ConfigError(f"--level-filter names levels {unknown} that are not in partition.levels {levels}")
    return wanted


def load_context(args: argparse.Namespace) -> StageContext:
    manager = ConfigManager(args.config)
    if args.seed is not None:
        manager.set("partition.seed", args.seed)
    if args.out is not None:
        manager.set("output.directory", args.out)
    if args.threads is not None:
        manager.set("threads", args.threads)
    run = manager.run
    levels = parse_level_filter(args.level_filter, run.levels)
    logger.debug("config %s, levels %s", run.hash, levels)
    return StageContext(run=run, command=args.command, levels=levels)


def run_command(ctx: StageContext) -> int:
    if ctx.command == "partition":
        cmd_partition(ctx)
    elif ctx.command == "generator":
        levels = cmd_generator(ctx)
        if not all(table.condition_holds for _, table in levels.values()):
            return 1
    elif ctx.command == "simulate":
        cmd_simulate(ctx)
    elif ctx.command == "diagnose":
        diag = cmd_diagnose(ctx)
        _emit_summary(ctx, format_summary(ctx, diag))
    else:
        result = cmd_study(ctx)
        _emit_summary(ctx, format_summary(ctx, result.diagnostics, result.checks))
        return 0 if result.passed else 1
    return 0


def _emit_summary(ctx: StageContext, text: str):
    write_text(os.path.join(ctx.out_dir, "summary.txt"), text)
    sys.stdout.write(text)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the command-line tool."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        ctx = load_context(args)
        return run_command(ctx)
    except ChainHarnessError as e:
        logger.error("Error: %s", e)
        return 2
