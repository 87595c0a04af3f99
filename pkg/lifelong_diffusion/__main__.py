#!/usr/bin/env python3
"""
Lifelong text-to-image diffusion experiments
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from lifelong_diffusion import __version__
from lifelong_diffusion.config import ExperimentConfig, load_config
from lifelong_diffusion.errors import LifelongDiffusionError

_LOGGER = logging.getLogger(__name__)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config keys set by command-line flags."""
    overrides: Dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if getattr(args, "no_tame", False):
        overrides["train.use_tame"] = False
    if getattr(args, "no_ecd", False):
        overrides["train.use_ecd"] = False
    if getattr(args, "no_caa", False):
        overrides["guidance.use_caa"] = False
    if getattr(args, "no_oaa", False):
        overrides["guidance.use_oaa"] = False
    return overrides


def _config(args: argparse.Namespace) -> ExperimentConfig:
    return load_config(args.config, _overrides(args))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML configuration merged over the defaults")
    parser.add_argument("--seed", type=int, help="Override the master seed")
    parser.add_argument("--out", help="Override the run directory (output_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lifelong-diffusion")
    parser.add_argument("--debug", action="store_true", help="Log DEBUG messages")
    parser.add_argument(
        "--log-format", default=logging.BASIC_FORMAT, help="Format for log messages"
    )
    parser.add_argument(
        "--version",
        action="version",
        version=__version__,
        help="Print version and exit",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    pretrain = commands.add_parser(
        "pretrain", help="Train the base model and the feature extractor"
    )
    _add_common(pretrain)

    sequence = commands.add_parser(
        "run-sequence", help="Learn the configured concepts one task at a time"
    )
    _add_common(sequence)
    sequence.add_argument(
        "--no-tame", action="store_true", help="Disable memory rehearsal"
    )
    sequence.add_argument(
        "--no-ecd", action="store_true", help="Disable distillation from the teacher"
    )
    sequence.add_argument(
        "--resume",
        action="store_true",
        help="Skip tasks whose completion marker verifies",
    )
    sequence.add_argument(
        "--base-run",
        help="Run directory whose base checkpoint and extractor are reused",
    )

    generate = commands.add_parser(
        "generate", help="Sample images with attention guidance"
    )
    _add_common(generate)
    generate.add_argument(
        "--checkpoint", required=True, help="Checkpoint directory to sample from"
    )
    generate.add_argument("--prompt", required=True, help="Text prompt")
    generate.add_argument(
        "--count", type=int, default=1, help="Number of images (default: 1)"
    )
    generate.add_argument(
        "--no-caa", action="store_true", help="Disable concept attention guidance"
    )
    generate.add_argument(
        "--no-oaa", action="store_true", help="Disable orthogonal attention guidance"
    )

    evaluate = commands.add_parser(
        "evaluate", help="Alignment matrix, forgetting rates and sample strips"
    )
    _add_common(evaluate)

    report = commands.add_parser("report", help="Plots and tables from evaluation CSVs")
    report.add_argument("run_dir", help="Run directory holding eval/")
    return parser


def dispatch(args: argparse.Namespace) -> None:
    from lifelong_diffusion.experiment import commands
    from lifelong_diffusion.experiment.report import cmd_report

    if args.command == "report":
        cmd_report(args.run_dir)
        return

    config = _config(args)
    _LOGGER.info("Run directory: %s (method %s)", config.run_dir, config.method)
    if args.command == "pretrain":
        commands.cmd_pretrain(config)
    elif args.command == "run-sequence":
        commands.cmd_run_sequence(
            config, resume=args.resume, base_run=args.base_run
        )
    elif args.command == "generate":
        commands.cmd_generate(
            args.checkpoint,
            args.prompt,
            config,
            Path(config.run_dir) / "generated",
            count=args.count,
            use_caa=config.guidance.use_caa,
            use_oaa=config.guidance.use_oaa,
        )
    elif args.command == "evaluate":
        commands.cmd_evaluate(config)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO, format=args.log_format
    )
    _LOGGER.debug(args)

    try:
        dispatch(args)
    except LifelongDiffusionError as err:
        _LOGGER.error("%s failed: %s", args.command, err)
        return err.exit_code
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    try:
        run()
    except KeyboardInterrupt:
        pass
