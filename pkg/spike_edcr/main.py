from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable

from .config import RunConfig, apply_overrides, default_config, load_config
from .pipeline import (
    StageResult,
    explain_sample,
    run_demo,
    stage_ablate,
    stage_apply,
    stage_eval,
    stage_featurize,
    stage_import,
    stage_label,
    stage_learn,
    stage_train,
)
from .types import TrainingDivergedError

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_USAGE = 64

STAGES: dict[str, Callable[[RunConfig], StageResult]] = {
    "label": stage_label,
    "featurize": stage_featurize,
    "train": stage_train,
    "import-preds": stage_import,
    "learn": stage_learn,
    "apply": stage_apply,
    "eval": stage_eval,
    "ablate": stage_ablate,
}
COMMANDS = (*STAGES, "explain", "demo")


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )


class _UsageParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _UsageParser(
        prog="spike-edcr",
        description="Metal price spike classification with error detection and correction rules",
    )
    parser.add_argument("command", help=f"one of: {', '.join(COMMANDS)}")
    parser.add_argument("--config", help="Path to config.toml (demo defaults when omitted)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epsilon", type=float, help="recall reduction threshold")
    parser.add_argument("--topk", type=int, help="Top-F1 condition count, 0 disables filtering")
    parser.add_argument("--primary", help="primary model name")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--import-preds", action="append", default=[], dest="import_preds", metavar="PATH")
    parser.add_argument("--sample", type=int, help="source index for explain")
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        config_path = Path(args.config).expanduser().resolve()
        if not config_path.exists():
            raise FileNotFoundError(f"config not found: {config_path}")
        cfg = load_config(config_path)
    else:
        cfg = default_config()
    return apply_overrides(
        cfg,
        seed=args.seed,
        epsilon=args.epsilon,
        top_k=args.topk,
        primary=args.primary,
        out_dir=Path(args.out).expanduser().resolve() if args.out else None,
        import_paths=[Path(p).expanduser().resolve() for p in args.import_preds],
    )


def run_command(command: str, cfg: RunConfig, sample: int | None = None) -> int:
    if command == "demo":
        run_demo(cfg)
        return EXIT_OK
    if command == "explain":
        if sample is None:
            raise ValueError("explain needs --sample N")
        print(explain_sample(cfg, sample), end="")
        return EXIT_OK
    STAGES[command](cfg)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command not in COMMANDS:
        parser.print_usage(sys.stderr)
        print(f"unknown subcommand: {args.command}", file=sys.stderr)
        return EXIT_USAGE

    try:
        cfg = _resolve_config(args)
    except OSError as e:
        print(str(e), file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    _setup_logging(cfg.app.log_level)
    try:
        return run_command(args.command, cfg, args.sample)
    except (ValueError, TrainingDivergedError) as e:
        LOGGER.error("%s failed: %s", args.command, e)
        return EXIT_VALIDATION
    except OSError as e:
        LOGGER.error("%s failed: %s", args.command, e)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
