import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from .cli.handlers import collect, extract, fuse, report, train
from .cli.middlewares.logging_middleware import LoggingMiddleware
from .data.models import RunConfig, Split, TrainConfig
from .services.evaluation import parse_methods
from .utils.config import settings
from .utils.errors import EXIT_USAGE, MissingInput, TimeFuseError, UsageError
from .utils.logger import logger, setup_logging

HANDLERS: Dict[str, Callable[[RunConfig], int]] = {
    "extract": extract.run,
    "collect": collect.run,
    "train": train.run,
    "fuse": fuse.run,
    "report": report.run,
}


class CliParser(argparse.ArgumentParser):
    command_parsers: Dict[str, argparse.ArgumentParser] = {}

    def error(self, message):
        raise UsageError(message, usage=self.format_usage())

    def usage_for(self, command: Optional[str]) -> str:
        return self.command_parsers.get(command, self).format_usage()


def _global_flags(with_defaults: bool) -> argparse.ArgumentParser:
    """--seed/--quiet/--threads; у подкоманд без умолчаний, значения верхнего уровня сохраняются."""
    def default(value):
        return value if with_defaults else argparse.SUPPRESS

    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--seed", type=int, default=default(settings.SEED))
    flags.add_argument("--quiet", action="store_true", default=default(False))
    flags.add_argument("--threads", type=int, default=default(settings.THREADS))
    return flags


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _name_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training")
    group.add_argument("--learning-rate", type=float, default=settings.FUSOR_LEARNING_RATE)
    group.add_argument("--batch-size", type=int, default=settings.FUSOR_BATCH_SIZE)
    group.add_argument("--max-epochs", type=int, default=settings.FUSOR_MAX_EPOCHS)
    group.add_argument("--patience", type=int, default=settings.FUSOR_PATIENCE)
    group.add_argument("--huber-delta", type=float, default=settings.FUSOR_HUBER_DELTA)
    group.add_argument("--val-fraction", type=float, default=settings.FUSOR_VAL_FRACTION)


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="timefuse", description="Adaptive fusion of forecasting models",
                       parents=[_global_flags(with_defaults=True)])
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)
    common = [_global_flags(with_defaults=False)]
    parser.command_parsers = commands.choices

    cmd = commands.add_parser("extract", help="compute 24 meta-features per window", parents=common)
    cmd.add_argument("windows", type=Path)
    cmd.add_argument("out", type=Path)

    cmd = commands.add_parser("collect", help="build a meta-training shard", parents=common)
    cmd.add_argument("windows", type=Path)
    cmd.add_argument("predictions", type=Path)
    cmd.add_argument("truths", type=Path)
    cmd.add_argument("--task-id", required=True)
    cmd.add_argument("--out", type=Path, required=True)
    cmd.add_argument("--split", choices=[s.value for s in Split], default=Split.META_TRAIN.value)
    cmd.add_argument("--models", type=_name_list, default=None)

    cmd = commands.add_parser("train", help="train one fusor on all shards", parents=common)
    cmd.add_argument("shards", type=Path, nargs="+")
    cmd.add_argument("--out", type=Path, required=True)
    cmd.add_argument("--export-theta", type=Path, default=None)
    _add_train_flags(cmd)

    cmd = commands.add_parser("fuse", help="apply a fusor", parents=common)
    cmd.add_argument("model", type=Path)
    source = cmd.add_mutually_exclusive_group(required=True)
    source.add_argument("--shard", type=Path)
    source.add_argument("--windows", type=Path)
    cmd.add_argument("--predictions", type=Path, default=None)
    cmd.add_argument("--models", type=_name_list, default=None)
    cmd.add_argument("--out", type=Path, required=True)
    cmd.add_argument("--emit-weights", type=Path, default=None)

    cmd = commands.add_parser("report", help="compare the fusor with baselines", parents=common)
    cmd.add_argument("shards", type=Path, nargs="+")
    cmd.add_argument("--model", type=Path, default=None)
    cmd.add_argument("--methods", default=None)
    cmd.add_argument("--topk-sweep", type=_int_list, default=[])
    cmd.add_argument("--holdout", default=None)
    cmd.add_argument("--out", type=Path, required=True)
    _add_train_flags(cmd)
    return parser


def _train_config(args: argparse.Namespace) -> TrainConfig:
    if not hasattr(args, "learning_rate"):
        return TrainConfig(seed=args.seed)
    try:
        return TrainConfig(
            learning_rate=args.learning_rate,
            batch_size=args.batch_size,
            max_epochs=args.max_epochs,
            patience=args.patience,
            seed=args.seed,
            huber_delta=args.huber_delta,
            val_fraction=args.val_fraction,
        )
    except ValueError as e:
        raise UsageError(f"Invalid training flags: {e}")


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Переводит аргументы в RunConfig и проверяет все входные пути до начала работы."""
    options = {}
    methods: List[str] = []
    if args.command == "extract":
        inputs, outputs = [args.windows], [args.out]
    elif args.command == "collect":
        if not args.task_id.strip():
            raise UsageError("--task-id must not be empty")
        inputs, outputs = [args.windows, args.predictions, args.truths], [args.out]
        options = {"task_id": args.task_id, "split": args.split, "models": args.models}
    elif args.command == "train":
        inputs, outputs = list(args.shards), [args.out]
        options = {"export_theta": args.export_theta}
    elif args.command == "fuse":
        if args.windows is not None and args.predictions is None:
            raise UsageError("--windows requires --predictions")
        inputs = [args.model] + [p for p in (args.shard, args.windows, args.predictions) if p is not None]
        outputs = [args.out] + ([args.emit_weights] if args.emit_weights else [])
        options = {"shard": args.shard, "windows": args.windows, "predictions": args.predictions,
                   "models": args.models, "emit_weights": args.emit_weights}
    else:
        inputs = list(args.shards) + ([args.model] if args.model else [])
        outputs = [args.out]
        default = "fused,mean,median,best-individual" if args.model else "mean,median,best-individual"
        methods = parse_methods(args.methods or default, args.topk_sweep)
        options = {"shards": list(args.shards), "model": args.model, "holdout": args.holdout}

    missing = [str(p) for p in inputs if not p.exists()]
    if missing:
        raise MissingInput(f"Input not found: {', '.join(missing)}", paths=missing)
    if args.threads < 1:
        raise UsageError("--threads must be positive")

    return RunConfig(
        command=args.command,
        seed=args.seed,
        threads=args.threads,
        quiet=args.quiet,
        inputs=inputs,
        outputs=outputs,
        train=_train_config(args),
        methods=methods,
        options=options,
    )


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        if args.quiet:
            setup_logging("WARNING")
        config = build_run_config(args)
    except TimeFuseError as e:
        logger.error("Invalid command line", error=e.message, exit_code=e.exit_code)
        if e.exit_code == EXIT_USAGE:
            print(e.context.get("usage") or parser.usage_for(command), end="", file=sys.stderr)
        print(f"error: {e.message}", file=sys.stderr)
        return e.exit_code

    return LoggingMiddleware()(HANDLERS[config.command], config)


if __name__ == "__main__":
    sys.exit(main())
