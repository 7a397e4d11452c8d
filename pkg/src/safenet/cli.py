import argparse
import logging
import os
import sys
import tomllib
import uuid
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Optional, Sequence

import sentry_sdk
import structlog
from logging_config import configure_logger
from pydantic import ValidationError
from sentry_sdk.integrations.logging import LoggingIntegration
from structlog_sentry import SentryProcessor

from safenet import __version__
from safenet.constants import GIT_SHA, Sentry, settings
from safenet.custom_exceptions import InputNotFoundError, ParseError, SafeNetError, UsageError
from safenet.schemas import RunConfig

logger: structlog.stdlib.BoundLogger = structlog.get_logger()

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

run_id: ContextVar[Optional[str]] = ContextVar("run_id", default=None)


def add_run_id(logger: logging.Logger, method_name: str, event_dict: dict[str, Any]) -> dict[str, Any]:
    """Add the invocation id to log message."""
    if current := run_id.get():
        event_dict["run_id"] = current
    return event_dict


def setup_logging() -> None:
    path = Path(settings.log_config_file)
    if not path.is_file():
        logger.warning("Logging config not found, keeping defaults", path=str(path), tag="log_config_missing")
        return
    with path.open("rb") as f:
        data = tomllib.load(f)

    configure_logger(data, [add_run_id, SentryProcessor(event_level=logging.ERROR, level=logging.DEBUG)])


def setup_sentry() -> None:
    sentry_sdk.init(
        dsn=Sentry.dsn,
        environment=Sentry.environment,
        release=f"{Sentry.release_prefix}@{GIT_SHA}",
        integrations=[LoggingIntegration(event_level=None, level=None)],
    )


def common_options() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", type=Path, help="TOML run configuration")
    parser.add_argument("--seed", type=int, help="seed for data generation, initialization and shuffling")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--force", action="store_true", help="overwrite existing outputs")
    parser.add_argument("--no-safd", action="store_true", help="disable the feature decomposition stage")
    parser.add_argument("--safd-iters", type=int, help="decomposition stages")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch", type=int, help="mini-batch size")
    parser.add_argument("--lr", type=float, help="initial learning rate")
    parser.add_argument("--device-threads", type=int, help="numeric library worker threads")
    parser.add_argument("--model", choices=["safenet", "tcn"], help="network family")
    return parser


def build_parser() -> argparse.ArgumentParser:
    from safenet.commands import registered

    parser = argparse.ArgumentParser(
        prog="safenet",
        description="Spiking sparse-attention feature decomposition for sEMG joint-angle estimation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    parents = [common_options()]
    for register in registered:
        register(subparsers, parents)
    return parser


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)  # pyright: ignore[reportUnknownArgumentType]
        else:
            merged[key] = value
    return merged


def read_config_file(path: Path) -> dict[str, Any]:
    if not path.is_file():
        raise InputNotFoundError(str(path), "config file")
    try:
        with path.open("rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(str(exc), path=str(path)) from exc


def flag_overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}

    def put(section: str, key: str, value: Any) -> None:
        if value is not None:
            overrides.setdefault(section, {})[key] = value

    put("train", "seed", args.seed)
    put("synth", "seed", args.seed)
    put("train", "epochs", args.epochs)
    put("train", "batch_size", args.batch)
    put("train", "lr_init", args.lr)
    put("safd", "iterations", args.safd_iters)
    put("network", "architecture", args.model)
    if args.no_safd:
        put("safd", "enabled", False)
    if args.device_threads is not None:
        overrides["device_threads"] = args.device_threads
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the TOML file, then command-line flags."""
    data = read_config_file(args.config) if args.config else {}
    return RunConfig.model_validate(_merge(data, flag_overrides(args)))


def limit_threads(argv: Sequence[str]) -> None:
    """Honour --device-threads before the numeric libraries start their pools."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--device-threads", type=int)
    known, _ = pre.parse_known_args(argv)
    if known.device_threads:
        for name in THREAD_VARIABLES:
            os.environ[name] = str(known.device_threads)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    limit_threads(argv)
    args = build_parser().parse_args(argv)

    run_id.set(uuid.uuid4().hex[:12])
    setup_logging()
    setup_sentry()
    log = logger.bind(command=args.command)

    try:
        config = resolve_config(args)
        log.info("Starting", version=__version__, tag="command_start")
        return args.handler(args, config)
    except (UsageError, ValidationError) as exc:
        log.error("Usage error", error_message=str(exc), tag="usage_error")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SafeNetError, OSError) as exc:
        log.error("Command failed", error_message=str(exc), tag="runtime_error")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
