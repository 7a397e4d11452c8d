"""`safenet eval`: metrics of a trained checkpoint on one split."""

from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any

from safenet.commands.common import (
    SPLIT_NAMES,
    checkpoint_split,
    echo,
    ensure_writable,
    load_data,
    load_trained,
    normalization_from,
    write_json,
)
from safenet.schemas import RunConfig
from safenet.train import evaluate


def evaluate_checkpoint(args: Namespace, config: RunConfig) -> int:
    data = load_data(args.data, config)
    model, stats = load_trained(args.checkpoint, data, config, validate=args.config is not None)
    path = ensure_writable(args.out / f"metrics_{args.split}.json", args.force)

    _, angle_stats = normalization_from(stats)
    report = evaluate(
        model,
        checkpoint_split(data, config, stats, args.split),
        angle_stats,
        joint_names=data.joint_names,
        condition_names=data.condition_names,
        batch_size=config.train.batch_size,
        config=echo(config),
    )
    write_json(path, report)
    r2 = "n/a" if report.mean.r2 is None else f"{report.mean.r2:.3f}"
    print(f"{args.split}: {report.n_windows} windows, RMSE {report.mean.rmse:.3f} deg, R2 {r2}")
    return 0


def register(subparsers: Any, parents: list[ArgumentParser]) -> None:
    parser = subparsers.add_parser("eval", parents=parents, help="evaluate a checkpoint")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--data", type=Path, required=True, help="manifest (.json) or windowed container (.sfw)")
    parser.add_argument("--split", choices=SPLIT_NAMES, default="test")
    parser.set_defaults(handler=evaluate_checkpoint)
