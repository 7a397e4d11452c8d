"""`safenet decompose`: dump the kinematic and biological features of every window."""

from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any

from safenet.commands.common import SPLIT_NAMES, checkpoint_split, echo, ensure_writable, load_data, load_trained
from safenet.data import export_features
from safenet.schemas import RunConfig


def decompose(args: Namespace, config: RunConfig) -> int:
    data = load_data(args.data, config)
    model, stats = load_trained(args.checkpoint, data, config, validate=args.config is not None)
    path = ensure_writable(args.out / f"features_{args.split}.csv", args.force)
    rows = export_features(
        model,
        checkpoint_split(data, config, stats, args.split),
        path,
        echo(config),
        config.train.batch_size,
    )
    print(f"{rows} rows -> {path}")
    return 0


def register(subparsers: Any, parents: list[ArgumentParser]) -> None:
    parser = subparsers.add_parser("decompose", parents=parents, help="export F_k / F_b features")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--data", type=Path, required=True, help="manifest (.json) or windowed container (.sfw)")
    parser.add_argument("--split", choices=SPLIT_NAMES, default="test")
    parser.set_defaults(handler=decompose)
