"""`safenet preprocess`: filter, resample and window a cohort into an SFW1 container."""

from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any

from safenet.commands.common import ensure_writable, load_data, window_stats
from safenet.dsp import write_windowed
from safenet.schemas import RunConfig
from safenet.train import prepare_splits


def preprocess(args: Namespace, config: RunConfig) -> int:
    data = load_data(args.data, config)
    path = ensure_writable(args.out / "windows.sfw", args.force)
    # The container keeps raw windows; the sidecar carries training-split statistics.
    splits = prepare_splits(data.dataset, config.split)
    write_windowed(path, data.dataset, window_stats(data, splits, config))
    print(path)
    return 0


def register(subparsers: Any, parents: list[ArgumentParser]) -> None:
    parser = subparsers.add_parser("preprocess", parents=parents, help="window a recording manifest")
    parser.add_argument("--data", type=Path, required=True, help="dataset manifest (.json)")
    parser.set_defaults(handler=preprocess)
