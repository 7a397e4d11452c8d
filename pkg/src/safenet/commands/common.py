"""Helpers shared by the subcommands: data loading, output guards, normalization echo."""

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from pydantic import BaseModel

from safenet.custom_exceptions import InputNotFoundError, OutputExistsError, ParseError
from safenet.data import load_cohort, window_cohort
from safenet.dsp import WindowedDataset, ZScoreStats, read_windowed
from safenet.model import Network, load_checkpoint
from safenet.schemas import RunConfig, SAFENetConfig, WindowStats
from safenet.train import PreparedSplits, split, standardize

logger: structlog.stdlib.BoundLogger = structlog.get_logger()

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class LoadedData:
    dataset: WindowedDataset
    channel_names: list[str]
    joint_names: list[str]
    condition_names: list[str]
    n_subjects: int
    fs: float


def load_data(path: Path, config: RunConfig) -> LoadedData:
    """A JSON manifest of recordings or an SFW1 windowed container with its sidecar."""
    if not path.exists():
        raise InputNotFoundError(str(path), "dataset")
    if path.suffix == ".json":
        manifest, recordings = load_cohort(path)
        cohort = window_cohort(recordings, config.dsp)
        return LoadedData(
            cohort.dataset,
            manifest.channel_names,
            manifest.joint_names,
            cohort.condition_names,
            manifest.n_subjects,
            cohort.fs,
        )

    dataset, stats = read_windowed(path)
    if stats is None:
        raise ParseError("windowed container has no `.stats.json` sidecar", path=str(path))
    return LoadedData(
        dataset,
        stats.channel_names,
        stats.joint_names,
        stats.condition_names,
        int(dataset.labels.max()) + 1,
        stats.fs,
    )


def ensure_writable(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise OutputExistsError(str(path))
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def network_config(config: RunConfig, data: LoadedData) -> SAFENetConfig:
    return config.network_config(
        c_in=data.dataset.n_channels,
        n_joints=data.dataset.n_joints,
        n_subjects=data.n_subjects,
    )


def window_stats(data: LoadedData, splits: PreparedSplits, config: RunConfig) -> WindowStats:
    return WindowStats(
        emg_mean=splits.emg_stats.mean.tolist(),
        emg_std=splits.emg_stats.std.tolist(),
        angle_mean=splits.angle_stats.mean.tolist(),
        angle_std=splits.angle_stats.std.tolist(),
        channel_names=data.channel_names,
        joint_names=data.joint_names,
        condition_names=data.condition_names,
        subject_names=[f"subject_{s:02d}" for s in range(data.n_subjects)],
        fs=data.fs,
        window=data.dataset.L,
        step=data.dataset.step,
        config=config.model_dump(mode="json"),
    )


def normalization_from(stats: WindowStats) -> tuple[ZScoreStats, ZScoreStats]:
    return (
        ZScoreStats(np.array(stats.emg_mean), np.array(stats.emg_std)),
        ZScoreStats(np.array(stats.angle_mean), np.array(stats.angle_std)),
    )


def checkpoint_split(data: LoadedData, config: RunConfig, stats: WindowStats, name: str) -> WindowedDataset:
    """Select a split and standardize it with the statistics stored at training time."""
    parts = dict(zip(SPLIT_NAMES, split(data.dataset, config.split)))
    emg, angle = normalization_from(stats)
    return standardize(parts[name], emg, angle)


def write_json(path: Path, report: BaseModel) -> None:
    path.write_text(report.model_dump_json(indent=2))
    logger.info("Wrote report", path=str(path), tag="report_written")


def echo(config: RunConfig) -> dict[str, Any]:
    return config.model_dump(mode="json")


def load_trained(path: Path, data: LoadedData, config: RunConfig, validate: bool) -> tuple[Network, WindowStats]:
    """
    A trained network and the normalization statistics it was trained with.

    With `validate`, the checkpoint's architecture is checked against the
    one the runtime config resolves to for `data`.
    """
    if not path.is_file():
        raise InputNotFoundError(str(path), "checkpoint")
    runtime = network_config(config, data) if validate else None
    model, header = load_checkpoint(path, runtime)
    run = header.get("run") or {}
    if "normalization" not in run:
        raise ParseError("checkpoint carries no normalization statistics", path=str(path))
    return model, WindowStats.model_validate(run["normalization"])
