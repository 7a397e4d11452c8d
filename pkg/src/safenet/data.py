"""
Dataset ingestion and the synthetic gait cohort.

A dataset is a JSON manifest next to delimited-text recordings: one sEMG
file (rows at `fs_emg`) and one joint-angle file (rows at `fs_ang`) per
entry, each with a header row naming its columns.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Final, Optional

import numpy as np
import pandas as pd
import structlog
from pandas.errors import EmptyDataError, ParserError
from pydantic import ValidationError
from scipy import signal

from safenet import metrics
from safenet.custom_exceptions import InputNotFoundError, ParseError
from safenet.diffcore import FloatArray, Tensor
from safenet.dsp import RawRecording, WindowedDataset, preprocess_recording, segment_windows, window_geometry
from safenet.model import Network
from safenet.schemas import DatasetManifest, DSPConfig, ManifestEntry, SynthSpec

logger: structlog.stdlib.BoundLogger = structlog.get_logger()

ANGLE_BOUNDS: Final[tuple[float, float]] = (-30.0, 90.0)
CARRIER_BAND_HZ: Final[tuple[float, float]] = (20.0, 150.0)
POWERLINE_HZ: Final[float] = 50.0
FLOAT_FORMAT: Final[str] = "%.10g"

# offset and (amplitude, phase) per gait harmonic, loosely hip / knee / ankle in the sagittal plane
JOINT_PROFILES: Final[list[tuple[float, list[tuple[float, float]]]]] = [
    (15.0, [(22.0, 0.0), (4.0, 1.2)]),
    (28.0, [(22.0, 2.4), (14.0, 0.6)]),
    (4.0, [(9.0, 4.0), (6.0, 2.2)]),
]


def load_manifest(path: Path) -> DatasetManifest:
    if not path.is_file():
        logger.error("Manifest not found", path=str(path), tag="manifest_missing")
        raise InputNotFoundError(str(path), "manifest")
    try:
        return DatasetManifest.model_validate_json(path.read_text())
    except ValidationError as exc:
        logger.error("Invalid manifest", path=str(path), error_message=str(exc), tag="manifest_invalid")
        raise ParseError(f"invalid manifest: {exc}", path=str(path)) from exc


def read_table(path: Path, columns: list[str]) -> FloatArray:
    """
    Parse a delimited-text table whose header must equal `columns`.

    Line numbers in errors count the header as line 1.
    """
    if not path.is_file():
        raise InputNotFoundError(str(path), "recording")
    log = logger.bind(path=str(path))
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except EmptyDataError as exc:
        log.error("Empty recording", tag="empty_recording")
        raise ParseError("file is empty", path=str(path), line=1) from exc
    except ParserError as exc:
        log.error("Malformed recording", error_message=str(exc), tag="malformed_recording")
        raise ParseError(f"malformed delimited text: {exc}", path=str(path)) from exc

    header = [str(name).strip() for name in frame.columns]
    for position, expected in enumerate(columns):
        found = header[position] if position < len(header) else None
        if found != expected:
            log.error("Header mismatch", expected=expected, found=found, tag="header_mismatch")
            raise ParseError(f"column {position + 1} should be `{expected}`, found `{found}`", path=str(path), line=1)
    if len(header) > len(columns):
        raise ParseError(f"unexpected column `{header[len(columns)]}`", path=str(path), line=1)
    if frame.empty:
        raise ParseError("no samples after the header", path=str(path), line=2)

    values = frame.apply(pd.to_numeric, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        row, col = (int(i[0]) for i in np.nonzero(bad))
        cell = frame.iat[row, col]
        log.error("Non-numeric cell", line=row + 2, column=columns[col], tag="non_numeric")
        raise ParseError(f"non-numeric value {cell!r}", path=str(path), line=row + 2, column=columns[col])
    return values.to_numpy(dtype=np.float64)


def load_recording(entry: ManifestEntry, manifest: DatasetManifest, root: Path) -> RawRecording:
    return RawRecording(
        semg=read_table(root / entry.path, manifest.channel_names),
        angles=read_table(root / entry.angles_path, manifest.joint_names),
        fs_emg=entry.fs_emg,
        fs_ang=entry.fs_ang,
        subject_id=entry.subject_id,
        condition=entry.condition,
        name=entry.path,
    )


def load_cohort(manifest_path: Path) -> tuple[DatasetManifest, list[RawRecording]]:
    manifest = load_manifest(manifest_path)
    root = manifest_path.parent
    return manifest, [load_recording(entry, manifest, root) for entry in manifest.entries]


@dataclass
class WindowedCohort:
    dataset: WindowedDataset
    condition_names: list[str]
    fs: float


def window_cohort(recordings: list[RawRecording], cfg: DSPConfig) -> WindowedCohort:
    """Preprocess and window every recording; stream ids follow manifest order."""
    rates = {r.fs_emg for r in recordings}
    if len(rates) != 1:
        raise ParseError(f"recordings mix sEMG rates {sorted(rates)}", path="<manifest>")
    fs = rates.pop()
    L, step = window_geometry(cfg, fs)

    condition_names = sorted({r.condition for r in recordings})
    parts: list[WindowedDataset] = []
    for stream, recording in enumerate(recordings):
        semg, angles = preprocess_recording(recording, cfg)
        parts.append(
            segment_windows(
                semg,
                angles,
                recording.subject_id,
                L,
                step,
                stream=stream,
                condition=condition_names.index(recording.condition),
            )
        )
    dataset = WindowedDataset.concat(parts)
    metrics.windows_produced.inc(len(dataset))
    logger.info("Windowed cohort", recordings=len(recordings), windows=len(dataset), tag="cohort_windowed")
    return WindowedCohort(dataset, condition_names, fs)


def _gait_angles(spec: SynthSpec, rng: np.random.Generator, t: FloatArray, period_s: float) -> FloatArray:
    phase = 2.0 * np.pi * t / period_s
    columns: list[FloatArray] = []
    for j in range(spec.n_joints):
        offset, harmonics = JOINT_PROFILES[j % len(JOINT_PROFILES)]
        gain = 1.0 + 0.1 * rng.standard_normal()
        shift = 0.15 * rng.standard_normal()
        angle = np.full_like(t, offset + 2.0 * rng.standard_normal())
        for h, (amplitude, phi) in enumerate(harmonics, start=1):
            angle += gain * amplitude * np.sin(h * phase + phi + shift)
        columns.append(angle)
    return np.clip(np.column_stack(columns), *ANGLE_BOUNDS)


def _mixing_matrix(spec: SynthSpec, rng: np.random.Generator) -> FloatArray:
    while True:
        mixing = np.eye(spec.n_channels) + 0.3 * rng.standard_normal((spec.n_channels, spec.n_channels))
        if np.linalg.matrix_rank(mixing) == spec.n_channels:
            return mixing


def _semg(
    spec: SynthSpec,
    subject_rng: np.random.Generator,
    noise_rng: np.random.Generator,
    t: FloatArray,
    period_s: float,
) -> FloatArray:
    """Envelopes and mixing come from `subject_rng`, carrier and sensor noise from `noise_rng`."""
    centers = subject_rng.uniform(0.0, 2.0 * np.pi, spec.n_channels)
    sharpness = subject_rng.uniform(1.5, 4.0, spec.n_channels)
    mixing = _mixing_matrix(spec, subject_rng)

    low, high = CARRIER_BAND_HZ
    band = signal.butter(4, [low, min(high, 0.45 * spec.fs)], btype="bandpass", fs=spec.fs, output="sos")
    carrier = signal.sosfilt(band, noise_rng.standard_normal((t.size, spec.n_channels)), axis=0)
    carrier /= carrier.std(axis=0) + 1e-12

    phase = 2.0 * np.pi * t / period_s
    envelope = 0.15 + np.maximum(np.cos(phase[:, None] - centers[None, :]), 0.0) ** sharpness[None, :]

    mixed = (0.5 * carrier * envelope) @ mixing.T
    noise = spec.noise_level * mixed.std() * noise_rng.standard_normal(mixed.shape)
    powerline = 0.02 * np.sin(2.0 * np.pi * POWERLINE_HZ * t)[:, None] if spec.fs > 2 * POWERLINE_HZ else 0.0
    return mixed + noise + powerline


def generate_synthetic_cohort(spec: SynthSpec) -> list[RawRecording]:
    """
    Desk-scale stand-in for a gait sEMG dataset, a pure function of `spec`.

    Angles follow two-harmonic gait profiles of the phase 2πt/period; each
    sEMG channel is band-limited noise under a phase-locked activation
    envelope, mixed through a full-rank subject-specific matrix. Every
    subject walks once per condition: the period is `gait_period_s / cadence`
    while the subject's angle profile, envelopes and mixing stay fixed.
    """
    rng = np.random.default_rng(spec.seed)
    t_emg = np.arange(int(round(spec.duration_s * spec.fs))) / spec.fs
    t_ang = np.arange(int(round(spec.duration_s * spec.fs_ang))) / spec.fs_ang

    recordings: list[RawRecording] = []
    for subject in range(spec.n_subjects):
        subject_rng = np.random.default_rng(rng.integers(2**32))
        angle_seed, emg_seed = subject_rng.integers(2**32, size=2)
        for condition, cadence in spec.conditions.items():
            period_s = spec.gait_period_s / cadence
            angles = _gait_angles(spec, np.random.default_rng(angle_seed), t_ang, period_s)
            semg = _semg(
                spec,
                np.random.default_rng(emg_seed),
                np.random.default_rng(subject_rng.integers(2**32)),
                t_emg,
                period_s,
            )
            name = f"subject_{subject:02d}" if len(spec.conditions) == 1 else f"subject_{subject:02d}_{condition}"
            recordings.append(
                RawRecording(
                    semg=semg,
                    angles=angles,
                    fs_emg=spec.fs,
                    fs_ang=spec.fs_ang,
                    subject_id=subject,
                    condition=condition,
                    name=name,
                )
            )
    return recordings


def channel_names(n: int) -> list[str]:
    return [f"emg_{i}" for i in range(n)]


def joint_names(n: int) -> list[str]:
    named = ["hip", "knee", "ankle"]
    return [named[i] if i < len(named) else f"joint_{i}" for i in range(n)]


def write_table(path: Path, values: FloatArray, columns: list[str]) -> None:
    pd.DataFrame(values, columns=columns).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_cohort(
    out_dir: Path,
    recordings: list[RawRecording],
    channels: list[str],
    joints: list[str],
    generator: Optional[dict[str, Any]] = None,
) -> Path:
    """Write every recording pair plus `manifest.json`; returns the manifest path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: list[ManifestEntry] = []
    for recording in recordings:
        emg_file = f"{recording.name}_emg.csv"
        angle_file = f"{recording.name}_angles.csv"
        write_table(out_dir / emg_file, recording.semg, channels)
        write_table(out_dir / angle_file, recording.angles, joints)
        entries.append(
            ManifestEntry(
                path=emg_file,
                angles_path=angle_file,
                subject_id=recording.subject_id,
                fs_emg=recording.fs_emg,
                fs_ang=recording.fs_ang,
                condition=recording.condition,
            )
        )

    manifest = DatasetManifest(channel_names=channels, joint_names=joints, entries=entries, generator=generator)
    path = out_dir / "manifest.json"
    path.write_text(manifest.model_dump_json(indent=2))
    logger.info("Wrote cohort", out_dir=str(out_dir), recordings=len(recordings), tag="cohort_written")
    return path


def extract_features(model: Network, dataset: WindowedDataset, batch_size: int = 50) -> tuple[FloatArray, FloatArray]:
    """F_k and F_b of every window, model in eval mode."""
    model.eval()
    f_k: list[FloatArray] = []
    f_b: list[FloatArray] = []
    for start in range(0, len(dataset), batch_size):
        out = model(Tensor(dataset.windows[start : start + batch_size]))
        f_k.append(out.f_k.values)
        f_b.append(out.f_b.values)
    return np.concatenate(f_k), np.concatenate(f_b)


def export_features(
    model: Network,
    dataset: WindowedDataset,
    path: Path,
    config: Optional[dict[str, Any]] = None,
    batch_size: int = 50,
) -> int:
    """
    One row per window: F_k, then F_b, then the subject label.

    The first line is a `#` comment carrying the config echo.
    """
    f_k, f_b = extract_features(model, dataset, batch_size)
    d = f_k.shape[1]
    frame = pd.DataFrame(
        np.hstack([f_k, f_b]),
        columns=[f"fk_{i}" for i in range(d)] + [f"fb_{i}" for i in range(d)],
    )
    frame["label"] = dataset.labels
    with path.open("w", newline="") as handle:
        handle.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT)
    logger.info("Exported features", path=str(path), rows=len(frame), tag="features_exported")
    return len(frame)


def read_features(path: Path) -> tuple[FloatArray, FloatArray, FloatArray]:
    frame = pd.read_csv(path, comment="#")
    d = (frame.shape[1] - 1) // 2
    values = frame.to_numpy(dtype=np.float64)
    return values[:, :d], values[:, d : 2 * d], frame["label"].to_numpy()
