"""
sEMG preprocessing: powerline notch, Butterworth high-pass, angle resampling,
Z-score standardization and sliding-window segmentation, plus the SFW1
windowed-dataset container.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Final, Optional, Union

import numpy as np
import numpy.typing as npt
import structlog
from scipy import signal

from safenet.custom_exceptions import (
    ContainerFormatError,
    ContractViolationError,
    DimensionError,
    EmptyDatasetError,
    RangeError,
    SignalLengthError,
    UnsupportedFilterError,
)
from safenet.diffcore import FloatArray, IntArray
from safenet.schemas import DSPConfig, WindowStats
from safenet.utils.binary import BinaryReader, BinaryWriter

logger: structlog.stdlib.BoundLogger = structlog.get_logger()

ZSCORE_EPS: Final[float] = 1e-8
WINDOWED_MAGIC: Final[bytes] = b"SFW1"
WINDOWED_VERSION: Final[int] = 1


@dataclass(frozen=True)
class BiquadCascade:
    """Second-order sections `[b0, b1, b2, 1, a1, a2]`, one row per biquad."""

    sections: FloatArray

    def __post_init__(self) -> None:
        sos = np.atleast_2d(np.asarray(self.sections, dtype=np.float64))
        if sos.shape[1] != 6:
            raise DimensionError("second-order sections need six coefficients", sos.shape)
        sos = sos / sos[:, 3:4]
        for row in sos:
            poles = np.roots(row[3:])
            if np.any(np.abs(poles) >= 1.0):
                logger.error("Unstable biquad section", poles=poles.tolist(), tag="unstable_filter")
                raise ContractViolationError(f"biquad section has poles on or outside the unit circle: {poles}")
        object.__setattr__(self, "sections", sos)

    @property
    def order(self) -> int:
        return 2 * len(self.sections)

    def response(self, freqs_hz: npt.ArrayLike, fs_hz: float) -> npt.NDArray[np.complex128]:
        _, h = signal.sosfreqz(self.sections, worN=np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64)), fs=fs_hz)
        return h

    def gain_db(self, freqs_hz: npt.ArrayLike, fs_hz: float) -> FloatArray:
        return 20.0 * np.log10(np.maximum(np.abs(self.response(freqs_hz, fs_hz)), 1e-300))

    def then(self, other: "BiquadCascade") -> "BiquadCascade":
        return BiquadCascade(np.vstack([self.sections, other.sections]))


def _check_frequency(name: str, f_hz: float, fs_hz: float) -> None:
    if fs_hz <= 0 or not 0 < f_hz < fs_hz / 2:
        logger.error("Frequency out of range", parameter=name, frequency=f_hz, fs=fs_hz, tag="frequency_range")
        raise RangeError(f"{name} must lie in (0, {fs_hz / 2:g}) Hz for fs = {fs_hz:g} Hz, got {f_hz:g}")


def design_notch(f0_hz: float, fs_hz: float, q_factor: float) -> BiquadCascade:
    _check_frequency("notch frequency", f0_hz, fs_hz)
    b, a = signal.iirnotch(f0_hz, q_factor, fs=fs_hz)
    return BiquadCascade(signal.tf2sos(b, a))


def design_butter_highpass(order: int, fc_hz: float, fs_hz: float) -> BiquadCascade:
    """Butterworth prototype, bilinear transform with pre-warping, order/2 biquads."""
    if order < 2 or order % 2:
        logger.error("Unsupported filter order", order=order, tag="filter_order")
        raise UnsupportedFilterError(f"high-pass order must be even and >= 2, got {order}")
    _check_frequency("high-pass cutoff", fc_hz, fs_hz)
    return BiquadCascade(signal.butter(order, fc_hz, btype="highpass", fs=fs_hz, output="sos"))


def filt_zero_phase(cascade: BiquadCascade, x: FloatArray) -> FloatArray:
    """
    Forward-backward filtering along axis 0 (squared magnitude, zero phase).

    Edges use odd reflective padding of 3 × order samples.
    """
    padlen = 3 * cascade.order
    if x.shape[0] <= padlen:
        logger.error("Signal too short to filter", length=x.shape[0], padlen=padlen, tag="signal_length")
        raise SignalLengthError(f"zero-phase filtering needs more than {padlen} samples, got {x.shape[0]}")
    return signal.sosfiltfilt(cascade.sections, x, axis=0, padtype="odd", padlen=padlen)


def filt_forward(cascade: BiquadCascade, x: FloatArray) -> FloatArray:
    """Single causal pass along axis 0 from rest."""
    return signal.sosfilt(cascade.sections, x, axis=0)


def preprocessing_filter(cfg: DSPConfig, fs_hz: float) -> BiquadCascade:
    notch = design_notch(cfg.notch_hz, fs_hz, cfg.notch_q)
    return notch.then(design_butter_highpass(cfg.highpass_order, cfg.highpass_hz, fs_hz))


def resample_linear(x: FloatArray, fs_in: float, fs_out: float) -> FloatArray:
    """Linear interpolation onto the new grid; samples past the last input hold its value."""
    if fs_in <= 0 or fs_out <= 0:
        raise RangeError(f"sampling rates must be positive, got {fs_in} and {fs_out}")
    if fs_in == fs_out:
        return np.array(x, dtype=np.float64)

    squeeze = x.ndim == 1
    series = x[:, None] if squeeze else x
    length = int(round(series.shape[0] * fs_out / fs_in))
    t_in = np.arange(series.shape[0]) / fs_in
    t_out = np.arange(length) / fs_out
    out = np.column_stack([np.interp(t_out, t_in, series[:, j]) for j in range(series.shape[1])])
    return out[:, 0] if squeeze else out


@dataclass(frozen=True)
class ZScoreStats:
    mean: FloatArray
    std: FloatArray


def fit_zscore(x: FloatArray) -> ZScoreStats:
    """Per-channel statistics over every axis but the last."""
    axes = tuple(range(x.ndim - 1))
    return ZScoreStats(mean=x.mean(axis=axes), std=x.std(axis=axes))


def zscore(x: FloatArray, stats: ZScoreStats) -> FloatArray:
    return (x - stats.mean) / (stats.std + ZSCORE_EPS)


def inverse_zscore(z: FloatArray, stats: ZScoreStats) -> FloatArray:
    return z * (stats.std + ZSCORE_EPS) + stats.mean


@dataclass
class RawRecording:
    semg: FloatArray
    """[T_e, c] in millivolts"""
    angles: FloatArray
    """[T_a, n] in degrees"""
    fs_emg: float
    fs_ang: float
    subject_id: int
    condition: str = ""
    name: str = ""

    def __post_init__(self) -> None:
        if self.fs_emg <= 0 or self.fs_ang <= 0:
            raise RangeError(f"sampling rates must be positive, got {self.fs_emg} and {self.fs_ang}")

    @property
    def duration_s(self) -> float:
        return self.semg.shape[0] / self.fs_emg


def preprocess_recording(recording: RawRecording, cfg: DSPConfig) -> tuple[FloatArray, FloatArray]:
    """
    Filter the sEMG, bring the angles to the sEMG rate and trim both to a common length.

    The streams must agree in duration to within one angle sample period.
    """
    log = logger.bind(recording=recording.name, subject_id=recording.subject_id)
    semg = filt_zero_phase(preprocessing_filter(cfg, recording.fs_emg), recording.semg)
    angles = resample_linear(recording.angles, recording.fs_ang, recording.fs_emg)

    slack = math.ceil(recording.fs_emg / recording.fs_ang)
    if abs(semg.shape[0] - angles.shape[0]) > slack:
        log.error(
            "Stream durations disagree",
            semg_samples=semg.shape[0],
            angle_samples=angles.shape[0],
            tag="duration_mismatch",
        )
        raise DimensionError("sEMG and resampled angle streams differ in length", semg.shape, angles.shape)

    length = min(semg.shape[0], angles.shape[0])
    log.debug("Preprocessed recording", samples=length, tag="recording_preprocessed")
    return semg[:length], angles[:length]


def window_geometry(cfg: DSPConfig, fs_hz: float) -> tuple[int, int]:
    """Samples per window and per stride at `fs_hz`."""
    return int(round(cfg.window_s * fs_hz)), int(round(cfg.step_s * fs_hz))


@dataclass
class WindowedDataset:
    windows: FloatArray
    """[N, L, c]"""
    targets: FloatArray
    """[N, n], the angle row at each window's final sample"""
    labels: IntArray
    streams: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    """Recording index of each window"""
    conditions: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    L: int = 0
    step: int = 0

    def __post_init__(self) -> None:
        n = self.windows.shape[0]
        if not self.streams.size:
            self.streams = np.zeros(n, dtype=np.int64)
        if not self.conditions.size:
            self.conditions = np.zeros(n, dtype=np.int64)
        if not self.targets.shape[0] == self.labels.shape[0] == self.streams.shape[0] == self.conditions.shape[0] == n:
            raise DimensionError(
                "windowed arrays disagree in length",
                self.windows.shape,
                self.targets.shape,
                self.labels.shape,
            )

    def __len__(self) -> int:
        return int(self.windows.shape[0])

    @property
    def n_channels(self) -> int:
        return int(self.windows.shape[2])

    @property
    def n_joints(self) -> int:
        return int(self.targets.shape[1])

    def subset(self, index: IntArray) -> "WindowedDataset":
        return WindowedDataset(
            self.windows[index],
            self.targets[index],
            self.labels[index],
            self.streams[index],
            self.conditions[index],
            self.L,
            self.step,
        )

    @classmethod
    def concat(cls, parts: list["WindowedDataset"]) -> "WindowedDataset":
        if not parts:
            raise EmptyDatasetError("no windowed datasets to concatenate")
        return cls(
            np.concatenate([p.windows for p in parts]),
            np.concatenate([p.targets for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.streams for p in parts]),
            np.concatenate([p.conditions for p in parts]),
            parts[0].L,
            parts[0].step,
        )


def segment_windows(
    semg: FloatArray,
    angles: FloatArray,
    labels: Union[int, IntArray],
    L: int,
    step: int,
    *,
    stream: int = 0,
    condition: int = 0,
) -> WindowedDataset:
    """
    Window k covers samples [k·step, k·step + L) and targets angles[k·step + L - 1].

    `labels` is either one subject id for the whole recording or one per sample.
    """
    if semg.shape[0] != angles.shape[0]:
        raise DimensionError("sEMG and angles must share a time axis", semg.shape, angles.shape)
    if L < 1 or step < 1:
        raise RangeError(f"window length and step must be positive, got {L} and {step}")
    length = semg.shape[0]
    if length < L:
        logger.error("Recording shorter than a window", samples=length, window=L, tag="empty_dataset")
        raise EmptyDatasetError(f"a {length}-sample signal holds no {L}-sample window")

    windows = np.lib.stride_tricks.sliding_window_view(semg, L, axis=0)[::step]
    windows = np.array(np.swapaxes(windows, 1, 2), dtype=np.float64)
    ends = np.arange(windows.shape[0]) * step + L - 1
    if isinstance(labels, int):
        window_labels = np.full(len(ends), labels, dtype=np.int64)
    else:
        window_labels = np.asarray(labels, dtype=np.int64)[ends]

    return WindowedDataset(
        windows=windows,
        targets=np.array(angles[ends], dtype=np.float64),
        labels=window_labels,
        streams=np.full(len(ends), stream, dtype=np.int64),
        conditions=np.full(len(ends), condition, dtype=np.int64),
        L=L,
        step=step,
    )


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".stats.json")


def write_windowed(path: Path, dataset: WindowedDataset, stats: WindowStats) -> None:
    """
    SFW1 layout, little-endian: magic, u16 version, u32 N, L, c, n, step, then
    float32 windows, float32 targets and int32 labels, stream ids and condition ids.
    """
    writer = BinaryWriter(WINDOWED_MAGIC, WINDOWED_VERSION)
    for value in (len(dataset), dataset.L, dataset.n_channels, dataset.n_joints, dataset.step):
        writer.u32(value)
    writer.array(dataset.windows, "<f4")
    writer.array(dataset.targets, "<f4")
    for ids in (dataset.labels, dataset.streams, dataset.conditions):
        writer.array(ids, "<i4")

    path.write_bytes(writer.getvalue())
    sidecar_path(path).write_text(stats.model_dump_json(indent=2))
    logger.info("Wrote windowed dataset", path=str(path), windows=len(dataset), tag="windowed_written")


def read_windowed(path: Path) -> tuple[WindowedDataset, Optional[WindowStats]]:
    reader = BinaryReader(path.read_bytes(), WINDOWED_MAGIC, (WINDOWED_VERSION,))
    n, L, c, joints, step = (reader.u32() for _ in range(5))
    windows = reader.array((n, L, c), "<f4").astype(np.float64)
    targets = reader.array((n, joints), "<f4").astype(np.float64)
    labels, streams, conditions = (reader.array((n,), "<i4").astype(np.int64) for _ in range(3))
    if not reader.at_end():
        raise ContainerFormatError("trailing bytes after the condition ids")

    stats_file = sidecar_path(path)
    stats = WindowStats.model_validate_json(stats_file.read_text()) if stats_file.exists() else None
    return WindowedDataset(windows, targets, labels, streams, conditions, L, step), stats
