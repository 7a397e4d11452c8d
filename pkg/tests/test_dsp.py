from pathlib import Path

import numpy as np
import pytest

from safenet.custom_exceptions import (
    ContainerFormatError,
    ContractViolationError,
    DimensionError,
    EmptyDatasetError,
    RangeError,
    SignalLengthError,
    UnsupportedFilterError,
)
from safenet.dsp import (
    BiquadCascade,
    RawRecording,
    WindowedDataset,
    design_butter_highpass,
    design_notch,
    filt_forward,
    filt_zero_phase,
    fit_zscore,
    inverse_zscore,
    preprocess_recording,
    preprocessing_filter,
    read_windowed,
    resample_linear,
    segment_windows,
    sidecar_path,
    window_geometry,
    write_windowed,
    zscore,
)
from safenet.schemas import DSPConfig, WindowStats


def tone(freq_hz: float, fs_hz: float, n: int) -> np.ndarray:
    return np.sin(2 * np.pi * freq_hz * np.arange(n) / fs_hz)


def amplitude(x: np.ndarray) -> float:
    """Peak amplitude of a sinusoid sampled over whole periods."""
    return float(np.sqrt(2.0 * np.mean(x**2)))


def test_notch_response():
    notch = design_notch(50.0, 1000.0, 35.0)
    assert notch.order == 2
    assert notch.gain_db(50.0, 1000.0)[0] < -40
    assert notch.gain_db([10.0, 150.0], 1000.0) == pytest.approx([0.0, 0.0], abs=0.1)


def test_notch_removes_powerline_tone():
    x = tone(50.0, 1000.0, 20000) + 0.5 * tone(120.0, 1000.0, 20000)
    y = filt_zero_phase(design_notch(50.0, 1000.0, 35.0), x)
    residual = y[5000:15000] - 0.5 * tone(120.0, 1000.0, 20000)[5000:15000]
    assert np.max(np.abs(residual)) < 0.01


def test_highpass_response():
    hp = design_butter_highpass(4, 20.0, 500.0)
    assert hp.order == 4
    assert hp.gain_db(20.0, 500.0)[0] == pytest.approx(-3.01, abs=0.05)
    assert hp.gain_db(100.0, 500.0)[0] > -0.1
    assert hp.gain_db(2.0, 500.0)[0] <= -70


def test_highpass_passes_cutoff_tone_at_minus_three_db():
    y = filt_forward(design_butter_highpass(4, 20.0, 500.0), tone(20.0, 500.0, 5000))
    assert amplitude(y[3000:]) == pytest.approx(10 ** (-3.0103 / 20), abs=0.01)


def test_zero_phase_keeps_passband_tone_aligned():
    x = tone(100.0, 1000.0, 4000)
    y = filt_zero_phase(design_butter_highpass(4, 20.0, 1000.0), x)
    assert np.allclose(y[500:3500], x[500:3500], atol=0.01)


@pytest.mark.parametrize("order", [0, 3, 5])
def test_highpass_order_must_be_even(order: int):
    with pytest.raises(UnsupportedFilterError):
        design_butter_highpass(order, 20.0, 500.0)


@pytest.mark.parametrize("f_hz", [0.0, 250.0, 300.0])
def test_frequency_must_lie_below_nyquist(f_hz: float):
    with pytest.raises(RangeError):
        design_notch(f_hz, 500.0, 30.0)
    with pytest.raises(RangeError):
        design_butter_highpass(4, f_hz, 500.0)


def test_zero_phase_needs_more_samples_than_padding():
    cascade = design_butter_highpass(4, 20.0, 500.0)
    with pytest.raises(SignalLengthError):
        filt_zero_phase(cascade, np.zeros(12))
    assert filt_zero_phase(cascade, np.zeros(13)).shape == (13,)


def test_cascade_rejects_unstable_sections():
    with pytest.raises(ContractViolationError):
        BiquadCascade(np.array([[1.0, 0.0, 0.0, 1.0, -2.5, 1.5]]))


def test_cascade_normalizes_leading_denominator():
    cascade = BiquadCascade(np.array([[2.0, 0.0, 0.0, 2.0, 0.0, 0.0]]))
    assert cascade.sections.tolist() == [[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]]


def test_preprocessing_filter_chains_notch_and_highpass():
    cascade = preprocessing_filter(DSPConfig(), 500.0)
    assert cascade.order == 2 + 4
    assert cascade.gain_db(50.0, 500.0)[0] < -40


def test_resample_linear_with_end_hold():
    ramp = np.arange(100) / 100.0
    out = resample_linear(ramp, 100.0, 500.0)
    assert out.shape == (500,)
    assert np.allclose(out[:496], np.arange(496) / 500.0)
    assert np.all(out[496:] == ramp[-1])


def test_resample_linear_columns():
    x = np.column_stack([np.arange(10.0), -np.arange(10.0)])
    out = resample_linear(x, 10.0, 20.0)
    assert out.shape == (20, 2)
    assert np.allclose(out[:, 0], -out[:, 1])
    assert np.array_equal(resample_linear(x, 10.0, 10.0), x)


def test_zscore_round_trip(rng: np.random.Generator):
    x = rng.normal(5.0, 3.0, size=(200, 4))
    stats = fit_zscore(x)
    z = zscore(x, stats)
    assert np.allclose(z.mean(axis=0), 0.0)
    assert np.allclose(z.std(axis=0), 1.0, atol=1e-6)
    assert np.allclose(inverse_zscore(z, stats), x)


def test_zscore_of_constant_channel_is_finite():
    x = np.column_stack([np.ones(10), np.arange(10.0)])
    z = zscore(x, fit_zscore(x))
    assert np.all(np.isfinite(z))
    assert np.all(z[:, 0] == 0.0)


def test_segment_windows():
    semg = np.arange(100.0)[:, None] * np.ones((1, 2))
    angles = np.arange(100.0)[:, None]
    data = segment_windows(semg, angles, 3, 10, 5)

    assert len(data) == 19
    assert data.windows.shape == (19, 10, 2)
    assert np.array_equal(data.windows[4, :, 0], np.arange(20.0, 30.0))
    assert np.array_equal(data.targets[:, 0], np.arange(19) * 5 + 9)
    assert np.all(data.labels == 3)


def test_segment_windows_per_sample_labels():
    labels = np.repeat([0, 1], 10)
    data = segment_windows(np.zeros((20, 1)), np.zeros((20, 1)), labels, 5, 5)
    assert data.labels.tolist() == [0, 0, 1, 1]


def test_signal_exactly_one_window_long():
    assert len(segment_windows(np.zeros((10, 1)), np.zeros((10, 1)), 0, 10, 3)) == 1


def test_signal_shorter_than_window():
    with pytest.raises(EmptyDatasetError):
        segment_windows(np.zeros((9, 1)), np.zeros((9, 1)), 0, 10, 3)


def test_window_geometry_defaults():
    assert window_geometry(DSPConfig(), 500.0) == (50, 8)


def test_preprocess_recording_trims_to_common_length(rng: np.random.Generator):
    recording = RawRecording(rng.standard_normal((1002, 2)), rng.standard_normal((200, 3)), 500.0, 100.0, 0)
    semg, angles = preprocess_recording(recording, DSPConfig())
    assert semg.shape == (1000, 2)
    assert angles.shape == (1000, 3)


def test_preprocess_recording_rejects_mismatched_durations(rng: np.random.Generator):
    recording = RawRecording(rng.standard_normal((1000, 2)), rng.standard_normal((150, 3)), 500.0, 100.0, 0)
    with pytest.raises(DimensionError):
        preprocess_recording(recording, DSPConfig())


def test_dataset_concat_and_subset():
    a = segment_windows(np.zeros((20, 1)), np.zeros((20, 1)), 0, 5, 5, stream=0)
    b = segment_windows(np.ones((20, 1)), np.ones((20, 1)), 1, 5, 5, stream=1, condition=1)
    both = WindowedDataset.concat([a, b])
    assert len(both) == 8
    assert both.streams.tolist() == [0] * 4 + [1] * 4
    assert both.subset(np.array([5])).conditions.tolist() == [1]
    with pytest.raises(EmptyDatasetError):
        WindowedDataset.concat([])


def window_stats() -> WindowStats:
    return WindowStats(
        emg_mean=[0.0],
        emg_std=[1.0],
        angle_mean=[0.0],
        angle_std=[1.0],
        channel_names=["emg_0"],
        joint_names=["knee"],
        condition_names=["level"],
        fs=500.0,
        window=5,
        step=5,
    )


def test_windowed_container_round_trip(tmp_path: Path, rng: np.random.Generator):
    data = segment_windows(rng.standard_normal((30, 1)), rng.standard_normal((30, 1)), 2, 5, 5, stream=1)
    path = tmp_path / "windows.sfw"
    write_windowed(path, data, window_stats())

    restored, stats = read_windowed(path)
    assert sidecar_path(path).name == "windows.sfw.stats.json"
    assert stats == window_stats()
    assert np.allclose(restored.windows, data.windows, atol=1e-6)
    assert np.array_equal(restored.labels, data.labels)
    assert np.array_equal(restored.streams, data.streams)
    assert (restored.L, restored.step) == (5, 5)


def test_windowed_container_without_sidecar(tmp_path: Path):
    path = tmp_path / "windows.sfw"
    write_windowed(path, segment_windows(np.zeros((10, 1)), np.zeros((10, 1)), 0, 5, 5), window_stats())
    sidecar_path(path).unlink()
    _, stats = read_windowed(path)
    assert stats is None


def test_windowed_container_rejects_trailing_bytes(tmp_path: Path):
    path = tmp_path / "windows.sfw"
    write_windowed(path, segment_windows(np.zeros((10, 1)), np.zeros((10, 1)), 0, 5, 5), window_stats())
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ContainerFormatError):
        read_windowed(path)


def test_window_count_and_alignment_over_random_geometries(rng: np.random.Generator):
    for _ in range(200):
        L = int(rng.integers(1, 40))
        T = L + int(rng.integers(0, 200))
        step = int(rng.integers(1, 30))
        data = segment_windows(np.zeros((T, 1)), np.arange(T, dtype=float)[:, None], 0, L, step)
        assert len(data) == (T - L) // step + 1
        assert np.array_equal(data.targets[:, 0], np.arange(len(data)) * step + L - 1)
