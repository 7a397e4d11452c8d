import numpy as np
import pytest

from safenet.data import generate_synthetic_cohort, window_cohort
from safenet.model import build_model
from safenet.schemas import MetricReport, RunConfig, SAFDConfig, SynthSpec, TrainConfig
from safenet.train import compare_ablation, evaluate, fit, prepare_splits

pytestmark = pytest.mark.slow


def run(config: RunConfig) -> MetricReport:
    cohort = window_cohort(generate_synthetic_cohort(config.synth), config.dsp)
    splits = prepare_splits(cohort.dataset, config.split)
    network = config.network_config(
        c_in=cohort.dataset.n_channels,
        n_joints=cohort.dataset.n_joints,
        n_subjects=config.synth.n_subjects,
    )
    model, _ = fit(build_model(network), splits.train, splits.val, config.train)
    return evaluate(model, splits.test, splits.angle_stats, condition_names=cohort.condition_names)


def test_default_cohort_is_learnable():
    report = run(RunConfig())
    assert report.mean.r2 is not None and report.mean.r2 >= 0.85
    assert report.identity_accuracy is not None and report.identity_accuracy >= 0.9


def test_synthetic_identity_is_linearly_decodable():
    """Least-squares one-vs-rest on per-window channel energies beats chance by a margin."""
    config = RunConfig()
    cohort = window_cohort(generate_synthetic_cohort(config.synth), config.dsp)
    splits = prepare_splits(cohort.dataset, config.split)

    def features(windows: np.ndarray) -> np.ndarray:
        energy = np.log(np.mean(windows**2, axis=1) + 1e-12)
        return np.column_stack([energy, np.ones(len(energy))])

    onehot = np.eye(config.synth.n_subjects)[splits.train.labels]
    weights, *_ = np.linalg.lstsq(features(splits.train.windows), onehot, rcond=None)
    predicted = np.argmax(features(splits.test.windows) @ weights, axis=1)
    accuracy = float(np.mean(predicted == splits.test.labels))
    assert accuracy > 1.0 / config.synth.n_subjects + 0.2


def test_decomposition_does_not_hurt_over_seeds():
    with_safd: list[MetricReport] = []
    without_safd: list[MetricReport] = []
    for seed in range(5):
        base = RunConfig(synth=SynthSpec(seed=seed), train=TrainConfig(seed=seed))
        with_safd.append(run(base))
        without_safd.append(run(base.model_copy(update={"safd": SAFDConfig(enabled=False)})))

    ablation = compare_ablation(with_safd, without_safd)
    assert ablation.median_with <= ablation.median_without
