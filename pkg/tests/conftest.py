import logging

import numpy as np
import pytest

from safenet.diffcore import Tensor
from safenet.schemas import EmbedConfig, SAFDConfig, SAFENetConfig, SSAConfig, SynthSpec, TCNConfig

logging.basicConfig(level=logging.DEBUG)
logger = logging.getLogger(__file__)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_config() -> SAFENetConfig:
    """A network small enough to run forward and backward passes in a unit test."""
    return SAFENetConfig(
        embed=EmbedConfig(c_in=3, d_model=8),
        ssa=SSAConfig(d_model=8, sampling_factor_c=1),
        tcn=TCNConfig(channels=8, dilations=(1,)),
        safd=SAFDConfig(iterations=2, weight_hidden=4),
        encoder_layers=1,
        n_joints=2,
        n_subjects=3,
        init_seed=7,
    )


@pytest.fixture
def small_batch(rng: np.random.Generator) -> Tensor:
    """Four windows of 12 samples over 3 channels."""
    return Tensor(rng.standard_normal((4, 12, 3)))


@pytest.fixture(scope="session")
def tiny_cohort_spec() -> SynthSpec:
    return SynthSpec(n_subjects=2, duration_s=2.0, n_channels=3, n_joints=2, seed=3)
