import re
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Section(BaseModel):
    """Configuration section: immutable, unknown keys rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class DSPConfig(Section):
    notch_hz: float = 50.0
    notch_q: float = 35.0
    highpass_hz: float = 20.0
    """20 Hz for the first dataset, 10 Hz for the second"""
    highpass_order: int = 4
    window_s: float = 0.100
    step_s: float = 0.016


class LIFConfig(Section):
    tau: float = 2.0
    v_threshold: float = 0.3
    v_rest: float = 0.0
    v_reset: float = 0.0
    surrogate_alpha: float = 2.0
    passthrough: bool = False
    """Replace spiking by identity; only used to check gradients of the surrounding network"""

    @model_validator(mode="after")
    def _check(self) -> "LIFConfig":
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.v_threshold <= self.v_rest:
            raise ValueError("v_threshold must exceed v_rest")
        if self.v_reset >= self.v_threshold:
            raise ValueError("v_reset must lie below v_threshold")
        return self


class EmbedConfig(Section):
    c_in: int = Field(5, gt=0)
    d_model: int = Field(64, gt=0)
    conv_kernel: int = 3

    @field_validator("conv_kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value < 1 or value % 2 == 0:
            raise ValueError(f"conv_kernel must be odd and positive, got {value}")
        return value


class SSAConfig(Section):
    d_model: int = Field(64, gt=0)
    n_heads: int = Field(1, gt=0)
    sampling_factor_c: int = Field(5, ge=1)
    lif: LIFConfig = LIFConfig()

    @model_validator(mode="after")
    def _heads_divide(self) -> "SSAConfig":
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        return self


class TCNConfig(Section):
    channels: int = Field(64, gt=0)
    kernel: int = Field(3, ge=1)
    dilations: tuple[int, ...] = (1, 2)
    residual: bool = True

    @field_validator("dilations")
    @classmethod
    def _increasing(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or value[0] < 1 or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError(f"dilations must be positive and strictly increasing, got {value}")
        return value


class SAFDConfig(Section):
    enabled: bool = True
    iterations: int = Field(2, ge=1)
    weight_hidden: int = Field(32, gt=0)


class LossWeights(Section):
    alpha: float = Field(0.1, ge=0)
    beta: float = Field(1.0, ge=0)
    gamma: float = Field(0.5, ge=0)


Architecture = Literal["safenet", "tcn"]


class SAFENetConfig(Section):
    architecture: Architecture = "safenet"
    embed: EmbedConfig = EmbedConfig()
    ssa: SSAConfig = SSAConfig()
    tcn: TCNConfig = TCNConfig()
    safd: SAFDConfig = SAFDConfig()
    encoder_layers: int = Field(2, ge=0)
    n_joints: int = Field(3, gt=0)
    n_subjects: int = Field(4, gt=0)
    loss: LossWeights = LossWeights()
    init_seed: int = 0

    @model_validator(mode="after")
    def _widths_agree(self) -> "SAFENetConfig":
        if not self.embed.d_model == self.ssa.d_model == self.tcn.channels:
            raise ValueError("embed.d_model, ssa.d_model and tcn.channels must agree")
        return self

    @property
    def d_model(self) -> int:
        return self.embed.d_model


class NetworkSection(Section):
    architecture: Architecture = "safenet"
    d_model: int = Field(64, gt=0)
    n_heads: int = Field(1, gt=0)
    sampling_factor_c: int = Field(5, ge=1)
    conv_kernel: int = 3
    encoder_layers: int = Field(2, ge=0)


class TCNSection(Section):
    kernel: int = Field(3, ge=1)
    dilations: tuple[int, ...] = (1, 2)
    residual: bool = True


class TrainConfig(Section):
    batch_size: int = Field(50, ge=1)
    epochs: int = Field(6, ge=1)
    lr_init: float = Field(1e-4, gt=0)
    early_stop_patience: int = Field(2, ge=1)
    lr_decay_factor: float = Field(0.5, gt=0, le=1)
    seed: int = 0


class SplitSpec(Section):
    train: int = Field(3, ge=1)
    val: int = Field(1, ge=1)
    test: int = Field(1, ge=1)

    @property
    def parts(self) -> int:
        return self.train + self.val + self.test


class SynthSpec(Section):
    n_subjects: int = Field(4, gt=0)
    gait_period_s: float = Field(1.2, gt=0)
    fs: float = Field(500.0, gt=0)
    fs_ang: float = Field(100.0, gt=0)
    duration_s: float = Field(60.0, gt=0)
    n_channels: int = Field(5, gt=0)
    n_joints: int = Field(3, gt=0)
    noise_level: float = Field(0.05, gt=0)
    seed: int = 0
    conditions: dict[str, float] = Field(default_factory=lambda: {"level": 1.0})
    """Walking condition name -> cadence relative to `gait_period_s`; one recording per subject per condition"""

    @field_validator("conditions")
    @classmethod
    def _valid_conditions(cls, value: dict[str, float]) -> dict[str, float]:
        if not value:
            raise ValueError("at least one walking condition is needed")
        for name, cadence in value.items():
            if not re.fullmatch(r"[A-Za-z0-9_-]+", name):
                raise ValueError(f"condition names must be letters, digits, `_` or `-`, got {name!r}")
            if cadence <= 0:
                raise ValueError(f"cadence of condition {name!r} must be positive, got {cadence}")
        return value


class ProfileConfig(Section):
    latency_repeats: int = Field(20, ge=10)
    warmup: int = Field(3, ge=3)
    batch_size: int = Field(50, ge=1)


class RunConfig(Section):
    dsp: DSPConfig = DSPConfig()
    lif: LIFConfig = LIFConfig()
    network: NetworkSection = NetworkSection()
    tcn: TCNSection = TCNSection()
    safd: SAFDConfig = SAFDConfig()
    loss: LossWeights = LossWeights()
    train: TrainConfig = TrainConfig()
    split: SplitSpec = SplitSpec()
    synth: SynthSpec = SynthSpec()
    profile: ProfileConfig = ProfileConfig()
    device_threads: int = Field(1, ge=1)

    def network_config(self, *, c_in: int, n_joints: int, n_subjects: int) -> SAFENetConfig:
        """Resolve the network hyperparameters against the dimensions of a dataset."""
        d = self.network.d_model
        return SAFENetConfig(
            architecture=self.network.architecture,
            embed=EmbedConfig(c_in=c_in, d_model=d, conv_kernel=self.network.conv_kernel),
            ssa=SSAConfig(
                d_model=d,
                n_heads=self.network.n_heads,
                sampling_factor_c=self.network.sampling_factor_c,
                lif=self.lif,
            ),
            tcn=TCNConfig(channels=d, kernel=self.tcn.kernel, dilations=self.tcn.dilations, residual=self.tcn.residual),
            safd=self.safd,
            encoder_layers=self.network.encoder_layers,
            n_joints=n_joints,
            n_subjects=n_subjects,
            loss=self.loss,
            init_seed=self.train.seed,
        )


class ManifestEntry(BaseModel):
    path: str
    """sEMG recording, one row per sample at fs_emg"""
    angles_path: str
    """Joint-angle recording, one row per sample at fs_ang"""
    subject_id: int = Field(ge=0)
    fs_emg: float = Field(gt=0)
    fs_ang: float = Field(gt=0)
    condition: str = ""


class DatasetManifest(BaseModel):
    channel_names: list[str]
    joint_names: list[str]
    entries: list[ManifestEntry]
    generator: Optional[dict[str, Any]] = None

    @model_validator(mode="after")
    def _contiguous_subjects(self) -> "DatasetManifest":
        if not self.entries:
            raise ValueError("manifest has no entries")
        ids = {entry.subject_id for entry in self.entries}
        if ids != set(range(len(ids))):
            raise ValueError(f"subject ids must be contiguous from 0, got {sorted(ids)}")
        return self

    @property
    def n_subjects(self) -> int:
        return len({entry.subject_id for entry in self.entries})


class WindowStats(BaseModel):
    """Sidecar of a windowed dataset container: normalization stats and naming."""

    emg_mean: list[float]
    emg_std: list[float]
    angle_mean: list[float]
    angle_std: list[float]
    channel_names: list[str]
    joint_names: list[str]
    condition_names: list[str]
    subject_names: list[str] = []
    fs: float
    window: int
    step: int
    config: Optional[dict[str, Any]] = None


class JointMetrics(BaseModel):
    rmse: float
    mae: float
    pcc: Optional[float]
    """None when a series has zero variance"""
    r2: Optional[float]


class MetricReport(BaseModel):
    n_windows: int
    joints: dict[str, JointMetrics]
    mean: JointMetrics
    identity_accuracy: Optional[float]
    per_condition: dict[str, dict[str, JointMetrics]] = {}
    per_subject_rmse: dict[str, dict[str, float]] = {}
    flags: list[str] = []
    config: Optional[dict[str, Any]] = None


class LayerCost(BaseModel):
    name: str
    flops: int
    effective_macs: Optional[float] = None


class CostReport(BaseModel):
    params: int
    model_size_bytes: int
    flops: int
    effective_macs: float
    latency_s: float
    latency_var_s2: float
    power_w: float
    """4.6 · FLOPs / T, the formula applied verbatim with FLOPs standing in for MACs"""
    power_w_effective: float
    """4.6 · effective MACs / T"""
    power_w_energy_model: float
    """4.6 pJ per effective MAC divided by T"""
    power_note: str
    layers: list[LayerCost] = []
    config: Optional[dict[str, Any]] = None


class AblationReport(BaseModel):
    subjects: list[str]
    rmse_with: list[float]
    rmse_without: list[float]
    median_with: float
    median_without: float
    f_statistic: Optional[float]
    p_value: Optional[float]
