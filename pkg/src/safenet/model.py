"""
The SAFE-Net network: spiking sparse-attention encoder, feature decomposition
cascade, regression/identity heads, losses and the SFN1 checkpoint format.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Final, Optional, Union

import numpy as np
import structlog

from safenet.attention import DataEmbedding, SSABlock
from safenet.custom_exceptions import ConfigMismatchError, ContainerFormatError, DimensionError, RangeError
from safenet.diffcore import (
    Conv1d,
    FloatArray,
    IntArray,
    Linear,
    Module,
    Tensor,
    add,
    log_softmax,
    mean,
    mul,
    pick,
    relu,
    reshape,
    sigmoid,
    square,
    sub,
)
from safenet.diffcore import sum as reduce_sum
from safenet.schemas import LossWeights, SAFDConfig, SAFENetConfig, SSAConfig, TCNConfig
from safenet.snn import LIFNode
from safenet.utils.binary import BinaryReader, BinaryWriter

logger: structlog.stdlib.BoundLogger = structlog.get_logger()

CHECKPOINT_MAGIC: Final[bytes] = b"SFN1"
CHECKPOINT_VERSION: Final[int] = 1
TRAINING_ONLY_FIELDS: Final[set[str]] = {"init_seed", "loss"}


class TemporalBlock(Module):
    """Two causal dilated convolutions with ReLU; optional residual add before the last ReLU."""

    def __init__(self, channels: int, kernel: int, dilation: int, residual: bool, rng: np.random.Generator):
        self.residual = residual
        self.conv1 = Conv1d(channels, channels, kernel, rng, dilation=dilation, causal=True)
        self.conv2 = Conv1d(channels, channels, kernel, rng, dilation=dilation, causal=True)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv2(relu(self.conv1(x)))
        return relu(add(y, x)) if self.residual else relu(y)


class TCN(Module):
    def __init__(self, cfg: TCNConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.blocks = [TemporalBlock(cfg.channels, cfg.kernel, d, cfg.residual, rng) for d in cfg.dilations]

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x

    @property
    def receptive_field(self) -> int:
        return 1 + 2 * (self.cfg.kernel - 1) * sum(self.cfg.dilations)


def tcn_forward(tcn: TCN, x: Tensor) -> Tensor:
    """Causal: output at τ depends only on inputs [0..τ]. Accepts [t, d] or [B, t, d]."""
    if x.ndim == 2:
        return reshape(tcn(reshape(x, (1, *x.shape))), x.shape)
    return tcn(x)


class WeightModule(Module):
    """W(·): d → hidden → d with a sigmoid gate, so every weight lies in (0, 1)."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def __call__(self, p: Tensor) -> Tensor:
        return sigmoid(self.fc2(relu(self.fc1(p))))


@dataclass
class DecompositionOutput:
    f_k: Tensor
    """Kinematic feature, the sum of the meta-kinematic features"""
    f_b: Tensor
    """Biological feature, the last meta-biological feature"""
    q_list: list[Tensor] = field(default_factory=lambda: [])
    r_list: list[Tensor] = field(default_factory=lambda: [])


class SAFD(Module):
    """
    Cascade p_s = SSA(x_s), w_s = W(p_s), q_s = w_s ⊙ p_s, r_s = x_s - q_s, x_{s+1} = r_s.

    Each stage owns its attention block and weighting module.
    """

    def __init__(self, cfg: SAFDConfig, ssa: SSAConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.ssa = [SSABlock(ssa, rng) for _ in range(cfg.iterations)]
        self.weights = [WeightModule(ssa.d_model, cfg.weight_hidden, rng) for _ in range(cfg.iterations)]

    def __call__(self, x1: Tensor) -> DecompositionOutput:
        single = x1.ndim == 1
        if single:
            x1 = reshape(x1, (1, x1.shape[0]))
        batch, d = x1.shape

        x = x1
        q_list: list[Tensor] = []
        r_list: list[Tensor] = []
        for ssa, weight in zip(self.ssa, self.weights):
            p = reshape(ssa(reshape(x, (batch, 1, d))), (batch, d))
            q = mul(weight(p), p)
            r = sub(x, q)
            q_list.append(q)
            r_list.append(r)
            x = r

        f_k = q_list[0]
        for q in q_list[1:]:
            f_k = add(f_k, q)
        out = DecompositionOutput(f_k=f_k, f_b=r_list[-1], q_list=q_list, r_list=r_list)
        if single:
            return _unbatch(out)
        return out


def _unbatch(out: DecompositionOutput) -> DecompositionOutput:
    def one(t: Tensor) -> Tensor:
        return reshape(t, (t.shape[-1],))

    return DecompositionOutput(one(out.f_k), one(out.f_b), [one(q) for q in out.q_list], [one(r) for r in out.r_list])


def safd_decompose(safd: SAFD, x1: Tensor) -> DecompositionOutput:
    return safd(x1)


class Heads(Module):
    def __init__(self, d: int, n_joints: int, n_subjects: int, rng: np.random.Generator):
        self.regression = Linear(d, n_joints, rng)
        self.classifier = Linear(d, n_subjects, rng)

    def __call__(self, f_k: Tensor, f_b: Tensor) -> tuple[Tensor, Tensor]:
        return self.regression(f_k), self.classifier(f_b)


class Encoder(Module):
    """Embedding, then [SSA → TCN] × layers, then the mean over time."""

    def __init__(self, cfg: SAFENetConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = DataEmbedding(cfg.embed, rng)
        self.attention = [SSABlock(cfg.ssa, rng) for _ in range(cfg.encoder_layers)]
        self.tcn = [TCN(cfg.tcn, rng) for _ in range(cfg.encoder_layers)]

    def __call__(self, x: Tensor) -> Tensor:
        h = self.embedding(x)
        for ssa, tcn in zip(self.attention, self.tcn):
            h = tcn(ssa(h))
        return mean(h, axis=1)


@dataclass
class ForwardOutput:
    angles: Tensor
    logits: Optional[Tensor]
    f_k: Tensor
    f_b: Tensor
    decomposition: Optional[DecompositionOutput] = None


class SAFENet(Module):
    def __init__(self, cfg: SAFENetConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        d = cfg.d_model
        self.encoder = Encoder(cfg, rng)
        self.safd = SAFD(cfg.safd, cfg.ssa, rng) if cfg.safd.enabled else None
        self.heads = Heads(d, cfg.n_joints, cfg.n_subjects, rng)

    def encode(self, window: Tensor) -> Tensor:
        """x1 for a window [t, c] (returns [d]) or a batch [B, t, c] (returns [B, d])."""
        if window.ndim == 2:
            return reshape(self.encoder(reshape(window, (1, *window.shape))), (self.cfg.d_model,))
        return self.encoder(window)

    def __call__(self, batch: Tensor) -> ForwardOutput:
        if batch.ndim != 3 or batch.shape[2] != self.cfg.embed.c_in:
            raise DimensionError(f"expected a batch [B, t, {self.cfg.embed.c_in}]", batch.shape)
        x1 = self.encoder(batch)
        if self.safd is None:
            angles, logits = self.heads(x1, x1)
            return ForwardOutput(angles, logits, x1, x1)
        parts = self.safd(x1)
        angles, logits = self.heads(parts.f_k, parts.f_b)
        return ForwardOutput(angles, logits, parts.f_k, parts.f_b, parts)

    def spiking_layers(self) -> list[LIFNode]:
        return [m for m in self.modules() if isinstance(m, LIFNode)]


class TCNBaseline(Module):
    """Plain temporal-convolution regressor: embedding, TCN stack, mean over time, linear head."""

    def __init__(self, cfg: SAFENetConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.embedding = DataEmbedding(cfg.embed, rng)
        self.tcn = [TCN(cfg.tcn, rng) for _ in range(max(cfg.encoder_layers, 1))]
        self.regression = Linear(cfg.d_model, cfg.n_joints, rng)

    def __call__(self, batch: Tensor) -> ForwardOutput:
        if batch.ndim != 3 or batch.shape[2] != self.cfg.embed.c_in:
            raise DimensionError(f"expected a batch [B, t, {self.cfg.embed.c_in}]", batch.shape)
        h = self.embedding(batch)
        for tcn in self.tcn:
            h = tcn(h)
        pooled = mean(h, axis=1)
        return ForwardOutput(self.regression(pooled), None, pooled, pooled)

    def spiking_layers(self) -> list[LIFNode]:
        return []


Network = Union[SAFENet, TCNBaseline]


def build_model(cfg: SAFENetConfig) -> Network:
    return SAFENet(cfg) if cfg.architecture == "safenet" else TCNBaseline(cfg)


def safenet_forward(model: Network, batch: Tensor) -> ForwardOutput:
    return model(batch)


def heads(model: SAFENet, f_k: Tensor, f_b: Tensor) -> tuple[Tensor, Tensor]:
    return model.heads(f_k, f_b)


def firing_rates(model: Network) -> dict[str, float]:
    """Fraction of emitted spikes per spiking layer since the counters were last reset."""
    return {
        name: node.firing_rate for name, node in _named_modules(model) if isinstance(node, LIFNode) and node.element_count
    }


def reset_firing_counters(model: Network) -> None:
    for node in model.spiking_layers():
        node.reset_counters()


def _named_modules(module: Module, prefix: str = "") -> list[tuple[str, Module]]:
    found: list[tuple[str, Module]] = [(prefix.rstrip(".") or "<root>", module)]
    for name, child in module.children():
        found += _named_modules(child, f"{prefix}{name}.")
    return found


def loss_mse(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError("prediction and target differ in shape", pred.shape, target.shape)
    return mean(square(sub(pred, target)))


def loss_ce(logits: Tensor, labels: IntArray) -> Tensor:
    """Mean negative log-likelihood of the true class via log-sum-exp."""
    n_classes = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise RangeError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    return -mean(pick(log_softmax(logits, axis=-1), labels))


def loss_orth(f_k: Tensor, f_b: Tensor) -> Tensor:
    """Batch mean of (F_k · F_b)²."""
    if f_k.shape != f_b.shape:
        raise DimensionError("kinematic and biological features differ in shape", f_k.shape, f_b.shape)
    return mean(square(reduce_sum(mul(f_k, f_b), axis=-1)))


def loss_total(l_re: Any, l_cls: Any, l_orth: Any, alpha: float, beta: float, gamma: float) -> Any:
    """alpha·L_re + beta·L_cls + gamma·L_orth for tensors or plain numbers."""
    return alpha * l_re + beta * l_cls + gamma * l_orth


@dataclass
class LossBreakdown:
    total: Tensor
    regression: float
    classification: float
    orthogonal: float


def compute_loss(out: ForwardOutput, targets: Tensor, labels: IntArray, weights: LossWeights) -> LossBreakdown:
    """
    Weighted objective for whichever heads the network has.

    The decomposition-free ablation has no orthogonality term (F_k and F_b are
    the same vector) and the TCN baseline only regresses.
    """
    l_re = loss_mse(out.angles, targets)
    total = weights.alpha * l_re
    l_cls_value = l_orth_value = 0.0
    if out.logits is not None:
        l_cls = loss_ce(out.logits, labels)
        total = total + weights.beta * l_cls
        l_cls_value = l_cls.item()
    if out.decomposition is not None:
        l_orth = loss_orth(out.f_k, out.f_b)
        total = total + weights.gamma * l_orth
        l_orth_value = l_orth.item()
    return LossBreakdown(total, l_re.item(), l_cls_value, l_orth_value)


def serialize_checkpoint(model: Network, run_config: Optional[dict[str, Any]] = None) -> bytes:
    """
    SFN1 layout, little-endian: magic, u16 version, u32-prefixed JSON config
    echo, u32 blob count, then per blob u16 name length, name, u8 rank,
    u32 dimensions and a float64 payload.
    """
    header = {"network": model.cfg.model_dump(mode="json"), "run": run_config}
    writer = BinaryWriter(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    writer.blob(json.dumps(header, sort_keys=True).encode())

    state = model.state_dict()
    writer.u32(len(state))
    for name, values in state.items():
        encoded = name.encode()
        writer.u16(len(encoded))
        writer.raw(encoded)
        writer.u8(values.ndim)
        for dim in values.shape:
            writer.u32(dim)
        writer.array(values, "<f8")
    return writer.getvalue()


def save_checkpoint(path: Path, model: Network, run_config: Optional[dict[str, Any]] = None) -> int:
    data = serialize_checkpoint(model, run_config)
    path.write_bytes(data)
    logger.info("Saved checkpoint", path=str(path), size=len(data), tag="checkpoint_saved")
    return len(data)


def _config_differences(saved: Any, runtime: Any, prefix: str = "") -> list[str]:
    if isinstance(saved, dict) and isinstance(runtime, dict):
        differences: list[str] = []
        for key in sorted(set(saved) | set(runtime)):  # pyright: ignore[reportUnknownArgumentType, reportUnknownVariableType]
            differences += _config_differences(saved.get(key), runtime.get(key), f"{prefix}{key}.")  # pyright: ignore
        return differences
    if saved != runtime:
        return [f"{prefix.rstrip('.')}: checkpoint={saved!r} runtime={runtime!r}"]
    return []


def read_checkpoint(data: bytes) -> tuple[dict[str, Any], dict[str, FloatArray]]:
    reader = BinaryReader(data, CHECKPOINT_MAGIC, (CHECKPOINT_VERSION,))
    header: dict[str, Any] = json.loads(reader.blob())
    state: dict[str, FloatArray] = {}
    for _ in range(reader.u32()):
        name = reader.raw(reader.u16()).decode()
        shape = tuple(reader.u32() for _ in range(reader.u8()))
        state[name] = reader.array(shape, "<f8").astype(np.float64)
    if not reader.at_end():
        raise ContainerFormatError("trailing bytes after the last weight blob")
    return header, state


def load_checkpoint(path: Path, runtime: Optional[SAFENetConfig] = None) -> tuple[Network, dict[str, Any]]:
    """
    Rebuild a network from an SFN1 file.

    With a `runtime` config, the echoed architecture must match it exactly;
    initialization seed and loss weights are not compared.
    """
    header, state = read_checkpoint(path.read_bytes())
    saved = SAFENetConfig.model_validate(header["network"])
    if runtime is not None:
        differences = _config_differences(
            saved.model_dump(mode="json", exclude=TRAINING_ONLY_FIELDS),
            runtime.model_dump(mode="json", exclude=TRAINING_ONLY_FIELDS),
        )
        if differences:
            logger.error("Checkpoint config mismatch", differences=differences, tag="config_mismatch")
            raise ConfigMismatchError(differences)

    model = build_model(saved)
    model.load_state_dict(state)
    model.eval()
    return model, header
