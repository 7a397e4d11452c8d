"""
Cost accounting: parameters, analytic FLOPs, spike-aware effective MACs,
latency and the 4.6·MAC/T power figure.

FLOPs are counted per sample from layer shapes: a linear map of m rows is
2·m·k·n, a convolution 2·t·k·c_in·c_out, biases, normalization, spiking,
softmax and every elementwise step one operation per element, and attention
scores plus application are counted dense at 2·(2·t·t·d).
"""

import threading
import time
from functools import singledispatch
from pathlib import Path
from typing import Any, Final, Optional

import numpy as np
import pandas as pd
import structlog

from safenet.attention import DataEmbedding, SpikeOpCounter, SSABlock
from safenet.custom_exceptions import BenchmarkBusyError, InvalidLatencyError, PreconditionError
from safenet.diffcore import BatchNorm, Conv1d, Linear, Module, Tensor
from safenet.model import SAFD, TCN, Encoder, Heads, Network, SAFENet, TCNBaseline, TemporalBlock, WeightModule
from safenet.model import serialize_checkpoint
from safenet.schemas import CostReport, LayerCost, ProfileConfig

logger: structlog.stdlib.BoundLogger = structlog.get_logger()

POWER_COEFFICIENT: Final[float] = 4.6
ENERGY_PER_MAC_J: Final[float] = 4.6e-12
POWER_NOTE: Final[str] = (
    "power_w applies P = 4.6 * MAC / T verbatim with dense FLOPs standing in for MACs and T in seconds; "
    "the result carries no physical unit. power_w_effective uses the spike-aware MAC count instead. "
    "power_w_energy_model reads 4.6 as picojoules per MAC and is in watts."
)

_benchmark_lock = threading.Lock()


def count_params(model: Module) -> int:
    return sum(p.size for p in model.parameters())


def linear_flops(layer: Linear, rows: int) -> int:
    flops = 2 * rows * layer.in_features * layer.out_features
    return flops + (rows * layer.out_features if layer.bias is not None else 0)


def conv_flops(layer: Conv1d, t: int) -> int:
    flops = 2 * t * layer.kernel_size * layer.in_channels * layer.out_channels
    return flops + (t * layer.out_channels if layer.bias is not None else 0)


def dense_attention_flops(t: int, d: int) -> int:
    """Scores Q·Kᵀ plus their application to V."""
    return 2 * (2 * t * t * d)


@singledispatch
def module_flops(module: Module, t: int) -> int:
    """FLOPs of `module` on one sample of sequence length `t`; containers sum their children."""
    return sum(module_flops(child, t) for _, child in module.children())


@module_flops.register
def _(module: Linear, t: int) -> int:
    return linear_flops(module, t)


@module_flops.register
def _(module: Conv1d, t: int) -> int:
    return conv_flops(module, t)


@module_flops.register
def _(module: BatchNorm, t: int) -> int:
    return t * module.channels


@module_flops.register
def _(module: DataEmbedding, t: int) -> int:
    return conv_flops(module.value, t) + t * module.cfg.d_model


@module_flops.register
def _(module: SSABlock, t: int) -> int:
    d = module.cfg.d_model
    projections = 3 * 2 * t * d * d
    norm_and_spikes = 2 * t * d
    softmax = module.cfg.n_heads * t * t
    residual = t * d
    return (
        projections
        + norm_and_spikes
        + dense_attention_flops(t, d)
        + softmax
        + linear_flops(module.out, t)
        + residual
    )


@module_flops.register
def _(module: TemporalBlock, t: int) -> int:
    channels = module.conv1.out_channels
    activations = 2 * t * channels
    residual = t * channels if module.residual else 0
    return conv_flops(module.conv1, t) + conv_flops(module.conv2, t) + activations + residual


@module_flops.register
def _(module: TCN, t: int) -> int:
    return sum(module_flops(block, t) for block in module.blocks)


@module_flops.register
def _(module: Encoder, t: int) -> int:
    layers = sum(module_flops(a, t) + module_flops(c, t) for a, c in zip(module.attention, module.tcn))
    pooling = t * module.cfg.d_model
    return module_flops(module.embedding, t) + layers + pooling


@module_flops.register
def _(module: WeightModule, t: int) -> int:
    hidden = module.fc1.out_features
    d = module.fc2.out_features
    return linear_flops(module.fc1, 1) + hidden + linear_flops(module.fc2, 1) + d


@module_flops.register
def _(module: SAFD, t: int) -> int:
    """The cascade works on the pooled vector, a sequence of length 1."""
    d = module.ssa[0].cfg.d_model
    stages = sum(module_flops(ssa, 1) + module_flops(w, 1) + 2 * d for ssa, w in zip(module.ssa, module.weights))
    return stages + (len(module.ssa) - 1) * d


@module_flops.register
def _(module: Heads, t: int) -> int:
    return linear_flops(module.regression, 1) + linear_flops(module.classifier, 1)


@module_flops.register
def _(module: SAFENet, t: int) -> int:
    safd = module_flops(module.safd, t) if module.safd is not None else 0
    return module_flops(module.encoder, t) + safd + module_flops(module.heads, t)


@module_flops.register
def _(module: TCNBaseline, t: int) -> int:
    tcn = sum(module_flops(block, t) for block in module.tcn)
    pooling = t * module.cfg.d_model
    return module_flops(module.embedding, t) + tcn + pooling + linear_flops(module.regression, 1)


def count_flops(model: Module, window_shape: tuple[int, ...]) -> int:
    """Dense FLOPs for one window of shape (t, c)."""
    return module_flops(model, window_shape[0])


def layer_costs(model: Module, window_shape: tuple[int, ...]) -> list[LayerCost]:
    t = window_shape[0]
    if isinstance(model, SAFENet):
        costs = [LayerCost(name="embedding", flops=module_flops(model.encoder.embedding, t))]
        for i, (ssa, tcn) in enumerate(zip(model.encoder.attention, model.encoder.tcn)):
            costs.append(LayerCost(name=f"encoder.{i}.attention", flops=module_flops(ssa, t)))
            costs.append(LayerCost(name=f"encoder.{i}.tcn", flops=module_flops(tcn, t)))
        costs.append(LayerCost(name="pooling", flops=t * model.cfg.d_model))
        if model.safd is not None:
            costs.append(LayerCost(name="safd", flops=module_flops(model.safd, t)))
        costs.append(LayerCost(name="heads", flops=module_flops(model.heads, t)))
        return costs
    return [LayerCost(name=type(model).__name__, flops=module_flops(model, t))]


def _attention_shapes(model: Module, t: int) -> list[tuple[int, int]]:
    """(sequence length, width) of every attention block as it runs inside `model`."""
    if isinstance(model, SAFENet):
        shapes = [(t, block.cfg.d_model) for block in model.encoder.attention]
        if model.safd is not None:
            shapes += [(1, block.cfg.d_model) for block in model.safd.ssa]
        return shapes
    return [(t, m.cfg.d_model) for m in model.modules() if isinstance(m, SSABlock)]


def effective_macs(model: Network, sample_batch: Tensor) -> float:
    """
    Spike-aware multiply-accumulates per sample, measured on real windows.

    Attention is charged what it actually did (an addition per fired query
    entry per key column on active rows, the application of active rows to V,
    and the mean of V for lazy rows); every other layer is charged half its
    dense FLOPs.
    """
    batch, t = sample_batch.shape[0], sample_batch.shape[1]
    model.eval()
    with SpikeOpCounter() as counter:
        model(sample_batch)

    attention_dense = sum(dense_attention_flops(length, d) for length, d in _attention_shapes(model, t))
    other = count_flops(model, sample_batch.shape[1:]) - attention_dense
    attention = (counter.score_additions + counter.apply_macs + counter.lazy_fill_additions) / batch
    return other / 2 + attention


def power_estimate(mac: float, latency_s: float) -> float:
    """P = 4.6 · MAC / T."""
    if latency_s <= 0:
        logger.error("Invalid latency", latency_s=latency_s, tag="invalid_latency")
        raise InvalidLatencyError(f"latency must be positive, got {latency_s}")
    return POWER_COEFFICIENT * mac / latency_s


def energy_model_power(mac: float, latency_s: float) -> float:
    """Watts when every MAC costs 4.6 pJ."""
    if latency_s <= 0:
        raise InvalidLatencyError(f"latency must be positive, got {latency_s}")
    return ENERGY_PER_MAC_J * mac / latency_s


def measure_latency(model: Network, batch: Tensor, repeats: int, warmup: int = 3) -> tuple[float, float]:
    """
    Mean and variance of the per-sample wall time over `repeats` timed passes.

    Runs in eval mode on the calling thread; only one benchmark may run per process.
    """
    if repeats < 10:
        raise PreconditionError(f"latency needs at least 10 timed repeats, got {repeats}")
    if warmup < 3:
        raise PreconditionError(f"latency needs at least 3 warm-up passes, got {warmup}")
    if not _benchmark_lock.acquire(blocking=False):
        raise BenchmarkBusyError()

    try:
        model.eval()
        for _ in range(warmup):
            model(batch)
        samples = np.empty(repeats)
        for i in range(repeats):
            start = time.perf_counter()
            model(batch)
            samples[i] = (time.perf_counter() - start) / batch.shape[0]
    finally:
        _benchmark_lock.release()

    return float(samples.mean()), float(samples.var())


def profile(
    model: Network,
    sample_batch: Tensor,
    cfg: ProfileConfig,
    config: Optional[dict[str, Any]] = None,
) -> CostReport:
    window_shape = sample_batch.shape[1:]
    flops = count_flops(model, window_shape)
    macs = effective_macs(model, sample_batch)
    latency, variance = measure_latency(model, sample_batch, cfg.latency_repeats, cfg.warmup)

    report = CostReport(
        params=count_params(model),
        model_size_bytes=len(serialize_checkpoint(model, config)),
        flops=flops,
        effective_macs=macs,
        latency_s=latency,
        latency_var_s2=variance,
        power_w=power_estimate(flops, latency),
        power_w_effective=power_estimate(macs, latency),
        power_w_energy_model=energy_model_power(macs, latency),
        power_note=POWER_NOTE,
        layers=layer_costs(model, window_shape),
        config=config,
    )
    logger.info("Profiled", params=report.params, flops=flops, effective_macs=macs, latency_s=latency, tag="profiled")
    return report


COST_ROW_COLUMNS: Final[list[str]] = [
    "label",
    "params",
    "model_size_bytes",
    "flops",
    "effective_macs",
    "latency_s",
    "latency_var_s2",
    "power_w",
    "power_w_effective",
    "power_w_energy_model",
]


def append_cost_row(path: Path, report: CostReport, label: str) -> None:
    """One delimited-text line per profiled configuration; the header is written with the first row."""
    row = {"label": label} | report.model_dump(include=set(COST_ROW_COLUMNS))
    frame = pd.DataFrame([row], columns=COST_ROW_COLUMNS)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False, float_format="%.10g")
