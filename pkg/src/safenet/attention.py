"""
Spike-driven sparse attention.

Queries pass through batch normalization and a LIF layer, so the query matrix
is binary and every score is a sum of selected key entries instead of a dot
product. Only the `u = c·⌈ln t⌉` queries whose score rows are furthest from
uniform (max minus mean) are attended; the remaining lazy rows take the
column mean of V.
"""

import math
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import structlog

from safenet.custom_exceptions import ContractViolationError, DimensionError
from safenet.diffcore import (
    BatchNorm,
    Conv1d,
    FloatArray,
    IntArray,
    Linear,
    Module,
    Tensor,
    add,
    expand,
    gather_rows,
    matmul,
    mean,
    permute,
    record_op,
    reshape,
    scale,
    scatter_rows,
    softmax,
    transpose,
    uniform_init,
)
from safenet.schemas import EmbedConfig, SSAConfig
from safenet.snn import LIFNode

logger: structlog.stdlib.BoundLogger = structlog.get_logger()


@dataclass
class SpikeOpCounter:
    """Tallies the work done by sparse attention while active (`with SpikeOpCounter() as counter:`)."""

    score_additions: int = 0
    """Additions for spiking queries, multiply-accumulates for dense ones"""
    apply_macs: int = 0
    lazy_fill_additions: int = 0
    active_rows: int = 0
    lazy_rows: int = 0
    _tokens: list[Any] = field(default_factory=lambda: [], repr=False)

    def __enter__(self) -> "SpikeOpCounter":
        self._tokens.append(_active_counter.set(self))
        return self

    def __exit__(self, *exc_info: object) -> None:
        _active_counter.reset(self._tokens.pop())


_active_counter: ContextVar[Optional[SpikeOpCounter]] = ContextVar("active_counter", default=None)


def positional_encoding(t: int, d: int) -> FloatArray:
    """PE(pos, 2k) = sin(pos / 10000^(2k/d)), PE(pos, 2k+1) = cos(pos / 10000^(2k/d))."""
    pos = np.arange(t, dtype=np.float64)[:, None]
    two_k = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, two_k / d)
    pe = np.zeros((t, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


class DataEmbedding(Module):
    """Value embedding (bias-free same-length convolution) plus sinusoidal positions."""

    def __init__(self, cfg: EmbedConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.value = Conv1d(cfg.c_in, cfg.d_model, cfg.conv_kernel, rng, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.cfg.c_in:
            raise DimensionError(f"expected {self.cfg.c_in} input channels", x.shape)
        unbatched = x.ndim == 2
        if unbatched:
            x = reshape(x, (1, *x.shape))
        t = x.shape[1]
        e = add(self.value(x), Tensor(positional_encoding(t, self.cfg.d_model)))
        return reshape(e, e.shape[1:]) if unbatched else e


class ProjectionWeights(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.w_q = uniform_init(rng, (d, d), d)
        self.w_k = uniform_init(rng, (d, d), d)
        self.w_v = uniform_init(rng, (d, d), d)
        self.bn = BatchNorm(d)


def project_qkv(w: ProjectionWeights, lif: LIFNode, e: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Q = SN(BN(E·W_Q)), K = E·W_K, V = E·W_V; only the query branch spikes."""
    unbatched = e.ndim == 2
    if unbatched:
        e = reshape(e, (1, *e.shape))
    q = lif(w.bn(matmul(e, w.w_q)))
    k = matmul(e, w.w_k)
    v = matmul(e, w.w_v)
    if unbatched:
        return reshape(q, q.shape[1:]), reshape(k, k.shape[1:]), reshape(v, v.shape[1:])
    return q, k, v


def _check_binary(q: FloatArray) -> None:
    if not np.all((q == 0.0) | (q == 1.0)):
        logger.error("Spike matrix is not binary", tag="non_binary_spikes")
        raise ContractViolationError("spike_matmul needs a strictly binary query matrix")


def _accumulate(q: FloatArray, k_t: FloatArray) -> FloatArray:
    """Sum the rows of k_t selected by each query's spikes, in key-dimension order."""
    scores = np.zeros((*q.shape[:-1], k_t.shape[-1]))
    for k in range(q.shape[-1]):
        fired = q[..., k][..., None] > 0
        scores += np.where(fired, k_t[..., k, :][..., None, :], 0.0)
    return scores


def spike_matmul(q_spike: Tensor, k_t: Tensor) -> Tensor:
    """
    Scores of binary queries against transposed keys without multiplications.

    scores[i, j] is the sum of k_t[k, j] over the k where q_spike[i, k] fired;
    for the row [1, 0, 1, 0] and key column [-0.1, 0.5, -0.3, 0.2] that is -0.4.
    """
    if q_spike.shape[-1] != k_t.shape[-2] or q_spike.ndim != k_t.ndim:
        raise DimensionError("spike_matmul inner dimensions disagree", q_spike.shape, k_t.shape)
    q, kt = q_spike.values, k_t.values
    _check_binary(q)

    counter = _active_counter.get()
    if counter is not None:
        counter.score_additions += int(np.count_nonzero(q)) * kt.shape[-1]

    def _backward(g: FloatArray) -> tuple[FloatArray, FloatArray]:
        return g @ np.swapaxes(kt, -1, -2), np.swapaxes(q, -1, -2) @ g

    return record_op("spike_matmul", (q_spike, k_t), _accumulate(q, kt), _backward)


def sparsity_measure(q_spike: Tensor, k: Tensor, d: int, spiking: bool = True) -> FloatArray:
    """
    M(q_i, K) = max_j(s_ij/√d) - mean_j(s_ij/√d), exactly over every key.

    Used for routing only, so no gradient is recorded.
    """
    k_t = np.swapaxes(k.values, -1, -2)
    if spiking:
        _check_binary(q_spike.values)
        s = _accumulate(q_spike.values, k_t)
    else:
        s = q_spike.values @ k_t
    s = s / math.sqrt(d)
    return s.max(axis=-1) - s.mean(axis=-1)


def active_count(t: int, sampling_factor_c: int) -> int:
    """u = min(t, c·⌈ln t⌉)."""
    return min(t, sampling_factor_c * math.ceil(math.log(t)))


def select_active(m: FloatArray, u: int) -> IntArray:
    """Indices of the top-u queries per row of `m`; ties go to the lower index."""
    order = np.argsort(-m, axis=-1, kind="stable")[..., :u]
    return np.sort(order, axis=-1).astype(np.int64)


def sparse_attention(
    q_spike: Tensor,
    k: Tensor,
    v: Tensor,
    cfg: SSAConfig,
    *,
    u: Optional[int] = None,
    spiking: bool = True,
) -> Tensor:
    """
    Softmax(Q̄Kᵀ/√d)·V on the active queries, mean(V) on the lazy ones.

    Inputs are [B, t, d] (or unbatched [t, d]); heads split d evenly.
    """
    unbatched = q_spike.ndim == 2
    if unbatched:
        q_spike, k, v = (reshape(x, (1, *x.shape)) for x in (q_spike, k, v))
    if not q_spike.shape == k.shape == v.shape:
        raise DimensionError("q, k and v must share a shape", q_spike.shape, k.shape, v.shape)

    batch, t, d = q_spike.shape
    if t == 0:
        raise DimensionError("sparse attention needs at least one time step", q_spike.shape)
    heads = cfg.n_heads
    dh = d // heads
    if u is None:
        u = active_count(t, cfg.sampling_factor_c)
    u = min(u, t)

    def split_heads(x: Tensor) -> Tensor:
        if heads == 1:
            return x
        x = permute(reshape(x, (batch, t, heads, dh)), (0, 2, 1, 3))
        return reshape(x, (batch * heads, t, dh))

    qh, kh, vh = split_heads(q_spike), split_heads(k), split_heads(v)
    lanes = qh.shape[0]
    context = expand(mean(vh, axis=1), axis=1, n=t)

    counter = _active_counter.get()
    if counter is not None:
        counter.active_rows += lanes * u
        counter.lazy_rows += lanes * (t - u)
        counter.apply_macs += lanes * u * t * dh
        if u < t:
            counter.lazy_fill_additions += lanes * t * dh

    if u > 0:
        index = select_active(sparsity_measure(qh, kh, dh, spiking), u)
        q_active = gather_rows(qh, index)
        k_t = transpose(kh)
        if spiking:
            scores = spike_matmul(q_active, k_t)
        else:
            scores = matmul(q_active, k_t)
            if counter is not None:
                counter.score_additions += lanes * u * t * dh
        weights = softmax(scale(scores, 1.0 / math.sqrt(dh)), axis=-1)
        context = scatter_rows(context, matmul(weights, vh), index)

    if heads > 1:
        context = reshape(permute(reshape(context, (batch, heads, t, dh)), (0, 2, 1, 3)), (batch, t, d))
    return reshape(context, (t, d)) if unbatched else context


class SSABlock(Module):
    """Spike-driven sparse attention with output projection and residual connection."""

    def __init__(self, cfg: SSAConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.proj = ProjectionWeights(cfg.d_model, rng)
        self.lif = LIFNode(cfg.lif, time_axis=1)
        self.out = Linear(cfg.d_model, cfg.d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        """Accepts [B, t, d], a single sequence [t, d] or a single vector [d] (t = 1)."""
        shape = x.shape
        if x.ndim == 1:
            x = reshape(x, (1, 1, shape[0]))
        elif x.ndim == 2:
            x = reshape(x, (1, *shape))
        q, k, v = project_qkv(self.proj, self.lif, x)
        attended = sparse_attention(q, k, v, self.cfg, spiking=not self.cfg.lif.passthrough)
        y = add(x, self.out(attended))
        return reshape(y, shape) if len(shape) < 3 else y
