"""
Leaky integrate-and-fire neurons with hard reset.

Charging follows the explicit-Euler step H = v + (x - (v - v_rest)) / tau with
one simulation step per input sample; a neuron fires when H >= v_threshold and
its potential is then set to v_reset. The forward pass is exactly binary,
training uses the arctan surrogate derivative of the firing function.
"""

from dataclasses import dataclass

import numpy as np

from safenet.custom_exceptions import DimensionError
from safenet.diffcore import FloatArray, Module, Tensor, record_op
from safenet.schemas import LIFConfig


@dataclass
class LIFState:
    v: FloatArray

    @classmethod
    def resting(cls, cfg: LIFConfig, shape: tuple[int, ...]) -> "LIFState":
        return cls(np.full(shape, cfg.v_rest, dtype=np.float64))


def surrogate_spike_grad(cfg: LIFConfig, u: FloatArray) -> FloatArray:
    """Arctan pseudo-derivative of the Heaviside firing function at u = H - v_threshold."""
    alpha = cfg.surrogate_alpha
    return alpha / (2.0 * (1.0 + (np.pi / 2.0 * alpha * u) ** 2))


def _charge(cfg: LIFConfig, v: FloatArray, x: FloatArray) -> FloatArray:
    return v + (x - (v - cfg.v_rest)) / cfg.tau


def _fire(cfg: LIFConfig, h: FloatArray) -> FloatArray:
    return (h >= cfg.v_threshold).astype(np.float64)


def lif_step(cfg: LIFConfig, state: LIFState, x: Tensor) -> tuple[Tensor, LIFState]:
    """
    Advance every neuron by one step.

    The state is carried as plain values: gradients reach `x` through the
    surrogate derivative but do not flow into the previous potential.
    """
    if state.v.shape != x.shape:
        raise DimensionError("membrane state and input differ in shape", tuple(state.v.shape), x.shape)

    h = _charge(cfg, state.v, x.values)
    spikes = _fire(cfg, h)
    new_v = np.where(spikes > 0, cfg.v_reset, h)
    slope = surrogate_spike_grad(cfg, h - cfg.v_threshold) / cfg.tau

    out = record_op("lif_step", (x,), spikes, lambda g: (g * slope,))
    return out, LIFState(new_v)


def lif_sequence(cfg: LIFConfig, x_seq: Tensor, time_axis: int = 0) -> Tensor:
    """
    Run a freshly reset neuron population along `time_axis`.

    Backward is backpropagation through time, including the hard-reset path
    dv/dH = (1 - S) + (v_reset - H)·surrogate(H - v_threshold).
    """
    if cfg.passthrough:
        return record_op("lif_passthrough", (x_seq,), x_seq.values, lambda g: (g,))

    x = np.moveaxis(x_seq.values, time_axis, 0)
    steps = x.shape[0]
    v = np.full(x.shape[1:], cfg.v_rest, dtype=np.float64)
    spikes = np.empty_like(x)
    charged = np.empty_like(x)
    for t in range(steps):
        h = _charge(cfg, v, x[t])
        s = _fire(cfg, h)
        charged[t] = h
        spikes[t] = s
        v = np.where(s > 0, cfg.v_reset, h)

    leak = 1.0 - 1.0 / cfg.tau

    def _backward(g: FloatArray) -> tuple[FloatArray]:
        g = np.moveaxis(g, time_axis, 0)
        sg = surrogate_spike_grad(cfg, charged - cfg.v_threshold)
        dv_dh = (1.0 - spikes) + (cfg.v_reset - charged) * sg
        grad_x = np.empty_like(g)
        grad_v = np.zeros(g.shape[1:])
        for t in range(steps - 1, -1, -1):
            grad_h = g[t] * sg[t] + grad_v * dv_dh[t]
            grad_x[t] = grad_h / cfg.tau
            grad_v = grad_h * leak
        return (np.moveaxis(grad_x, 0, time_axis),)

    return record_op("lif_sequence", (x_seq,), np.moveaxis(spikes, 0, time_axis), _backward)


class LIFNode(Module):
    """Spiking layer; keeps running spike statistics for firing-rate reports."""

    def __init__(self, cfg: LIFConfig, time_axis: int = 1):
        self.cfg = cfg
        self.time_axis = time_axis
        self.spike_count = 0.0
        self.element_count = 0

    def __call__(self, x: Tensor) -> Tensor:
        out = lif_sequence(self.cfg, x, self.time_axis)
        if not self.cfg.passthrough:
            self.spike_count += float(out.values.sum())
            self.element_count += out.size
        return out

    @property
    def firing_rate(self) -> float:
        return self.spike_count / self.element_count if self.element_count else 0.0

    def reset_counters(self) -> None:
        self.spike_count = 0.0
        self.element_count = 0
