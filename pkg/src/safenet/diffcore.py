"""
Dense float64 arrays with define-by-run reverse-mode differentiation.

Operations executed while a `Tape` is active are recorded in execution order;
`backward` walks the tape in reverse and accumulates gradients into every
tensor that requires them. Only the operations the network needs exist here:
no general broadcasting engine, the right-hand operand of an elementwise
operation may only be a trailing-suffix of the left-hand one (a bias row
added to a batch, for example).
"""

from __future__ import annotations

import math
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional, Sequence

import numpy as np
import numpy.typing as npt
import structlog

from safenet.constants import settings
from safenet.custom_exceptions import ContractViolationError, DimensionError, PreconditionError

logger: structlog.stdlib.BoundLogger = structlog.get_logger()

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BackwardFn = Callable[[FloatArray], Sequence[Optional[FloatArray]]]


class Tensor:
    """A float64 array, optionally tracked for gradients."""

    __slots__ = ("values", "requires_grad", "grad", "name")

    def __init__(self, values: Any, requires_grad: bool = False, name: Optional[str] = None):
        self.values: FloatArray = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[FloatArray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def numpy(self) -> FloatArray:
        return self.values

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError("item() needs a single-element tensor", self.shape)
        return float(self.values.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.values)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor | float) -> Tensor:
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    def __radd__(self, other: float) -> Tensor:
        return add_scalar(self, other)

    def __sub__(self, other: Tensor | float) -> Tensor:
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __mul__(self, other: Tensor | float) -> Tensor:
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other: float) -> Tensor:
        return scale(self, other)

    def __truediv__(self, other: float) -> Tensor:
        return scale(self, 1.0 / other)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass
class Tape:
    """Ordered record of the operations executed while the tape is active."""

    nodes: list[Node] = field(default_factory=lambda: [])
    _tokens: list[Any] = field(default_factory=lambda: [], repr=False)

    def __enter__(self) -> Tape:
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc_info: object) -> None:
        _active_tape.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)


_active_tape: ContextVar[Optional[Tape]] = ContextVar("active_tape", default=None)


def record_op(op: str, inputs: Sequence[Tensor], values: FloatArray, backward: BackwardFn) -> Tensor:
    """
    Wrap `values` as the output of `op` and record it on the active tape.

    `backward` maps the output gradient to one gradient (or None) per input.
    Nothing is recorded when no tape is active or no input needs a gradient.
    """
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = requires_grad
    out.grad = None
    out.name = None

    if settings.debug_checks and not np.all(np.isfinite(values)):
        if all(np.all(np.isfinite(t.values)) for t in inputs):
            logger.error("Non-finite values from finite inputs", op=op, tag="non_finite_op")
            raise ContractViolationError(f"`{op}` produced non-finite values from finite inputs")

    tape = _active_tape.get()
    if tape is not None and requires_grad:
        tape.nodes.append(Node(op, tuple(inputs), out, backward))
    return out


def backward(tape: Tape, loss: Tensor, params: Optional[Sequence[Tensor]] = None) -> None:
    """
    Reverse-mode accumulation from a scalar `loss` over everything on `tape`.

    Gradients are written (not accumulated) to `.grad` of every leaf tensor
    that requires one. Leaves the loss does not depend on, and any tensor in
    `params` that never reached the tape, receive all-zero gradients.
    """
    if loss.size != 1:
        raise DimensionError("backward needs a scalar loss", loss.shape)

    grads: dict[int, FloatArray] = {id(loss): np.ones_like(loss.values)}
    produced: set[int] = {id(node.output) for node in tape.nodes}
    leaves: dict[int, Tensor] = {}

    for node in reversed(tape.nodes):
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in produced:
                leaves[id(inp)] = inp

        out_grad = grads.pop(id(node.output), None)
        if out_grad is None:
            continue

        for inp, in_grad in zip(node.inputs, node.backward(out_grad)):
            if in_grad is None or not inp.requires_grad:
                continue
            key = id(inp)
            existing = grads.get(key)
            grads[key] = in_grad if existing is None else existing + in_grad

    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss

    for key, leaf in leaves.items():
        leaf.grad = grads.get(key, np.zeros_like(leaf.values))
    for param in params or ():
        if id(param) not in leaves:
            param.grad = np.zeros_like(param.values)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6) -> float:
    """
    Largest relative disagreement between autodiff and central differences.

    `x.values` is perturbed in place one coordinate at a time, so `f` may
    either use its argument or close over `x` directly.
    """
    if eps <= 0:
        raise PreconditionError(f"grad_check needs eps > 0, got {eps}")

    x.requires_grad = True
    with Tape() as tape:
        loss = f(x)
    backward(tape, loss)
    assert x.grad is not None
    analytic = x.grad.reshape(-1).copy()

    original = x.values
    numeric = np.empty_like(analytic)
    for i in range(original.size):
        plus = original.copy()
        plus.reshape(-1)[i] += eps
        x.values = plus
        f_plus = f(x).item()

        minus = original.copy()
        minus.reshape(-1)[i] -= eps
        x.values = minus
        f_minus = f(x).item()

        numeric[i] = (f_plus - f_minus) / (2.0 * eps)
    x.values = original

    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-12)))


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim :] == b.shape:
        return
    raise DimensionError(f"`{op}` needs equal shapes or a trailing-suffix right operand", a.shape, b.shape)


def _reduce_to(grad: FloatArray, shape: tuple[int, ...]) -> FloatArray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")
    return record_op("add", (a, b), a.values + b.values, lambda g: (g, _reduce_to(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")
    return record_op("sub", (a, b), a.values - b.values, lambda g: (g, -_reduce_to(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")
    return record_op(
        "mul",
        (a, b),
        a.values * b.values,
        lambda g: (g * b.values, _reduce_to(g * a.values, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return record_op("scale", (a,), a.values * c, lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return record_op("add_scalar", (a,), a.values + c, lambda g: (g,))


def square(a: Tensor) -> Tensor:
    return record_op("square", (a,), a.values * a.values, lambda g: (2.0 * g * a.values,))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return record_op("relu", (a,), np.where(mask, a.values, 0.0), lambda g: (np.where(mask, g, 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.values))
    return record_op("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = a.shape
    try:
        values = a.values.reshape(shape)
    except ValueError as exc:
        raise DimensionError("reshape changes the element count", original, shape) from exc
    return record_op("reshape", (a,), values, lambda g: (g.reshape(original),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise DimensionError("transpose needs at least two axes", a.shape)
    return record_op("transpose", (a,), np.swapaxes(a.values, -1, -2), lambda g: (np.swapaxes(g, -1, -2),))


def permute(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permute axes {axes} do not match the tensor rank", a.shape)
    inverse = tuple(int(i) for i in np.argsort(axes))
    return record_op("permute", (a,), np.transpose(a.values, axes), lambda g: (np.transpose(g, inverse),))


def sum(a: Tensor, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def _backward(g: FloatArray) -> tuple[FloatArray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record_op("sum", (a,), np.asarray(a.values.sum(axis=axis, keepdims=keepdims)), _backward)


def mean(a: Tensor, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = math.prod(a.shape[ax] for ax in axes)
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def expand(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis of length `n` at `axis` by repetition."""
    expanded = np.expand_dims(a.values, axis)
    target = list(expanded.shape)
    target[axis] = n
    values = np.broadcast_to(expanded, tuple(target)).copy()
    return record_op("expand", (a,), values, lambda g: (g.sum(axis=axis),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    `a[..., m, k] @ b[k, n]` or a batched product with equal leading axes.

    Backward rule: dA = dC·Bᵀ, dB = Aᵀ·dC (summed over the batch when `b` is shared).
    """
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul inner dimensions disagree", a.shape, b.shape)
    if b.ndim > 2 and (a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]):
        raise DimensionError("batched matmul needs equal leading dimensions", a.shape, b.shape)

    a_values, b_values = a.values, b.values

    def _backward(g: FloatArray) -> tuple[FloatArray, FloatArray]:
        if b_values.ndim == 2:
            k, n = b_values.shape
            grad_a = g @ b_values.T
            grad_b = a_values.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            grad_a = g @ np.swapaxes(b_values, -1, -2)
            grad_b = np.swapaxes(a_values, -1, -2) @ g
        return grad_a, grad_b

    return record_op("matmul", (a, b), a_values @ b_values, _backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def _backward(g: FloatArray) -> tuple[FloatArray]:
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record_op("softmax", (x,), y, _backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - log_norm
    p = np.exp(y)

    def _backward(g: FloatArray) -> tuple[FloatArray]:
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return record_op("log_softmax", (x,), y, _backward)


def pick(x: Tensor, index: IntArray) -> Tensor:
    """`x[i, index[i]]` for a 2-D `x`."""
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise DimensionError("pick needs x[B, C] and index[B]", x.shape, tuple(index.shape))
    rows = np.arange(x.shape[0])
    shape = x.shape

    def _backward(g: FloatArray) -> tuple[FloatArray]:
        grad = np.zeros(shape)
        grad[rows, index] = g
        return (grad,)

    return record_op("pick", (x,), x.values[rows, index], _backward)


def gather_rows(x: Tensor, index: IntArray) -> Tensor:
    """Per-batch row lookup: `x[b, index[b, j], :]` for x[B, t, d] and index[B, u]."""
    if x.ndim != 3 or index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise DimensionError("gather_rows needs x[B, t, d] and index[B, u]", x.shape, tuple(index.shape))
    batch = np.arange(x.shape[0])[:, None]
    shape = x.shape

    def _backward(g: FloatArray) -> tuple[FloatArray]:
        grad = np.zeros(shape)
        np.add.at(grad, (batch, index), g)
        return (grad,)

    return record_op("gather_rows", (x,), x.values[batch, index], _backward)


def scatter_rows(base: Tensor, rows: Tensor, index: IntArray) -> Tensor:
    """Copy of `base` with `base[b, index[b, j]] = rows[b, j]`; indices must be unique per batch element."""
    if base.ndim != 3 or rows.shape != (base.shape[0], index.shape[1], base.shape[2]):
        raise DimensionError("scatter_rows shape mismatch", base.shape, rows.shape, tuple(index.shape))
    batch = np.arange(base.shape[0])[:, None]
    values = base.values.copy()
    values[batch, index] = rows.values

    def _backward(g: FloatArray) -> tuple[FloatArray, FloatArray]:
        grad_base = g.copy()
        grad_base[batch, index] = 0.0
        return grad_base, g[batch, index]

    return record_op("scatter_rows", (base, rows), values, _backward)


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    *,
    dilation: int = 1,
    pad_left: int = 0,
    pad_right: int = 0,
) -> Tensor:
    """
    One-dimensional convolution over time for x[B, t, c_in] and weight[k, c_in, c_out].

    Output length is t + pad_left + pad_right - dilation·(k - 1). Padding is zeros.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise DimensionError("conv1d needs x[B, t, c_in] and weight[k, c_in, c_out]", x.shape, weight.shape)
    k = weight.shape[0]
    t = x.shape[1]
    padded = np.pad(x.values, ((0, 0), (pad_left, pad_right), (0, 0)))
    t_out = padded.shape[1] - dilation * (k - 1)
    if t_out < 1:
        raise DimensionError("conv1d input shorter than its receptive field", x.shape, weight.shape)

    taps = np.arange(t_out)[:, None] + dilation * np.arange(k)[None, :]
    cols = padded[:, taps, :]
    w = weight.values
    out = np.tensordot(cols, w, axes=([2, 3], [0, 1]))
    inputs: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        out = out + bias.values
        inputs = (x, weight, bias)

    def _backward(g: FloatArray) -> list[Optional[FloatArray]]:
        grad_w = np.tensordot(cols, g, axes=([0, 1], [0, 1]))
        grad_cols = np.tensordot(g, w, axes=([2], [2]))
        grad_padded = np.zeros_like(padded)
        for j in range(k):
            start = j * dilation
            grad_padded[:, start : start + t_out, :] += grad_cols[:, :, j, :]
        grads: list[Optional[FloatArray]] = [grad_padded[:, pad_left : pad_left + t, :], grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return grads

    return record_op("conv1d", inputs, out, _backward)


@dataclass
class RunningStats:
    mean: FloatArray
    var: FloatArray
    momentum: float = 0.9


def batch_norm(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    stats: RunningStats,
    training: bool,
    eps: float = 1e-5,
) -> Tensor:
    """
    Per-channel normalization over every axis but the last.

    Training mode uses batch statistics and folds them into `stats`
    (running = momentum·running + (1 - momentum)·batch, biased variance);
    eval mode is the fixed affine map defined by `stats`.
    """
    d = x.shape[-1]
    if weight.shape != (d,) or bias.shape != (d,):
        raise DimensionError("batch_norm parameters do not match the channel count", x.shape, weight.shape)

    axes = tuple(range(x.ndim - 1))
    gamma = weight.values
    if training:
        n = x.size // d
        mu = x.values.mean(axis=axes)
        var = x.values.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x.values - mu) * inv_std
        stats.mean = stats.momentum * stats.mean + (1.0 - stats.momentum) * mu
        stats.var = stats.momentum * stats.var + (1.0 - stats.momentum) * var

        def _backward(g: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
            d_hat = g * gamma
            grad_x = (
                inv_std
                / n
                * (n * d_hat - d_hat.sum(axis=axes) - x_hat * (d_hat * x_hat).sum(axis=axes))
            )
            return grad_x, (g * x_hat).sum(axis=axes), g.sum(axis=axes)

    else:
        inv_std = 1.0 / np.sqrt(stats.var + eps)
        x_hat = (x.values - stats.mean) * inv_std

        def _backward(g: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
            return g * gamma * inv_std, (g * x_hat).sum(axis=axes), g.sum(axis=axes)

    return record_op("batch_norm", (x, weight, bias), x_hat * gamma + bias.values, _backward)


class Module:
    """
    Container of parameters, buffers and child modules.

    Parameters are the `Tensor` attributes that require gradients; children
    are `Module` attributes or lists of modules. Traversal follows attribute
    assignment order, which makes state dicts and optimizer slots stable.
    """

    training: bool = True

    def buffers(self) -> dict[str, FloatArray]:
        return {}

    def load_buffers(self, buffers: dict[str, FloatArray]) -> None:
        pass

    def children(self) -> Iterator[tuple[str, Module]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):  # pyright: ignore[reportUnknownVariableType, reportUnknownArgumentType]
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, FloatArray]]:
        for name, value in self.buffers().items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator[Module]:
        yield self
        for _, child in self.children():
            yield from child.modules()

    def train(self, mode: bool = True) -> Module:
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, FloatArray]:
        state = {name: p.values.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, FloatArray]) -> None:
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise DimensionError(f"state dict keys differ: missing={missing}, unexpected={unexpected}")
        for name, value in expected.items():
            if state[name].shape != value.shape:
                raise DimensionError(f"state entry `{name}` has the wrong shape", value.shape, state[name].shape)

        for name, p in self.named_parameters():
            p.values = np.array(state[name], dtype=np.float64)
        self._load_buffers_recursive(state, "")

    def _load_buffers_recursive(self, state: dict[str, FloatArray], prefix: str) -> None:
        own = {name: np.array(state[prefix + name], dtype=np.float64) for name in self.buffers()}
        if own:
            self.load_buffers(own)
        for name, child in self.children():
            child._load_buffers_recursive(state, f"{prefix}{name}.")  # pyright: ignore[reportPrivateUsage]


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    """y = x·W + b with W[in, out]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = uniform_init(rng, (in_features, out_features), in_features)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y if self.bias is None else add(y, self.bias)


class Conv1d(Module):
    """Time convolution over x[B, t, c_in]; `causal` pads on the left only, otherwise symmetric same-padding."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        *,
        dilation: int = 1,
        causal: bool = False,
        bias: bool = True,
    ):
        span = dilation * (kernel_size - 1)
        if not causal and span % 2:
            raise PreconditionError(f"same-padding needs an even span, got kernel {kernel_size} dilation {dilation}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.pad_left, self.pad_right = (span, 0) if causal else (span // 2, span // 2)
        self.weight = uniform_init(rng, (kernel_size, in_channels, out_channels), kernel_size * in_channels)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(
            x,
            self.weight,
            self.bias,
            dilation=self.dilation,
            pad_left=self.pad_left,
            pad_right=self.pad_right,
        )


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.channels = channels
        self.eps = eps
        self.weight = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.stats = RunningStats(np.zeros(channels), np.ones(channels), momentum)

    def buffers(self) -> dict[str, FloatArray]:
        return {"running_mean": self.stats.mean, "running_var": self.stats.var}

    def load_buffers(self, buffers: dict[str, FloatArray]) -> None:
        self.stats.mean = buffers["running_mean"]
        self.stats.var = buffers["running_var"]

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.weight, self.bias, self.stats, self.training, self.eps)
