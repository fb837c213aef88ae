"""Numeric substrate: a small reverse-mode autodiff tensor, the 1-D conv layers
the networks need, RMSProp and parameter clipping.

Only the operations used by the generator and critic are implemented.  Arrays
are laid out as (batch, channels, time); unbatched (channels, time) inputs are
accepted by :func:`conv1d_forward` and :func:`upsample_linear` for convenience.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DegenerateInputError, DimensionError

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """n-dimensional real array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Leaves keep their gradients between calls, so calling twice without
    ``zero_grad`` doubles them.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# elementwise / reductions -------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    """Sum over ``axis`` (all axes when None)."""
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    axes = tuple(range(a.data.ndim)[ax] for ax in np.atleast_1d(axis))
    out = a.data.sum(axis=axes)
    return _make(out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axes), a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, g / n, dtype=a.data.dtype),))


def absolute(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (0.5 * g / y,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channels by default)."""
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def fn(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), fn)


def flatten(a: Tensor) -> Tensor:
    """(B, ...) -> (B, prod(...))."""
    shape = a.shape
    return _make(a.data.reshape(shape[0], -1), (a,), lambda g: (g.reshape(shape),))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """(B, F) @ (F,) + b -> (B,). Used for the critic's scalar head."""
    out = x.data @ w.data + b.data

    def fn(g):
        return g[:, None] * w.data[None, :], g @ x.data, np.asarray(g.sum()).reshape(b.shape)

    return _make(out, (x, w, b), fn)


# convolution ---------------------------------------------------------------

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "identity")


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1
    activation: str = "identity"
    slope: float = 0.2

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_size", "stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {self.slope}")

    @property
    def n_params(self) -> int:
        return self.out_channels * self.in_channels * self.kernel_size + self.out_channels


def conv_output_length(t: int, stride: int) -> int:
    return -(-t // stride)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Zero same-padded strided 1-D convolution (cross-correlation).

    ``x`` is (B, C_in, T), ``w`` is (C_out, C_in, K).  Output sample ``j`` is
    centred on input frame ``j * stride``, so the output has ceil(T / stride)
    frames.
    """
    if x.data.ndim != 3:
        raise DimensionError("input", f"expected (batch, channels, time), got shape {x.shape}")
    bsz, c_in, t = x.shape
    c_out, wc_in, k = w.shape
    if wc_in != c_in:
        raise DimensionError("channels", f"input has {c_in} channels, weights expect {wc_in}")
    if b.shape != (c_out,):
        raise DimensionError("bias", f"bias shape {b.shape} does not match {c_out} output channels")
    pad = (k - 1) // 2
    t_out = conv_output_length(t, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    span = stride * (t_out - 1) + 1
    # cols: (B, T_out, C_in, K)
    cols = np.stack([xp[:, :, i:i + span:stride] for i in range(k)], axis=-1).transpose(0, 2, 1, 3)
    cols2 = cols.reshape(bsz * t_out, c_in * k)
    w2 = w.data.reshape(c_out, c_in * k)
    out = (cols2 @ w2.T).reshape(bsz, t_out, c_out).transpose(0, 2, 1) + b.data[None, :, None]

    def fn(g):
        g2 = g.transpose(0, 2, 1).reshape(bsz * t_out, c_out)
        gw = (g2.T @ cols2).reshape(w.shape) if w.requires_grad else None
        gb = g.sum(axis=(0, 2)) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(bsz, t_out, c_in, k).transpose(0, 2, 1, 3)
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[:, :, i:i + span:stride] += gcols[..., i]
            gx = gxp[:, :, pad:pad + t]
        return gx, gw, gb

    return _make(np.ascontiguousarray(out), (x, w, b), fn)


def activate(x: Tensor, spec: ConvLayerSpec) -> Tensor:
    if spec.activation == "relu":
        return relu(x)
    if spec.activation == "leaky_relu":
        return leaky_relu(x, spec.slope)
    if spec.activation == "tanh":
        return tanh(x)
    return x


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.data.ndim == 2:
        return _make(x.data[None], (x,), lambda g: (g[0],)), True
    return x, False


def conv1d_forward(x: Tensor, spec: ConvLayerSpec, weights: Tensor, bias: Tensor) -> Tensor:
    """Convolution plus the layer's activation; accepts (C, T) or (B, C, T)."""
    xb, squeeze = _batched(x)
    if xb.shape[1] != spec.in_channels:
        raise DimensionError("channels", f"input has {xb.shape[1]} channels, layer expects {spec.in_channels}")
    expected = (spec.out_channels, spec.in_channels, spec.kernel_size)
    if weights.shape != expected:
        raise DimensionError("weights", f"weights shape {weights.shape}, expected {expected}")
    y = activate(conv1d(xb, weights, bias, spec.stride), spec)
    if squeeze:
        return _make(y.data[0], (y,), lambda g: (g[None],))
    return y


def upsample_linear(x: Tensor, factor: int) -> Tensor:
    """Piecewise-linear upsampling along time; the last segment replicates the edge.

    Output frame ``i * factor + r`` is ``x[i] + (r / factor) * (x[i+1] - x[i])``
    with ``x[T]`` taken as ``x[T-1]``.
    """
    xb, squeeze = _batched(x)
    t = xb.shape[-1]
    if t < 2:
        raise DegenerateInputError(f"upsample_linear needs at least 2 frames, got {t}")
    if factor < 1:
        raise ConfigError(f"upsampling factor must be positive, got {factor}")
    frac = (np.arange(factor) / factor).astype(xb.data.dtype)
    lo = xb.data
    hi = np.concatenate([lo[..., 1:], lo[..., -1:]], axis=-1)
    out = (lo[..., None] * (1.0 - frac) + hi[..., None] * frac).reshape(*lo.shape[:-1], t * factor)

    def fn(g):
        g4 = g.reshape(*lo.shape, factor)
        gx = (g4 * (1.0 - frac)).sum(-1)
        ghi = (g4 * frac).sum(-1)
        gx[..., 1:] += ghi[..., :-1]
        gx[..., -1] += ghi[..., -1]
        return (gx,)

    y = _make(out, (xb,), fn)
    if squeeze:
        return _make(y.data[0], (y,), lambda g: (g[None],))
    return y


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                 dtype=np.float64) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d:
    """A conv layer owning its weights: conv -> activation."""

    def __init__(self, spec: ConvLayerSpec, rng: np.random.Generator, name: str, dtype=np.float64):
        self.spec = spec
        fan_in = spec.in_channels * spec.kernel_size
        self.weight = Tensor(init_uniform(rng, (spec.out_channels, spec.in_channels, spec.kernel_size),
                                          fan_in, dtype), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(init_uniform(rng, (spec.out_channels,), fan_in, dtype),
                           requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.spec.in_channels:
            raise DimensionError("channels", f"{self.weight.name}: input has {x.shape[1]} channels, "
                                             f"layer expects {self.spec.in_channels}")
        return activate(conv1d(x, self.weight, self.bias, self.spec.stride), self.spec)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


# optimisation ----------------------------------------------------------------

@dataclass
class OptimizerState:
    learning_rate: float = 1e-4
    decay: float = 0.9
    epsilon: float = 1e-8
    mean_square: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("decay must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")


def rmsprop_step(params: Sequence[Tensor], state: OptimizerState) -> None:
    """In-place RMSProp update of ``params`` from their accumulated ``grad``."""
    if not state.mean_square:
        state.mean_square = [np.zeros_like(p.data) for p in params]
    if len(state.mean_square) != len(params):
        raise ContractError("optimizer state does not match the parameter list")
    for p, ms in zip(params, state.mean_square):
        if p.grad is None:
            raise ContractError(f"parameter {p.name or '<unnamed>'} has no gradient")
        g = p.grad
        ms *= state.decay
        ms += (1.0 - state.decay) * g * g
        p.data -= state.learning_rate * g / np.sqrt(ms + state.epsilon)


def clip_params(params: Iterable[Tensor], bound: float) -> None:
    """Clamp every entry into [-bound, bound] in place."""
    if not bound > 0:
        raise ConfigError(f"clip bound must be positive, got {bound}")
    for p in params:
        np.clip(p.data, -bound, bound, out=p.data)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


@contextlib.contextmanager
def frozen(params: Sequence[Tensor]) -> Iterator[None]:
    """Treat ``params`` as constants (no gradient) inside the block."""
    prev = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, r in zip(params, prev):
            p.requires_grad = r
