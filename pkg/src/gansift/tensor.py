"""Dense float64 tensors with a reverse-mode gradient tape and Adam.

Deliberately small: row-major numpy storage, tape nodes built from
closures, and only the operations the networks in this package need.
Binary elementwise ops accept identical shapes or a scalar on one side;
there is no general broadcasting, no views, no dtype zoo.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LOG_FLOOR",
    "ShapeError",
    "Tensor",
    "Parameter",
    "AdamState",
    "BatchNormState",
    "backward",
    "zero_grads",
    "adam_step",
    "relu",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "log",
    "exp",
    "matmul",
    "concat",
    "softmax",
    "add_bias",
    "avg_pool2d",
    "conv2d",
    "conv2d_transpose",
    "batchnorm",
]

# Probabilities are clamped here before any log; keeps losses finite even
# when a discriminator saturates at 0 or 1.
LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """A float64 array plus optional membership in the gradient tape.

    ``grad`` accumulates across backward passes until cleared; callers that
    want fresh gradients must call :func:`zero_grads` (or ``adam_step``,
    which clears the gradients it consumes).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Copy of the values as a fresh leaf outside the tape."""
        return Tensor(self.data.copy())

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out.requires_grad:
            src = self

            def _bw():
                _accum(src, out.grad.reshape(src.data.shape))

            out._backward = _bw
        return out

    def sum(self) -> "Tensor":
        out = _node(np.sum(self.data), (self,))
        if out.requires_grad:
            src = self

            def _bw():
                _accum(src, np.full_like(src.data, float(out.grad)))

            out._backward = _bw
        return out

    def mean(self) -> "Tensor":
        out = _node(np.mean(self.data), (self,))
        if out.requires_grad:
            src = self
            inv = 1.0 / self.data.size

            def _bw():
                _accum(src, np.full_like(src.data, float(out.grad) * inv))

            out._backward = _bw
        return out

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar; scalars (python numbers or single-element tensors)
    # broadcast, nothing else does
    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out.requires_grad:
            src = self

            def _bw():
                _accum(src, -out.grad)

            out._backward = _bw
        return out

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


@dataclass
class Parameter:
    """A named trainable tensor; names must be unique within one network."""

    tensor: Tensor
    name: str

    def __post_init__(self):
        self.tensor.requires_grad = True


@dataclass
class BatchNormState:
    """Running statistics owned by one batchnorm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def for_channels(cls, num_channels: int) -> "BatchNormState":
        return cls(np.zeros(num_channels), np.ones(num_channels))


@dataclass
class AdamState:
    """Per-optimizer Adam moments, keyed by parameter name."""

    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


# ---------------------------------------------------------------------------
# tape plumbing


def _node(data, parents):
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only scalar broadcasting exists, so the reduction is a full sum
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def _binary(kind: str, a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")
    if kind == "add":
        data = a.data + b.data
    elif kind == "sub":
        data = a.data - b.data
    elif kind == "mul":
        data = a.data * b.data
    else:  # pragma: no cover - internal dispatch
        raise ValueError(kind)
    out = _node(data, (a, b))
    if out.requires_grad:

        def _bw():
            g = out.grad
            if kind == "add":
                _accum(a, _reduce_to(g, a.shape))
                _accum(b, _reduce_to(g, b.shape))
            elif kind == "sub":
                _accum(a, _reduce_to(g, a.shape))
                _accum(b, _reduce_to(-g, b.shape))
            else:
                _accum(a, _reduce_to(g * b.data, a.shape))
                _accum(b, _reduce_to(g * a.data, b.shape))

        out._backward = _bw
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every taped ancestor of a scalar loss.

    Repeated calls accumulate into existing gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_topo_order(loss)):
        if node._backward is not None:
            node._backward()


def zero_grads(params) -> None:
    for p in params:
        t = p.tensor if isinstance(p, Parameter) else p
        t.grad = None


def adam_step(params, state: AdamState) -> None:
    """One bias-corrected Adam update over ``params``; clears their grads."""
    params = list(params)
    for p in params:
        if p.tensor.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient; run backward first")
    state.step_count += 1
    t = state.step_count
    corr1 = 1.0 - state.beta1**t
    corr2 = 1.0 - state.beta2**t
    for p in params:
        g = p.tensor.grad
        m = state.first_moment.setdefault(p.name, np.zeros_like(p.tensor.data))
        v = state.second_moment.setdefault(p.name, np.zeros_like(p.tensor.data))
        if m.shape != p.tensor.data.shape:
            raise ValueError(f"adam moment shape {m.shape} does not match parameter {p.name!r}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.tensor.data -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        p.tensor.grad = None


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def relu(x: Tensor) -> Tensor:
    out = _node(np.maximum(x.data, 0.0), (x,))
    if out.requires_grad:
        mask = x.data > 0.0

        def _bw():
            _accum(x, out.grad * mask)

        out._backward = _bw
    return out


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    out = _node(np.where(x.data > 0.0, x.data, alpha * x.data), (x,))
    if out.requires_grad:
        slope = np.where(x.data > 0.0, 1.0, alpha)

        def _bw():
            _accum(x, out.grad * slope)

        out._backward = _bw
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    s = np.where(d >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = _node(s, (x,))
    if out.requires_grad:

        def _bw():
            _accum(x, out.grad * s * (1.0 - s))

        out._backward = _bw
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = _node(t, (x,))
    if out.requires_grad:

        def _bw():
            _accum(x, out.grad * (1.0 - t * t))

        out._backward = _bw
    return out


def log(x: Tensor) -> Tensor:
    """Natural log with the argument clamped to LOG_FLOOR (never NaN).

    Where the clamp is active the derivative is taken as 0, matching the
    flat region of the clamped function.
    """
    clamped = np.maximum(x.data, LOG_FLOOR)
    out = _node(np.log(clamped), (x,))
    if out.requires_grad:
        active = x.data > LOG_FLOOR

        def _bw():
            _accum(x, out.grad * np.where(active, 1.0 / clamped, 0.0))

        out._backward = _bw
    return out


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    out = _node(e, (x,))
    if out.requires_grad:

        def _bw():
            _accum(x, out.grad * e)

        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# linear algebra and structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = _node(a.data @ b.data, (a, b))
    if out.requires_grad:

        def _bw():
            g = out.grad
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

        out._backward = _bw
    return out


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    out = _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    if out.requires_grad:
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def _bw():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                _accum(p, out.grad[tuple(idx)])

        out._backward = _bw
    return out


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis of a 2-D tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax expects a 2-D tensor, got shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=1, keepdims=True)
    out = _node(y, (x,))
    if out.requires_grad:

        def _bw():
            g = out.grad
            dot = np.sum(g * y, axis=1, keepdims=True)
            _accum(x, y * (g - dot))

        out._backward = _bw
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-feature bias (N,M)+(M,) or per-channel bias (N,C,H,W)+(C,)."""
    x, b = _lift(x), _lift(b)
    if x.data.ndim == 2 and b.shape == (x.shape[1],):
        data = x.data + b.data[None, :]
        reduce_axes = (0,)
    elif x.data.ndim == 4 and b.shape == (x.shape[1],):
        data = x.data + b.data[None, :, None, None]
        reduce_axes = (0, 2, 3)
    else:
        raise ShapeError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")
    out = _node(data, (x, b))
    if out.requires_grad:

        def _bw():
            _accum(x, out.grad)
            _accum(b, np.sum(out.grad, axis=reduce_axes))

        out._backward = _bw
    return out


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"avg_pool2d: spatial dims {h}x{w} not divisible by {size}")
    blocks = x.data.reshape(n, c, h // size, size, w // size, size)
    out = _node(blocks.mean(axis=(3, 5)), (x,))
    if out.requires_grad:
        inv = 1.0 / (size * size)

        def _bw():
            g = np.repeat(np.repeat(out.grad, size, axis=2), size, axis=3)
            _accum(x, g * inv)

        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# convolutions
#
# All three primitive maps (forward, input-gradient, kernel-gradient) are
# shared between conv2d and conv2d_transpose: the transpose's forward IS the
# convolution's input-gradient, so the adjoint identity holds bitwise.


def _conv_geometry(h, w, kh, kw, stride, padding):
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    return ho, wo


def _conv_forward(x, k, stride, padding):
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho, wo = _conv_geometry(h, w, kh, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, f, ho, wo))
    for u in range(kh):
        for v in range(kw):
            window = xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
            out += np.einsum("nchw,fc->nfhw", window, k[:, :, u, v])
    return out


def _conv_input_grad(gout, k, stride, padding, in_hw):
    n, f, ho, wo = gout.shape
    _, c, kh, kw = k.shape
    h, w = in_hw
    gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += np.einsum(
                "nfhw,fc->nchw", gout, k[:, :, u, v]
            )
    if padding:
        return gxp[:, :, padding : padding + h, padding : padding + w]
    return gxp


def _conv_kernel_grad(x, gout, stride, padding, kshape):
    f, c, kh, kw = kshape
    n, _, ho, wo = gout.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    gk = np.zeros(kshape)
    for u in range(kh):
        for v in range(kw):
            window = xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
            gk[:, :, u, v] = np.einsum("nfhw,nchw->fc", gout, window)
    return gk


def _check_conv_args(x, k, stride, padding, transpose=False):
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(f"conv needs 4-D input and kernel, got {x.shape} and {k.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv: invalid stride={stride} / padding={padding}")
    n, cin, h, w = x.shape
    if transpose:
        f, _, kh, kw = k.shape
        if cin != f:
            raise ShapeError(
                f"conv2d_transpose: input channels {cin} do not match kernel filters {f} "
                f"(input {x.shape}, kernel {k.shape})"
            )
        if (h - 1) * stride - 2 * padding + kh < 1 or (w - 1) * stride - 2 * padding + kw < 1:
            raise ShapeError(
                f"conv2d_transpose: degenerate output for input {x.shape}, kernel {k.shape}, "
                f"stride={stride}, padding={padding}"
            )
    else:
        f, ck, kh, kw = k.shape
        if cin != ck:
            raise ShapeError(
                f"conv2d: input channels {cin} do not match kernel channels {ck} "
                f"(input {x.shape}, kernel {k.shape})"
            )
        if h + 2 * padding < kh or w + 2 * padding < kw:
            raise ShapeError(
                f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x"
                f"{w + 2 * padding} (input {x.shape}, stride={stride}, padding={padding})"
            )


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of (N,C,H,W) with (F,C,kh,kw) kernels."""
    _check_conv_args(x, kernel, stride, padding)
    out = _node(_conv_forward(x.data, kernel.data, stride, padding), (x, kernel))
    if out.requires_grad:
        in_hw = x.shape[2:]

        def _bw():
            g = out.grad
            _accum(x, _conv_input_grad(g, kernel.data, stride, padding, in_hw))
            _accum(kernel, _conv_kernel_grad(x.data, g, stride, padding, kernel.shape))

        out._backward = _bw
    if bias is not None:
        out = add_bias(out, bias)
    return out


def conv2d_transpose(
    x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0, bias: Tensor | None = None
) -> Tensor:
    """Adjoint of conv2d: maps (N,F,h,w) to (N,C,H,W) with kernel (F,C,kh,kw).

    Output spatial size is (h-1)*stride - 2*padding + kh.
    """
    _check_conv_args(x, kernel, stride, padding, transpose=True)
    _, _, kh, kw = kernel.shape
    n, f, h, w = x.shape
    out_hw = ((h - 1) * stride - 2 * padding + kh, (w - 1) * stride - 2 * padding + kw)
    out = _node(_conv_input_grad(x.data, kernel.data, stride, padding, out_hw), (x, kernel))
    if out.requires_grad:

        def _bw():
            g = out.grad
            _accum(x, _conv_forward(g, kernel.data, stride, padding))
            _accum(kernel, _conv_kernel_grad(g, x.data, stride, padding, kernel.shape))

        out._backward = _bw
    if bias is not None:
        out = add_bias(out, bias)
    return out


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize per channel (axis 1) of a 2-D or 4-D tensor.

    Train mode uses batch statistics (biased variance) and folds them into
    the running stats with ``momentum``; eval mode uses the running stats.
    """
    if x.data.ndim not in (2, 4):
        raise ShapeError(f"batchnorm expects a 2-D or 4-D tensor, got shape {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"batchnorm: gamma {gamma.shape} / beta {beta.shape} do not match {channels} channels"
        )
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    expand = (None, slice(None)) if x.data.ndim == 2 else (None, slice(None), None, None)

    if train:
        if x.shape[0] < 2:
            raise ShapeError(f"batchnorm train mode needs a batch of at least 2, got {x.shape[0]}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mu
        state.running_var = (1.0 - momentum) * state.running_var + momentum * var
    else:
        mu = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[expand]) * inv_std[expand]
    out = _node(gamma.data[expand] * xhat + beta.data[expand], (x, gamma, beta))
    if out.requires_grad:
        m = x.data.size // channels

        def _bw():
            g = out.grad
            _accum(beta, np.sum(g, axis=axes))
            _accum(gamma, np.sum(g * xhat, axis=axes))
            gxhat = g * gamma.data[expand]
            if train:
                term = (
                    gxhat
                    - np.mean(gxhat, axis=axes)[expand]
                    - xhat * np.mean(gxhat * xhat, axis=axes)[expand]
                )
                _accum(x, term * inv_std[expand])
            else:
                _accum(x, gxhat * inv_std[expand])

        out._backward = _bw
    return out
