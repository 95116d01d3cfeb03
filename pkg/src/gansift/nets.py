"""Conditional generator, conditional discriminator, a small classifier,
and the adversarial / cross-entropy losses they train with.

The label enters the generator as a one-hot block concatenated to the
noise vector, and the discriminator as one-hot planes appended to the
image channels. Architecture sizes are configuration, not contract: any
consistent set works, the defaults target 1x16x16 images with 4 classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, Parameter, Tensor

SATURATING = "saturating"
NON_SATURATING = "non_saturating"

GLOSS_MODES = (SATURATING, NON_SATURATING)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _init(rng: np.random.Generator, shape, scale: float) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape))


class _ParamRegistry:
    """Builds uniquely named parameters for one network."""

    def __init__(self, rng: np.random.Generator, init_scale: float = 0.02):
        self.rng = rng
        self.scale = init_scale
        self.params: list[Parameter] = []
        self._names: set[str] = set()

    def make(self, name: str, shape, scale: float | None = None, value: np.ndarray | None = None) -> Parameter:
        if name in self._names:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._names.add(name)
        if value is not None:
            t = Tensor(value.copy())
        else:
            t = _init(self.rng, shape, self.scale if scale is None else scale)
        p = Parameter(t, name)
        self.params.append(p)
        return p


class _Network:
    """Shared state-dict plumbing: parameters plus batchnorm buffers."""

    def parameters(self) -> list[Parameter]:
        return list(self._registry.params)

    def _buffers(self) -> dict[str, BatchNormState]:
        return getattr(self, "_bn_states", {})

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {p.name: p.tensor.data.copy() for p in self.parameters()}
        for name, bn in self._buffers().items():
            state[f"{name}.running_mean"] = bn.running_mean.copy()
            state[f"{name}.running_var"] = bn.running_var.copy()
        return state

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"state is missing parameter {p.name!r}")
            value = np.asarray(state[p.name], dtype=np.float64)
            if value.shape != p.tensor.data.shape:
                if value.size != p.tensor.data.size:
                    raise ValueError(
                        f"parameter {p.name!r} expects shape {p.tensor.data.shape}, got {value.shape}"
                    )
                value = value.reshape(p.tensor.data.shape)  # wire format is flat
            p.tensor.data = value.copy()
            p.tensor.grad = None
        for name, bn in self._buffers().items():
            bn.running_mean = np.asarray(state[f"{name}.running_mean"], dtype=np.float64).copy()
            bn.running_var = np.asarray(state[f"{name}.running_var"], dtype=np.float64).copy()


# ---------------------------------------------------------------------------
# generator


@dataclass
class GeneratorConfig:
    noise_dim: int = 32
    num_classes: int = 4
    out_channels: int = 1
    out_size: int = 16          # output is out_channels x out_size x out_size
    base_channels: int = 32     # channels at the 4x4 seed resolution
    kernel_size: int = 4

    @property
    def out_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.out_size, self.out_size)

    def __post_init__(self):
        if self.out_size % 4:
            raise ValueError(f"out_size must be a multiple of 4, got {self.out_size}")


class CondGenerator(_Network):
    """Label-conditioned generator: dense seed, two stride-2 upsampling
    convolutions with batchnorm, squashed to [0,1]."""

    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        self.config = config
        self._registry = _ParamRegistry(rng)
        c = config
        self.seed_hw = c.out_size // 4
        seed_units = c.base_channels * self.seed_hw * self.seed_hw
        mk = self._registry.make
        self.w_seed = mk("dense.w", (c.noise_dim + c.num_classes, seed_units))
        self.b_seed = mk("dense.b", None, value=np.zeros(seed_units))
        half = c.base_channels // 2
        self.k_up1 = mk("up1.k", (c.base_channels, half, c.kernel_size, c.kernel_size))
        self.b_up1 = mk("up1.b", None, value=np.zeros(half))
        self.k_up2 = mk("up2.k", (half, c.out_channels, c.kernel_size, c.kernel_size))
        self.b_up2 = mk("up2.b", None, value=np.zeros(c.out_channels))
        self.g_bn0 = mk("bn0.gamma", None, value=np.ones(c.base_channels))
        self.be_bn0 = mk("bn0.beta", None, value=np.zeros(c.base_channels))
        self.g_bn1 = mk("bn1.gamma", None, value=np.ones(half))
        self.be_bn1 = mk("bn1.beta", None, value=np.zeros(half))
        self._bn_states = {
            "bn0": BatchNormState.for_channels(c.base_channels),
            "bn1": BatchNormState.for_channels(half),
        }

    def forward(self, z: Tensor | np.ndarray, labels: np.ndarray, train: bool = True) -> Tensor:
        """Generate a batch of images in [0,1] from noise and class labels."""
        c = self.config
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.data.ndim != 2 or z.shape[1] != c.noise_dim:
            raise T.ShapeError(f"noise must be (N, {c.noise_dim}), got {z.shape}")
        y = one_hot(labels, c.num_classes)
        h = T.add_bias(T.matmul(T.concat([z, Tensor(y)], axis=1), self.w_seed.tensor), self.b_seed.tensor)
        h = h.reshape(z.shape[0], c.base_channels, self.seed_hw, self.seed_hw)
        h = T.relu(T.batchnorm(h, self.g_bn0.tensor, self.be_bn0.tensor, self._bn_states["bn0"], train))
        h = T.conv2d_transpose(h, self.k_up1.tensor, stride=2, padding=1, bias=self.b_up1.tensor)
        h = T.relu(T.batchnorm(h, self.g_bn1.tensor, self.be_bn1.tensor, self._bn_states["bn1"], train))
        h = T.conv2d_transpose(h, self.k_up2.tensor, stride=2, padding=1, bias=self.b_up2.tensor)
        # tanh squashes to [-1,1]; affine rescale lands in [0,1]
        return T.tanh(h) * 0.5 + 0.5


# ---------------------------------------------------------------------------
# discriminator


@dataclass
class DiscriminatorConfig:
    num_classes: int = 4
    in_channels: int = 1
    in_size: int = 16
    base_channels: int = 16
    kernel_size: int = 4

    @property
    def in_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.in_size, self.in_size)

    def __post_init__(self):
        if self.in_size % 4:
            raise ValueError(f"in_size must be a multiple of 4, got {self.in_size}")


class CondDiscriminator(_Network):
    """Label-conditioned discriminator: the one-hot label rides along as
    constant image planes; two stride-2 convolutions, dense sigmoid head."""

    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        self.config = config
        self._registry = _ParamRegistry(rng)
        c = config
        mk = self._registry.make
        ks = c.kernel_size
        self.k1 = mk("conv1.k", (c.base_channels, c.in_channels + c.num_classes, ks, ks))
        self.b1 = mk("conv1.b", None, value=np.zeros(c.base_channels))
        self.k2 = mk("conv2.k", (2 * c.base_channels, c.base_channels, ks, ks))
        self.b2 = mk("conv2.b", None, value=np.zeros(2 * c.base_channels))
        flat = 2 * c.base_channels * (c.in_size // 4) ** 2
        self.w_head = mk("head.w", (flat, 1))
        self.b_head = mk("head.b", None, value=np.zeros(1))

    def forward(self, x: Tensor | np.ndarray, labels: np.ndarray) -> Tensor:
        """Probability in (0,1) that each labeled image is real, shape (N,)."""
        c = self.config
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.data.ndim != 4 or x.shape[1:] != c.in_shape:
            raise T.ShapeError(f"input must be (N, {c.in_channels}, {c.in_size}, {c.in_size}), got {x.shape}")
        n = x.shape[0]
        y = one_hot(labels, c.num_classes)
        planes = np.broadcast_to(y[:, :, None, None], (n, c.num_classes, c.in_size, c.in_size)).copy()
        h = T.concat([x, Tensor(planes)], axis=1)
        h = T.leaky_relu(T.conv2d(h, self.k1.tensor, stride=2, padding=1, bias=self.b1.tensor))
        h = T.leaky_relu(T.conv2d(h, self.k2.tensor, stride=2, padding=1, bias=self.b2.tensor))
        h = h.reshape(n, self.w_head.tensor.shape[0])
        h = T.add_bias(T.matmul(h, self.w_head.tensor), self.b_head.tensor)
        return T.sigmoid(h).reshape(n)


# ---------------------------------------------------------------------------
# classifier


@dataclass
class ClassifierConfig:
    num_classes: int = 4
    in_channels: int = 1
    in_size: int = 16
    base_channels: int = 8
    kernel_size: int = 3

    def __post_init__(self):
        if self.in_size % 4:
            raise ValueError(f"in_size must be a multiple of 4, got {self.in_size}")
        if self.kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")


class Classifier(_Network):
    """Two conv+pool stages and a dense softmax head.

    The head is a separate parameter group so it can be trained alone
    (output-layer-only warmup) or at its own learning rate.
    """

    def __init__(self, config: ClassifierConfig, rng: np.random.Generator):
        self.config = config
        self._registry = _ParamRegistry(rng)
        c = config
        mk = self._registry.make
        ks, pad = c.kernel_size, c.kernel_size // 2
        self._pad = pad
        scale1 = np.sqrt(2.0 / (c.in_channels * ks * ks))
        scale2 = np.sqrt(2.0 / (c.base_channels * ks * ks))
        self.k1 = mk("feat.conv1.k", (c.base_channels, c.in_channels, ks, ks), scale=scale1)
        self.b1 = mk("feat.conv1.b", None, value=np.zeros(c.base_channels))
        self.k2 = mk("feat.conv2.k", (2 * c.base_channels, c.base_channels, ks, ks), scale=scale2)
        self.b2 = mk("feat.conv2.b", None, value=np.zeros(2 * c.base_channels))
        flat = 2 * c.base_channels * (c.in_size // 4) ** 2
        self.w_head = mk("head.w", (flat, c.num_classes), scale=np.sqrt(1.0 / flat))
        self.b_head = mk("head.b", None, value=np.zeros(c.num_classes))

    @property
    def feature_params(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.name.startswith("feat.")]

    @property
    def head_params(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.name.startswith("head.")]

    def forward(self, x: Tensor | np.ndarray) -> Tensor:
        """Class probability rows (N, k), each summing to 1."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        c = self.config
        if x.data.ndim != 4 or x.shape[1] != c.in_channels:
            raise T.ShapeError(f"input must be (N, {c.in_channels}, H, W), got {x.shape}")
        h = T.relu(T.conv2d(x, self.k1.tensor, stride=1, padding=self._pad, bias=self.b1.tensor))
        h = T.avg_pool2d(h, 2)
        h = T.relu(T.conv2d(h, self.k2.tensor, stride=1, padding=self._pad, bias=self.b2.tensor))
        h = T.avg_pool2d(h, 2)
        h = h.reshape(x.shape[0], self.w_head.tensor.shape[0])
        logits = T.add_bias(T.matmul(h, self.w_head.tensor), self.b_head.tensor)
        return T.softmax(logits)


# ---------------------------------------------------------------------------
# losses


def d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Discriminator objective: -[mean log D(real) + mean log(1 - D(fake))].

    Non-negative; equals 2*log(2) when both sides sit at 0.5.
    """
    return -(T.log(d_real).mean() + T.log(1.0 - d_fake).mean())


def g_loss(d_fake: Tensor, mode: str = NON_SATURATING) -> Tensor:
    """Generator objective on discriminator outputs for generated samples.

    ``saturating`` is mean log(1 - D(fake)), always <= 0; ``non_saturating``
    is -mean log D(fake), always >= 0 and the better-behaved training form.
    """
    if mode == SATURATING:
        return T.log(1.0 - d_fake).mean()
    if mode == NON_SATURATING:
        return -T.log(d_fake).mean()
    raise ValueError(f"unknown g_loss mode {mode!r}; expected one of {GLOSS_MODES}")


def ce_soft(pred: Tensor, target: np.ndarray) -> Tensor:
    """Cross-entropy -(1/N) sum target*log(pred) accepting soft target rows."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise T.ShapeError(f"ce_soft: prediction {pred.shape} and target {target.shape} differ")
    if target.size:
        if target.min() < 0.0:
            raise ValueError("ce_soft: target rows must be non-negative")
        sums = target.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            bad = int(np.abs(sums - 1.0).argmax())
            raise ValueError(f"ce_soft: target row {bad} sums to {sums[bad]!r}, expected 1")
    n = pred.shape[0]
    return (T.log(pred) * Tensor(target)).sum() * (-1.0 / n)
