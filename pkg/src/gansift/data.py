"""Toy dataset generation, stratified splitting, smoothed labels,
ratio-controlled mixed batches, and the `.sgds` dataset container.

The toy classes are procedural textures with class-discriminative spatial
structure (stripe orientations, checkerboard scales, blob counts, radial
gradients) plus per-sample jitter, so a small classifier can separate them
and a small GAN can learn them.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

ORIGIN_REAL = "real"
ORIGIN_TRANSFORMED = "transformed"
ORIGIN_GAN = "gan"

_ORIGIN_CODES = {ORIGIN_REAL: 0, ORIGIN_TRANSFORMED: 1, ORIGIN_GAN: 2}
_ORIGIN_NAMES = {v: k for k, v in _ORIGIN_CODES.items()}

MAGIC = b"SGDS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQHHHH")  # magic, version, count, C, H, W, k
_RECORD_HEAD = struct.Struct("<HB")  # label, origin

MAX_TOY_CLASSES = 8


class ContainerError(ValueError):
    """Malformed `.sgds` container."""


class TruncatedContainerError(ContainerError):
    """Container ends before the declared record count."""


@dataclass
class LabeledImage:
    image: np.ndarray  # (C, H, W) float64 in [0, 1]
    label: int
    origin: str = ORIGIN_REAL

    def __post_init__(self):
        if self.origin not in _ORIGIN_CODES:
            raise ValueError(f"unknown origin {self.origin!r}")


def smooth_label(class_index: int, num_classes: int, epsilon: float) -> np.ndarray:
    """Smoothed target row: (1 - eps) * one-hot + eps / k.

    eps=0 reduces to one-hot, eps=1 to the uniform distribution.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if not 0 <= class_index < num_classes:
        raise ValueError(f"class {class_index} out of range [0, {num_classes})")
    row = np.full(num_classes, epsilon / num_classes)
    row[class_index] += 1.0 - epsilon
    return row


# ---------------------------------------------------------------------------
# procedural toy dataset


def _grid(h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    return yy / max(h - 1, 1), xx / max(w - 1, 1)


def _stripes(h, w, angle, rng):
    yy, xx = _grid(h, w)
    freq = rng.uniform(1.6, 2.4)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    coord = np.cos(angle) * xx + np.sin(angle) * yy
    return 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * coord + phase)


def _checker(h, w, cell, rng):
    yy, xx = np.mgrid[0:h, 0:w]
    oy, ox = rng.integers(0, cell, size=2)
    return (((yy + oy) // cell + (xx + ox) // cell) % 2).astype(np.float64)


def _radial(h, w, inverted, rng):
    yy, xx = _grid(h, w)
    cy, cx = rng.uniform(0.35, 0.65, size=2)
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) / 0.75
    out = np.clip(1.0 - r, 0.0, 1.0)
    return 1.0 - out if inverted else out


def _blobs(h, w, count, rng):
    yy, xx = _grid(h, w)
    out = np.zeros((h, w))
    for _ in range(count):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        out += np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / 0.02))
    return np.clip(out, 0.0, 1.0)


def _class_pattern(class_index, h, w, rng):
    if class_index == 0:
        return _stripes(h, w, np.pi / 2.0, rng)  # horizontal bands
    if class_index == 1:
        return _stripes(h, w, np.pi / 4.0, rng)  # diagonal bands
    if class_index == 2:
        return _checker(h, w, max(2, h // 8), rng)
    if class_index == 3:
        return _radial(h, w, False, rng)
    if class_index == 4:
        return _stripes(h, w, 0.0, rng)  # vertical bands
    if class_index == 5:
        return _checker(h, w, max(3, h // 4), rng)
    if class_index == 6:
        return _blobs(h, w, 3, rng)
    if class_index == 7:
        return _radial(h, w, True, rng)
    raise ValueError(f"no procedure for class {class_index}; at most {MAX_TOY_CLASSES} classes exist")


def gen_toy_dataset(
    num_per_class: int,
    num_classes: int,
    shape: tuple[int, int, int] = (1, 16, 16),
    seed: int = 0,
) -> list[LabeledImage]:
    """Deterministic procedural dataset with ``num_per_class`` samples of
    each of ``num_classes`` (at most 8) classes."""
    if not 1 <= num_classes <= MAX_TOY_CLASSES:
        raise ValueError(f"num_classes must lie in [1, {MAX_TOY_CLASSES}], got {num_classes}")
    c, h, w = shape
    rng = np.random.default_rng(seed)
    samples = []
    for label in range(num_classes):
        for _ in range(num_per_class):
            base = _class_pattern(label, h, w, rng)
            contrast = rng.uniform(0.75, 1.0)
            brightness = rng.uniform(0.0, 0.12)
            img = np.clip(contrast * base + brightness, 0.0, 1.0)
            img = img + rng.normal(0.0, 0.02, size=(h, w))
            img = np.clip(img, 0.0, 1.0)
            image = np.broadcast_to(img, (c, h, w)).copy()
            samples.append(LabeledImage(image, label, ORIGIN_REAL))
    return samples


def split_half(dataset: list[LabeledImage], seed: int = 0) -> tuple[list[LabeledImage], list[LabeledImage]]:
    """Stratified 50/50 split; every class must have an even sample count."""
    by_class: dict[int, list[int]] = {}
    for i, s in enumerate(dataset):
        by_class.setdefault(s.label, []).append(i)
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        if len(idx) % 2:
            raise ValueError(f"class {label} has an odd sample count {len(idx)}; cannot split 50/50")
        perm = rng.permutation(len(idx))
        half = len(idx) // 2
        train_idx.extend(idx[perm[:half]])
        test_idx.extend(idx[perm[half:]])
    return [dataset[i] for i in train_idx], [dataset[i] for i in test_idx]


def stack_images(samples: list[LabeledImage]) -> tuple[np.ndarray, np.ndarray]:
    """Batch view of a sample list: (N,C,H,W) images and (N,) labels."""
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return images, labels


# ---------------------------------------------------------------------------
# mixed batches


@dataclass
class MixedBatchSpec:
    """Batch recipe: how many originals vs. augmented samples per batch and
    how augmented samples are labeled.

    When batch_size is not divisible by the ratio, the original part is
    rounded down (remainder goes to the augmented part); the resolved
    composition is logged and exposed as ``num_original``/``num_augmented``
    so that every batch is still exact.
    """

    batch_size: int = 64
    ratio_orig: int = 1
    ratio_aug: int = 1
    label_smoothing: float = 0.8
    num_classes: int = 4
    num_original: int = field(init=False)
    num_augmented: int = field(init=False)
    rounded: bool = field(init=False, default=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.ratio_orig < 1 or self.ratio_aug < 0:
            raise ValueError(f"ratio must be >=1 : >=0, got {self.ratio_orig}:{self.ratio_aug}")
        if not 0.0 <= self.label_smoothing <= 1.0:
            raise ValueError(f"label_smoothing must lie in [0, 1], got {self.label_smoothing}")
        parts = self.ratio_orig + self.ratio_aug
        exact = self.batch_size * self.ratio_orig
        self.num_original = exact // parts
        self.num_augmented = self.batch_size - self.num_original
        if exact % parts:
            self.rounded = True
            logger.warning(
                "batch %d with ratio %d:%d is not exactly divisible; using composition %d original + %d augmented",
                self.batch_size, self.ratio_orig, self.ratio_aug, self.num_original, self.num_augmented,
            )
        if self.num_original < 1:
            raise ValueError(
                f"ratio {self.ratio_orig}:{self.ratio_aug} leaves no original samples in a batch of {self.batch_size}"
            )

    @property
    def ratio(self) -> str:
        return f"{self.ratio_orig}:{self.ratio_aug}"


def _draw(pool_size: int, count: int, rng: np.random.Generator) -> np.ndarray:
    # without replacement within a batch; falls back to replacement when the
    # pool is smaller than one batch's demand
    if count <= pool_size:
        return rng.choice(pool_size, size=count, replace=False)
    return rng.choice(pool_size, size=count, replace=True)


def make_mixed_batch(
    train_pool: list[LabeledImage],
    aug_pool: list[LabeledImage] | None,
    spec: MixedBatchSpec,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """One training batch: images (B,C,H,W) and soft-label rows (B,k).

    Original and transformed samples carry one-hot rows; GAN-origin samples
    carry smoothed rows with the spec's epsilon.
    """
    if not train_pool:
        raise ValueError("train_pool is empty")
    if spec.num_augmented and not aug_pool:
        raise ValueError(f"augmented part is {spec.num_augmented} but aug_pool is empty")
    k = spec.num_classes
    picks = [(train_pool[i], False) for i in _draw(len(train_pool), spec.num_original, rng)]
    if spec.num_augmented:
        picks += [(aug_pool[i], True) for i in _draw(len(aug_pool), spec.num_augmented, rng)]
    images = np.stack([s.image for s, _ in picks])
    labels = np.zeros((len(picks), k))
    for row, (s, is_aug) in enumerate(picks):
        if not 0 <= s.label < k:
            raise ValueError(f"sample label {s.label} out of range [0, {k})")
        if is_aug and s.origin == ORIGIN_GAN:
            labels[row] = smooth_label(s.label, k, spec.label_smoothing)
        else:
            labels[row, s.label] = 1.0
    return images, labels


# ---------------------------------------------------------------------------
# container format


def save_dataset(path, samples: list[LabeledImage], num_classes: int) -> None:
    """Write samples to the binary `.sgds` container (bit-exact round-trip)."""
    if not samples:
        raise ValueError("refusing to save an empty dataset")
    c, h, w = samples[0].image.shape
    for s in samples:
        if s.image.shape != (c, h, w):
            raise ValueError(f"inconsistent image shapes {s.image.shape} vs {(c, h, w)}")
        if not 0 <= s.label < num_classes:
            raise ValueError(f"label {s.label} out of range [0, {num_classes})")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(samples), c, h, w, num_classes))
        for s in samples:
            fh.write(_RECORD_HEAD.pack(s.label, _ORIGIN_CODES[s.origin]))
            fh.write(np.ascontiguousarray(s.image, dtype="<f8").tobytes())


def load_dataset(path) -> tuple[list[LabeledImage], int]:
    """Read a `.sgds` container; returns (samples, num_classes)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TruncatedContainerError(f"{path}: file shorter than the {_HEADER.size}-byte header")
        magic, version, count, c, h, w, k = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ContainerError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise ContainerError(f"{path}: unsupported format version {version}, expected {FORMAT_VERSION}")
        pixels = c * h * w
        record_size = _RECORD_HEAD.size + 8 * pixels
        samples = []
        for i in range(count):
            rec = fh.read(record_size)
            if len(rec) < record_size:
                raise TruncatedContainerError(f"{path}: record {i} of {count} is truncated")
            label, origin_code = _RECORD_HEAD.unpack_from(rec)
            if label >= k:
                raise ContainerError(f"{path}: record {i} has label {label} >= class count {k}")
            if origin_code not in _ORIGIN_NAMES:
                raise ContainerError(f"{path}: record {i} has unknown origin code {origin_code}")
            image = np.frombuffer(rec, dtype="<f8", offset=_RECORD_HEAD.size).reshape(c, h, w).copy()
            samples.append(LabeledImage(image, label, _ORIGIN_NAMES[origin_code]))
        if fh.read(1):
            raise ContainerError(f"{path}: trailing bytes after {count} records")
    return samples, k
