"""Two-stage sifting of the snapshot stream.

Stage one scores a whole snapshot: generate a probe batch whose labels
cycle round-robin over the classes, run the paired discriminator on it,
and keep the snapshot only if the generator loss on that batch is below
the loss threshold. Stage two re-evaluates the discriminator on each
sample of an accepted batch individually and keeps samples whose
probability strictly exceeds the probability threshold.

Every decision is appended to a plain-text audit log carrying the raw
probabilities, so the whole run can be re-derived and checked from the
log alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import nets
from .data import ORIGIN_GAN, LabeledImage
from .gantrain import ModelSnapshot
from .tensor import Tensor


@dataclass
class SiftConfig:
    """Thresholds and probe-batch geometry for the sifting pipeline."""

    loss_threshold: float = 1.0       # generator-loss gate per snapshot
    prob_threshold: float = 0.9       # discriminator gate per sample, in (0,1)
    batch_size: int = 64
    num_classes: int = 4
    target_set_size: int = 1000
    loss_mode: str = nets.NON_SATURATING
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.prob_threshold < 1.0:
            raise ValueError(f"prob_threshold must lie in (0, 1), got {self.prob_threshold}")
        if self.target_set_size < 1:
            raise ValueError(f"target_set_size must be >= 1, got {self.target_set_size}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss_mode not in nets.GLOSS_MODES:
            raise ValueError(f"loss_mode must be one of {nets.GLOSS_MODES}")


@dataclass
class SiftedSample:
    """One synthetic sample that survived both sifting stages."""

    image: np.ndarray
    label: int
    disc_prob: float
    source_iteration: int

    def as_labeled_image(self) -> LabeledImage:
        return LabeledImage(self.image, self.label, ORIGIN_GAN)


@dataclass
class SiftStats:
    models_accepted: int = 0
    models_rejected: int = 0
    samples_accepted: int = 0
    samples_rejected: int = 0
    shortfall: bool = False


@dataclass
class SiftResult:
    samples: list[SiftedSample]
    stats: SiftStats
    per_class_counts: dict[int, int]
    audit_lines: list[str] = field(repr=False, default_factory=list)


def model_passes(loss: float, loss_threshold: float) -> bool:
    """Snapshot gate: strict `loss < threshold`."""
    return loss < loss_threshold


def sample_passes(prob: float, prob_threshold: float) -> bool:
    """Sample gate: strict `prob > threshold`; an exact tie is rejected."""
    return prob > prob_threshold


def probe_labels(batch_size: int, num_classes: int) -> np.ndarray:
    """Round-robin labels so every probe batch covers every class."""
    return np.arange(batch_size) % num_classes


def snapshot_rng(config: SiftConfig, iteration: int) -> np.random.Generator:
    # one stream per snapshot so the probe batch for iteration j does not
    # depend on how many earlier snapshots were processed or accepted
    return np.random.default_rng((config.seed, iteration))


@dataclass
class ModelProbe:
    """Everything stage one computed for one snapshot."""

    iteration: int
    images: np.ndarray
    labels: np.ndarray
    probs: np.ndarray
    loss: float
    accepted: bool


def probe_model(
    snapshot: ModelSnapshot,
    config: SiftConfig,
    gen: nets.CondGenerator,
    disc: nets.CondDiscriminator,
    rng: np.random.Generator,
) -> ModelProbe:
    """Load the snapshot into the work networks and score its probe batch."""
    gen.load_state(snapshot.gen_state)
    disc.load_state(snapshot.disc_state)
    labels = probe_labels(config.batch_size, config.num_classes)
    z = rng.standard_normal((config.batch_size, gen.config.noise_dim))
    images = gen.forward(z, labels, train=False).data
    probs = disc.forward(images, labels).data
    loss = nets.g_loss(Tensor(probs), config.loss_mode).item()
    return ModelProbe(snapshot.iteration, images, labels, probs, loss, model_passes(loss, config.loss_threshold))


def sift_model(
    snapshot: ModelSnapshot,
    config: SiftConfig,
    rng: np.random.Generator,
    gen: nets.CondGenerator,
    disc: nets.CondDiscriminator,
) -> list[LabeledImage] | None:
    """Stage one alone: the probe batch if the snapshot passes, else None."""
    probe = probe_model(snapshot, config, gen, disc, rng)
    if not probe.accepted:
        return None
    return [
        LabeledImage(probe.images[i].copy(), int(probe.labels[i]), ORIGIN_GAN)
        for i in range(config.batch_size)
    ]


def _single_prob(disc: nets.CondDiscriminator, image: np.ndarray, label: int) -> float:
    return float(disc.forward(image[None, ...], np.array([label])).data[0])


def sift_sample(
    sample: LabeledImage,
    snapshot: ModelSnapshot,
    config: SiftConfig,
    disc: nets.CondDiscriminator,
) -> SiftedSample | None:
    """Stage two alone: re-evaluate one sample under the snapshot's
    discriminator; kept only if the probability strictly exceeds the gate."""
    disc.load_state(snapshot.disc_state)
    prob = _single_prob(disc, sample.image, sample.label)
    if not sample_passes(prob, config.prob_threshold):
        return None
    return SiftedSample(sample.image.copy(), sample.label, prob, snapshot.iteration)


def _fmt_probs(probs: np.ndarray) -> str:
    return ",".join(repr(float(p)) for p in probs)


def run_pipeline(
    snapshot_stream: Iterable[ModelSnapshot],
    config: SiftConfig,
    gen: nets.CondGenerator,
    disc: nets.CondDiscriminator,
    audit_path=None,
) -> SiftResult:
    """Consume snapshots in order, applying both sifting stages, until the
    target set size is reached or the stream ends.

    A stream that ends early yields a partial set with ``shortfall`` set;
    that is a reported outcome, not an error.
    """
    stats = SiftStats()
    samples: list[SiftedSample] = []
    per_class = {c: 0 for c in range(config.num_classes)}
    audit: list[str] = []
    for snapshot in snapshot_stream:
        rng = snapshot_rng(config, snapshot.iteration)
        probe = probe_model(snapshot, config, gen, disc, rng)
        decision = "accept" if probe.accepted else "reject"
        audit.append(
            f"model j={probe.iteration} loss={float(probe.loss)!r} decision={decision} "
            f"probs={_fmt_probs(probe.probs)}"
        )
        if not probe.accepted:
            stats.models_rejected += 1
            continue
        stats.models_accepted += 1
        done = False
        for i in range(config.batch_size):
            label = int(probe.labels[i])
            prob = _single_prob(disc, probe.images[i], label)
            kept = sample_passes(prob, config.prob_threshold)
            audit.append(
                f"sample j={probe.iteration} idx={i} label={label} prob={float(prob)!r} "
                f"decision={'accept' if kept else 'reject'}"
            )
            if kept:
                stats.samples_accepted += 1
                per_class[label] += 1
                samples.append(SiftedSample(probe.images[i].copy(), label, prob, probe.iteration))
                if len(samples) >= config.target_set_size:
                    done = True
                    break
            else:
                stats.samples_rejected += 1
        if done:
            break
    stats.shortfall = len(samples) < config.target_set_size
    if stats.shortfall:
        audit.append(
            f"shortfall collected={len(samples)} target={config.target_set_size}"
        )
    if audit_path is not None:
        with open(audit_path, "w", newline="\n") as fh:
            for line in audit:
                fh.write(line + "\n")
    return SiftResult(samples, stats, per_class, audit)
