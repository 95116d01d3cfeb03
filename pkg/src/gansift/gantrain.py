"""Adversarial training loop with a continuous snapshot stream.

Training never pauses for snapshots: once the warmup gate has passed, a
frozen copy of both networks is emitted every ``snapshot_every`` iterations
while the loop keeps updating the live parameters. The stream is what the
sifting stage consumes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import nets
from . import tensor as T
from .tensor import AdamState, Tensor

SNAPSHOT_MAGIC = b"SGSN"
SNAPSHOT_VERSION = 1
_SNAP_HEADER = struct.Struct("<4sHQ")  # magic, version, iteration
_NAME_LEN = struct.Struct("<H")
_COUNT = struct.Struct("<Q")

_GEN_PREFIX = "gen/"
_DISC_PREFIX = "disc/"
_META_G_LOSS = "meta/g_loss"


class SnapshotFormatError(ValueError):
    """Malformed snapshot container."""


@dataclass
class TrainConfig:
    """Knobs for one adversarial training run.

    ``warmup_iterations`` gates the snapshot stream; ``lr_double_points``
    are the iterations at which the generator's learning rate doubles
    (cumulatively). Both default to fixed fractions of the total so the
    schedule keeps its shape at any scale.
    """

    batch_size: int = 64
    total_iterations: int = 2500
    warmup_iterations: int | None = None
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    lr_double_points: tuple[int, ...] | None = None
    snapshot_every: int = 5
    g_loss_mode: str = nets.NON_SATURATING
    seed: int = 0

    def __post_init__(self):
        if self.total_iterations < 1:
            raise ValueError(f"total_iterations must be positive, got {self.total_iterations}")
        if self.warmup_iterations is None:
            self.warmup_iterations = int(0.4 * self.total_iterations)
        if self.lr_double_points is None:
            self.lr_double_points = (
                int(0.4 * self.total_iterations),
                int(0.65 * self.total_iterations),
            )
        self.lr_double_points = tuple(sorted(int(p) for p in self.lr_double_points))
        if not self.warmup_iterations < self.total_iterations:
            raise ValueError(
                f"warmup_iterations {self.warmup_iterations} must be below total {self.total_iterations}"
            )
        if self.snapshot_every < 1:
            raise ValueError(f"snapshot_every must be >= 1, got {self.snapshot_every}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 (batchnorm), got {self.batch_size}")
        if self.g_loss_mode not in nets.GLOSS_MODES:
            raise ValueError(f"g_loss_mode must be one of {nets.GLOSS_MODES}")


@dataclass
class ModelSnapshot:
    """Frozen copy of both networks at one training iteration."""

    iteration: int
    gen_state: dict[str, np.ndarray]
    disc_state: dict[str, np.ndarray]
    g_loss_at_snapshot: float


def lr_schedule(iteration: int, config: TrainConfig) -> tuple[float, float]:
    """Generator rate doubles at each configured point; discriminator rate
    stays constant."""
    factor = 1.0
    for point in config.lr_double_points:
        if iteration >= point:
            factor *= 2.0
    return config.lr_g * factor, config.lr_d


def train_step(
    gen: nets.CondGenerator,
    disc: nets.CondDiscriminator,
    opt_g: AdamState,
    opt_d: AdamState,
    images: np.ndarray,
    labels: np.ndarray,
    rng: np.random.Generator,
    g_loss_mode: str = nets.NON_SATURATING,
) -> tuple[float, float]:
    """One discriminator update on real+fake, then one generator update.

    Returns the two loss values for logging.
    """
    n = len(labels)
    if n == 0:
        raise ValueError("empty training batch")
    k = gen.config.num_classes
    z = Tensor(rng.standard_normal((n, gen.config.noise_dim)))
    fake_labels = rng.integers(0, k, size=n)
    fake = gen.forward(z, fake_labels, train=True)

    # discriminator sees the fake batch as data, not as a function of the
    # generator, hence the detach
    T.zero_grads(gen.parameters())
    T.zero_grads(disc.parameters())
    d_real = disc.forward(images, labels)
    d_fake = disc.forward(fake.detach(), fake_labels)
    loss_d = nets.d_loss(d_real, d_fake)
    T.backward(loss_d)
    T.adam_step(disc.parameters(), opt_d)

    T.zero_grads(gen.parameters())
    T.zero_grads(disc.parameters())
    loss_g = nets.g_loss(disc.forward(fake, fake_labels), g_loss_mode)
    T.backward(loss_g)
    T.adam_step(gen.parameters(), opt_g)
    return loss_d.item(), loss_g.item()


def _batch_indices(rng: np.random.Generator, pool_size: int, batch_size: int) -> Iterator[np.ndarray]:
    """Shuffled epochs forever; batches span epoch boundaries so no sample
    is dropped and exhaustion never raises."""
    perm = rng.permutation(pool_size)
    pos = 0
    while True:
        take: list[np.ndarray] = []
        need = batch_size
        while need:
            if pos == pool_size:
                perm = rng.permutation(pool_size)
                pos = 0
            chunk = perm[pos : pos + need]
            take.append(chunk)
            pos += len(chunk)
            need -= len(chunk)
        yield np.concatenate(take) if len(take) > 1 else take[0]


def online_output(
    gen: nets.CondGenerator,
    disc: nets.CondDiscriminator,
    config: TrainConfig,
    images: np.ndarray,
    labels: np.ndarray,
    loss_log: list[tuple[float, float]] | None = None,
) -> Iterator[ModelSnapshot]:
    """Run the training loop, yielding frozen snapshots from the warmup
    iteration onward, every ``snapshot_every`` iterations.

    Snapshot parameter values are copies; continued training does not
    mutate an emitted snapshot.
    """
    rng = np.random.default_rng(config.seed)
    opt_g = AdamState(learning_rate=config.lr_g)
    opt_d = AdamState(learning_rate=config.lr_d)
    batches = _batch_indices(rng, len(labels), config.batch_size)
    for iteration in range(config.total_iterations):
        opt_g.learning_rate, opt_d.learning_rate = lr_schedule(iteration, config)
        idx = next(batches)
        d_val, g_val = train_step(
            gen, disc, opt_g, opt_d, images[idx], labels[idx], rng, config.g_loss_mode
        )
        if loss_log is not None:
            loss_log.append((d_val, g_val))
        past_warmup = iteration >= config.warmup_iterations
        if past_warmup and (iteration - config.warmup_iterations) % config.snapshot_every == 0:
            yield ModelSnapshot(iteration, gen.state_dict(), disc.state_dict(), g_val)


# ---------------------------------------------------------------------------
# snapshot serialization


def _write_record(fh, name: str, values: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(_NAME_LEN.pack(len(encoded)))
    fh.write(encoded)
    flat = np.ascontiguousarray(values, dtype="<f8").reshape(-1)
    fh.write(_COUNT.pack(flat.size))
    fh.write(flat.tobytes())


def save_params(path, iteration: int, records: dict[str, np.ndarray]) -> None:
    """Write named float64 arrays in the `SGSN` container layout."""
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, iteration))
        for name in records:
            _write_record(fh, name, records[name])


def load_params(path) -> tuple[int, dict[str, np.ndarray]]:
    """Read an `SGSN` container; values come back as flat float64 arrays."""
    with open(path, "rb") as fh:
        head = fh.read(_SNAP_HEADER.size)
        if len(head) < _SNAP_HEADER.size:
            raise SnapshotFormatError(f"{path}: file shorter than the {_SNAP_HEADER.size}-byte header")
        magic, version, iteration = _SNAP_HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotFormatError(f"{path}: bad magic {magic!r}, expected {SNAPSHOT_MAGIC!r}")
        if version != SNAPSHOT_VERSION:
            raise SnapshotFormatError(f"{path}: unsupported version {version}, expected {SNAPSHOT_VERSION}")
        records: dict[str, np.ndarray] = {}
        while True:
            raw = fh.read(_NAME_LEN.size)
            if not raw:
                break
            if len(raw) < _NAME_LEN.size:
                raise SnapshotFormatError(f"{path}: truncated record name length")
            (name_len,) = _NAME_LEN.unpack(raw)
            name = fh.read(name_len)
            if len(name) < name_len:
                raise SnapshotFormatError(f"{path}: truncated record name")
            raw = fh.read(_COUNT.size)
            if len(raw) < _COUNT.size:
                raise SnapshotFormatError(f"{path}: truncated value count")
            (count,) = _COUNT.unpack(raw)
            payload = fh.read(8 * count)
            if len(payload) < 8 * count:
                raise SnapshotFormatError(f"{path}: truncated values for {name.decode('utf-8')!r}")
            records[name.decode("utf-8")] = np.frombuffer(payload, dtype="<f8").copy()
    return iteration, records


def save_snapshot(path, snapshot: ModelSnapshot) -> None:
    """Persist a training snapshot (generator + discriminator + loss)."""
    records: dict[str, np.ndarray] = {}
    for name, values in snapshot.gen_state.items():
        records[_GEN_PREFIX + name] = values
    for name, values in snapshot.disc_state.items():
        records[_DISC_PREFIX + name] = values
    records[_META_G_LOSS] = np.array([snapshot.g_loss_at_snapshot])
    save_params(path, snapshot.iteration, records)


def _shaped(flat: np.ndarray, template: dict[str, np.ndarray] | None, name: str) -> np.ndarray:
    if template is None or name not in template:
        return flat
    return flat.reshape(template[name].shape)


def load_snapshot(
    path,
    gen_template: dict[str, np.ndarray] | None = None,
    disc_template: dict[str, np.ndarray] | None = None,
) -> ModelSnapshot:
    """Restore a snapshot; optional state-dict templates recover array
    shapes (the wire format stores flat values only)."""
    iteration, records = load_params(path)
    gen_state: dict[str, np.ndarray] = {}
    disc_state: dict[str, np.ndarray] = {}
    g_loss_val = float("nan")
    for name, values in records.items():
        if name.startswith(_GEN_PREFIX):
            short = name[len(_GEN_PREFIX):]
            gen_state[short] = _shaped(values, gen_template, short)
        elif name.startswith(_DISC_PREFIX):
            short = name[len(_DISC_PREFIX):]
            disc_state[short] = _shaped(values, disc_template, short)
        elif name == _META_G_LOSS:
            g_loss_val = float(values[0])
        else:
            raise SnapshotFormatError(f"{path}: unexpected record {name!r}")
    return ModelSnapshot(iteration, gen_state, disc_state, g_loss_val)
