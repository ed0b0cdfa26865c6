"""Mini-batch training with ADADELTA, curve logging and checkpoints.

All randomness is counter based: the shuffle for epoch ``e`` and the crops of
iteration ``i`` come from generators seeded with ``(seed, e)`` and
``(seed, i)``.  Resuming from a checkpoint therefore only needs the seed and
the iteration counter to continue exactly where an uninterrupted run would be.

Checkpoint layout (little endian)::

    b"DSHD" | u32 version | u32 n | n bytes of JSON header
    | float32 blobs: weights and biases in build order, then optimizer state
    | u32 CRC-32 of everything before it
"""

import csv
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset
from .loss import LossKind, dssim, loss_and_grad
from .optim import Adadelta
from .runtime import assemble_input, infer, mono_colours
from .unet import Network, NetConfig, build
from .layers import ConvParams

MAGIC = b"DSHD"
CHECKPOINT_VERSION = 1
CURVE_FIELDS = ("iteration", "train_loss", "val_dssim")

_SHUFFLE, _CROP = 1, 2  # stream tags


class CheckpointFormatError(Exception):
    pass


class ConfigMismatchError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    net: NetConfig
    loss: LossKind = field(default_factory=LossKind)
    iterations: int = 1000
    batch_size: int = 8
    crop_size: int = 64
    validation_every: int = 100
    seed: int = 0
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.crop_size < 1 or self.crop_size % self.net.divisor or self.crop_size % 8:
            raise ValueError(f"crop_size {self.crop_size} must be divisible by "
                             f"{self.net.divisor} and by 8")
        if self.validation_every < 0 or self.checkpoint_every < 0:
            raise ValueError("cadences must be non-negative")

    def to_dict(self) -> dict:
        return {"net": self.net.to_dict(),
                "loss": {"variant": self.loss.variant, "mix_weight": self.loss.mix_weight},
                "iterations": self.iterations, "batch_size": self.batch_size,
                "crop_size": self.crop_size, "validation_every": self.validation_every,
                "seed": self.seed, "checkpoint_dir": self.checkpoint_dir,
                "checkpoint_every": self.checkpoint_every}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        if "net" not in d:
            raise ValueError("training config needs a 'net' section")
        d["net"] = NetConfig.from_dict(d["net"])
        loss = d.get("loss", {})
        d["loss"] = LossKind(loss) if isinstance(loss, str) else LossKind(**loss)
        return cls(**d)


# -- checkpoints ---------------------------------------------------------------

@dataclass
class Checkpoint:
    net: Network
    optimizer_state: list
    iteration: int
    rng: dict
    optimizer: dict
    train: dict | None = None


def save_checkpoint(path, net: Network, optimizer=None, iteration: int = 0,
                    rng: dict | None = None, train: dict | None = None):
    state = optimizer.state_arrays() if optimizer is not None else []
    header = {
        "net": net.config.to_dict(),
        "iteration": iteration,
        "rng": rng or {},
        "optimizer": ({"kind": "adadelta", "rho": optimizer.rho, "epsilon": optimizer.epsilon,
                       "steps": optimizer.steps} if optimizer is not None else {}),
        "state_blobs": len(state),
        "train": train,
    }
    head = json.dumps(header, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(head)), head]
    for a in net.parameters() + state:
        chunks.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    body = b"".join(chunks)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    tmp.replace(path)


def load_checkpoint(path, expected: NetConfig | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path} is not a checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointFormatError(f"{path}: checksum mismatch, file is corrupted")
    version, n = struct.unpack("<II", body[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(body[12:12 + n])
    config = NetConfig.from_dict(header["net"])
    if expected is not None and expected != config:
        raise ConfigMismatchError(f"checkpoint holds {config}, expected {expected}")
    template = build(config)
    shapes = [p.shape for p in template.parameters()]
    shapes += shapes * (header["state_blobs"] // max(len(shapes), 1))
    blobs, offset = [], 12 + n
    for shape in shapes:
        size = int(np.prod(shape)) * 4
        if offset + size > len(body):
            raise CheckpointFormatError(f"{path}: truncated parameter data")
        blobs.append(np.frombuffer(body, "<f4", size // 4, offset).astype(np.float32).reshape(shape))
        offset += size
    if offset != len(body):
        raise CheckpointFormatError(f"{path}: {len(body) - offset} unexpected trailing bytes")
    n_params = len(template.parameters())
    params = blobs[:n_params]
    convs = [ConvParams(params[2 * i], params[2 * i + 1], c.groups)
             for i, c in enumerate(template.convs)]
    return Checkpoint(Network(config, convs), blobs[n_params:], header["iteration"],
                      header["rng"], header["optimizer"], header.get("train"))


def restore_optimizer(ckpt: Checkpoint) -> Adadelta:
    opt = Adadelta(ckpt.net.parameters(), ckpt.optimizer.get("rho", 0.9),
                   ckpt.optimizer.get("epsilon", 1e-6))
    if ckpt.optimizer_state:
        opt.load_state_arrays(ckpt.optimizer_state)
    opt.steps = ckpt.optimizer.get("steps", 0)
    return opt


# -- data ----------------------------------------------------------------------

class _Examples:
    """Network-ready (input, target) pairs, one per record and colour run."""

    def __init__(self, records, config: NetConfig):
        if not records:
            raise ValueError("training split is empty")
        self.runs = mono_colours(config)
        self.inputs, self.targets = [], []
        for r in records:
            try:
                xs = [assemble_input(r.channels, config, c) for c in range(self.runs)]
            except ValueError as e:
                raise ValueError(f"record {r.id}: channel mismatch: {e}") from None
            t = r.target
            if t.shape[0] != config.out_channels * self.runs:
                raise ValueError(f"record {r.id}: target has {t.shape[0]} channels, network "
                                 f"produces {config.out_channels * self.runs}")
            self.inputs.append(xs)
            self.targets.append(t)

    def __len__(self):
        return len(self.inputs)

    def crop(self, index, colour, y, x, size, out_channels):
        t = self.targets[index]
        if self.runs > 1:
            t = t[colour * out_channels:(colour + 1) * out_channels]
        return (self.inputs[index][colour][:, y:y + size, x:x + size],
                t[:, y:y + size, x:x + size])


def _batch_indices(seed, iteration, batch_size, n):
    """Record indices for one iteration: consecutive slots of per-epoch permutations."""
    out, perms = [], {}
    for slot in range(iteration * batch_size, (iteration + 1) * batch_size):
        epoch = slot // n
        if epoch not in perms:
            perms[epoch] = np.random.default_rng([seed, _SHUFFLE, epoch]).permutation(n)
        out.append(int(perms[epoch][slot % n]))
    return out


def make_batch(examples: _Examples, config: TrainConfig, iteration: int):
    idx = _batch_indices(config.seed, iteration, config.batch_size, len(examples))
    rng = np.random.default_rng([config.seed, _CROP, iteration])
    size = config.crop_size
    xs, ts = [], []
    for i in idx:
        h, w = examples.targets[i].shape[-2:]
        if h < size or w < size:
            raise ValueError(f"image {h}x{w} is smaller than crop_size {size}")
        colour = int(rng.integers(examples.runs))
        y = int(rng.integers(h - size + 1))
        x = int(rng.integers(w - size + 1))
        a, b = examples.crop(i, colour, y, x, size, config.net.out_channels)
        xs.append(a)
        ts.append(b)
    return np.stack(xs), np.stack(ts)


def validation_dssim(net: Network, records) -> float:
    """Mean DSSIM of full-image inference over ``records``."""
    return float(np.mean([dssim(infer(net, r.channels), r.target) for r in records]))


# -- loop ----------------------------------------------------------------------

@dataclass
class TrainResult:
    net: Network
    optimizer: Adadelta
    curves: list
    iteration: int


def _check_writable(directory):
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        probe = d / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as e:
        raise OSError(f"checkpoint directory {d} is not writable: {e}") from e


def _read_curves(path, upto):
    rows = []
    if path is not None and Path(path).exists():
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                if int(row["iteration"]) <= upto:
                    rows.append(row)
    return rows


def _write_curves(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CURVE_FIELDS)
        w.writeheader()
        w.writerows(rows)


def checkpoint_path(directory, iteration) -> Path:
    return Path(directory) / f"ckpt_{iteration:07d}.dshd"


def train(config: TrainConfig, train_records, val_records=(), curves_path=None,
          resume: Checkpoint | None = None, net: Network | None = None,
          log=None) -> TrainResult:
    """Train ``config.iterations`` steps in total (counting those already in
    ``resume``).  Iteration numbers in curves and checkpoints are 1-based."""
    if config.validation_every and not val_records:
        raise ValueError("validation split is empty")
    examples = _Examples(train_records, config.net)
    if config.checkpoint_dir is not None:
        _check_writable(config.checkpoint_dir)

    if resume is not None:
        if resume.net.config != config.net:
            raise ConfigMismatchError("checkpoint network does not match the training config")
        if resume.rng.get("seed", config.seed) != config.seed:
            raise ConfigMismatchError("checkpoint was trained with a different seed")
        net, start = resume.net, resume.iteration
        opt = restore_optimizer(resume)
    else:
        net = net if net is not None else build(config.net, seed=config.seed)
        start = 0
        opt = Adadelta(net.parameters())
    params = net.parameters()
    rows = _read_curves(curves_path, start) if resume is not None else []

    for i in range(start, config.iterations):
        x, t = make_batch(examples, config, i)
        out, cache = net.forward(x, keep_intermediates=True)
        value, grad = loss_and_grad(config.loss, out, t)
        grads = [g for pair in net.backward(cache, grad) for g in pair]
        opt.step(params, grads)
        it = i + 1
        row = {"iteration": it, "train_loss": repr(float(value)), "val_dssim": ""}
        last = it == config.iterations
        if val_records and ((config.validation_every and it % config.validation_every == 0)
                            or last):
            row["val_dssim"] = repr(validation_dssim(net, val_records))
        rows.append(row)
        if log is not None and row["val_dssim"]:
            log(f"iteration={it} train_loss={value:.6f} val_dssim={float(row['val_dssim']):.6f}")
        if config.checkpoint_dir and ((config.checkpoint_every and it % config.checkpoint_every == 0)
                                      or last):
            save_checkpoint(checkpoint_path(config.checkpoint_dir, it), net, opt, it,
                            {"scheme": "counter", "seed": config.seed}, config.to_dict())
    if curves_path is not None:
        _write_curves(curves_path, rows)
    return TrainResult(net, opt, rows, max(start, config.iterations))


def train_from_dataset(config: TrainConfig, root, curves_path=None, resume=None, log=None):
    """Train on the ``train`` split of a dataset directory, validating on ``validation``."""
    names = list(config.net.attributes) or None
    train_records = dataset.load_split(root, "train", names)
    val_records = dataset.load_split(root, "validation", names)
    if not train_records:
        raise ValueError(f"dataset {root} has an empty train split")
    if not val_records and config.validation_every:
        raise ValueError(f"dataset {root} has an empty validation split")
    return train(config, train_records, val_records, curves_path, resume, log=log)


def smoothed(values, window: int = 100) -> np.ndarray:
    """Trailing-window moving average (the first value uses ``window`` items)."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.mean(keepdims=True) if len(v) else v
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window
