"""Dataset ingestion and synthesis.

Readers for the two on-disk formats the experiments use (IDX images/labels
and the 3073-byte-record CIFAR-10 binary), matching writers so fixtures can
be produced in-process, standardization, and the synthetic regression task
sequence. Loaders are byte-deterministic and never touch the network.
"""

import struct
from dataclasses import dataclass, replace

import numpy as np

from .tensor import DTYPE, Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixels

GLOBAL = "global"
PER_FEATURE = "per-feature"


class FormatError(ValueError):
    """Malformed dataset file; the message names the offending byte offset."""


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    mean: np.ndarray | float | None = None
    std: np.ndarray | float | None = None

    def __len__(self):
        return len(self.inputs)

    def take(self, n):
        """First-n subset (desk-scale runs)."""
        if n is None or n >= len(self):
            return self
        return replace(self, inputs=self.inputs[:n], labels=self.labels[:n])


def _read_be32(f, path, offset):
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path}: truncated header at offset {offset}")
    return struct.unpack(">I", raw)[0], offset + 4


def read_idx(path):
    """Raw IDX payload: images (N, rows, cols) or labels (N,), still uint8."""
    with open(path, "rb") as f:
        offset = 0
        magic, offset = _read_be32(f, path, offset)
        if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
            raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0")
        count, offset = _read_be32(f, path, offset)
        if magic == IDX_IMAGES_MAGIC:
            rows, offset = _read_be32(f, path, offset)
            cols, offset = _read_be32(f, path, offset)
            shape = (count, rows, cols)
        else:
            shape = (count,)
        need = int(np.prod(shape))
        payload = f.read(need)
        if len(payload) != need:
            raise FormatError(f"{path}: expected {need} data bytes at offset {offset}, "
                              f"got {len(payload)}")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after offset {offset + need}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape)


def _labels_path_for(images_path):
    p = str(images_path)
    guess = p.replace("images", "labels").replace("idx3", "idx1")
    if guess == p:
        raise FormatError(f"cannot infer labels path from {p}; pass labels_path")
    return guess


def load_idx(images_path, labels_path=None):
    """IDX image+label pair as a Dataset with float pixels in [0, 1]."""
    if labels_path is None:
        labels_path = _labels_path_for(images_path)
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: not an image file")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: not a label file")
    if len(images) != len(labels):
        raise FormatError(f"image/label count mismatch: {len(images)} vs {len(labels)}")
    return Dataset(inputs=images.astype(DTYPE) / 255.0,
                   labels=labels.astype(np.int64))


def write_idx(images_path, labels_path, images, labels):
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise ValueError("IDX files store uint8 data")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def load_cifar10_binary(path):
    """One CIFAR-10 binary batch file -> Dataset of (N, 3, 32, 32) floats."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of "
                          f"{CIFAR_RECORD}-byte records")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(DTYPE) / 255.0
    return Dataset(inputs=images, labels=labels)


def load_cifar10_files(paths):
    parts = [load_cifar10_binary(p) for p in paths]
    return Dataset(inputs=np.concatenate([p.inputs for p in parts]),
                   labels=np.concatenate([p.labels for p in parts]))


def write_cifar10_binary(path, images, labels):
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise ValueError("CIFAR binary files store uint8 data")
    n = len(labels)
    records = np.empty((n, CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images.reshape(n, -1)
    with open(path, "wb") as f:
        f.write(records.tobytes())


def standardize(ds, mode=GLOBAL, stats=None):
    """Center/scale inputs; returns (dataset, stats) so test splits reuse train stats.

    Per-feature mode leaves zero-variance features centered but unscaled.
    """
    x = ds.inputs
    if stats is None:
        if mode == GLOBAL:
            mean, std = float(x.mean()), float(x.std())
            if std == 0.0:
                std = 1.0
        elif mode == PER_FEATURE:
            mean = x.mean(axis=0)
            std = x.std(axis=0)
            std = np.where(std == 0.0, 1.0, std)
        else:
            raise ValueError(f"unknown standardization mode {mode!r}")
        stats = (mean, std)
    mean, std = stats
    out = replace(ds, inputs=(x - mean) / std, mean=mean, std=std)
    return out, stats


@dataclass
class RegressionTask:
    name: str
    train_x: np.ndarray   # standardized, shape (N, 1)
    train_y: np.ndarray   # shape (N, 1)
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass
class RegressionTaskSeq:
    seed: int
    tasks: list


_TASK_FAMILIES = (
    ("cubic", (-4.0, -2.0), lambda x: (x + 3.0) ** 3),
    ("sine", (-1.0, 1.0), lambda x: np.sin(np.pi * x)),
    ("quadratic", (2.0, 4.0), lambda x: 2.0 * (x - 3.0) ** 2 - 1.0),
)


def make_regression_tasks(seed, n_train=100, n_test=100, noise_std=0.05):
    """Three 1-D scalar tasks over staggered input intervals, exact per seed."""
    rng = Rng(seed)
    tasks = []
    for i, (name, (lo, hi), fn) in enumerate(_TASK_FAMILIES):
        r = rng.child(i)
        half = (hi - lo) / 2.0
        mid = (lo + hi) / 2.0
        xs = mid + r.uniform_symmetric(half, n_train + n_test)
        ys = fn(xs)
        if noise_std > 0:
            ys = ys + r.normal(noise_std, xs.shape)
        mean, std = xs[:n_train].mean(), xs[:n_train].std()
        xs = (xs - mean) / std
        tasks.append(RegressionTask(
            name=name,
            train_x=xs[:n_train, None], train_y=ys[:n_train, None],
            test_x=xs[n_train:, None], test_y=ys[n_train:, None]))
    return RegressionTaskSeq(seed=seed, tasks=tasks)


def _smooth_prototypes(n_classes, shape, rng):
    """Per-class low-frequency patterns in [0, 1]."""
    channels = shape[0] if len(shape) == 3 else 1
    h, w = shape[-2], shape[-1]
    protos = []
    for c in range(n_classes):
        coarse = rng.child(c).normal(1.0, (channels, 7, 7))
        up = np.repeat(np.repeat(coarse, h // 7 + 1, axis=1),
                       w // 7 + 1, axis=2)[:, :h, :w]
        # light box blur to remove the blockiness
        blurred = up
        for ax in (1, 2):
            blurred = (blurred + np.roll(blurred, 1, axis=ax)
                       + np.roll(blurred, -1, axis=ax)) / 3.0
        lo, hi = blurred.min(), blurred.max()
        proto = (blurred - lo) / (hi - lo + 1e-12)
        protos.append(proto if len(shape) == 3 else proto[0])
    return protos


def make_synthetic_images(n_train, n_test, shape, n_classes, seed,
                          noise=0.25, max_shift=3):
    """Deterministic image classification set with class-prototype structure.

    Each class is a smooth random pattern; samples are amplitude-jittered,
    spatially shifted copies with pixel noise, quantized to uint8. Returns
    (train Dataset, test Dataset) with float inputs in [0, 1].
    """
    rng = Rng(seed)
    protos = _smooth_prototypes(n_classes, shape, rng.child(0))
    sets = []
    for si, n in enumerate((n_train, n_test)):
        r = rng.child(si + 1)
        labels = np.asarray(r.integers(n_classes, size=n), dtype=np.int64)
        amps = 1.0 + r.uniform_symmetric(0.3, n)
        shifts = r.integers(2 * max_shift + 1, size=(n, 2)) - max_shift
        pixel_noise = r.normal(noise, (n,) + tuple(shape))
        images = np.empty((n,) + tuple(shape), dtype=DTYPE)
        for i in range(n):
            img = protos[labels[i]] * amps[i]
            img = np.roll(img, (shifts[i][0], shifts[i][1]), axis=(-2, -1))
            images[i] = img
        images = np.clip(images + pixel_noise, 0.0, 1.0)
        images_u8 = np.round(images * 255.0).astype(np.uint8)
        sets.append(Dataset(inputs=images_u8.astype(DTYPE) / 255.0, labels=labels,
                            split="train" if si == 0 else "test"))
    return tuple(sets)
