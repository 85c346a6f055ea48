"""Dataset ingestion: MNIST IDX files, CIFAR-10 binary batches, raw .snds tensors.

Loaders return images scaled to [0, 1] on a 32 x 32 grid. Per-channel
standardization is a separate step whose statistics come from the training
split only (:class:`Standardizer`).
"""
import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
N_CLASSES = 10


class DataError(ValueError):
    """Malformed or inconsistent dataset files."""


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # float64 (N, C, 32, 32)
    labels: np.ndarray  # int64 (N,)
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got {self.images.shape}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise DataError(f"labels must lie in [0, {N_CLASSES})")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]


def _open(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, magic, ndim):
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4 + 4 * ndim:
        raise DataError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise DataError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    need = int(np.prod(dims))
    payload = raw[4 + 4 * ndim:]
    if len(payload) < need:
        raise DataError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload, dtype=np.uint8, count=need).reshape(dims)


def read_idx_raw(images_path, labels_path):
    """Raw uint8 images (N, 28, 28) and labels (N,)."""
    images = _read_idx(images_path, IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, LABEL_MAGIC, 1)
    if len(images) != len(labels):
        raise DataError(f"image file has {len(images)} items, label file has {len(labels)}")
    if len(labels) and labels.max() >= N_CLASSES:
        raise DataError(f"label value {int(labels.max())} out of range")
    return images, labels


def load_idx(images_path, labels_path, split="train"):
    """MNIST-style IDX pair, zero-padded to 32 x 32 (centered) and scaled to [0, 1]."""
    images, labels = read_idx_raw(images_path, labels_path)
    n, h, w = images.shape
    if h > 32 or w > 32:
        raise DataError(f"images of {h}x{w} do not fit a 32x32 canvas")
    top, left = (32 - h) // 2, (32 - w) // 2
    out = np.zeros((n, 1, 32, 32))
    out[:, 0, top:top + h, left:left + w] = images / 255.0
    return Dataset(out, labels.astype(np.int64), split)


def read_cifar10_raw(paths):
    images, labels = [], []
    for path in paths:
        with _open(path) as f:
            raw = f.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if rec[:, 0].max() > 9:
            raise DataError(f"{path}: label {int(rec[:, 0].max())} out of range")
        labels.append(rec[:, 0])
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    if not images:
        raise DataError("no CIFAR-10 batch files given")
    return np.concatenate(images), np.concatenate(labels)


def load_cifar10(paths, split="train"):
    """CIFAR-10 binary batches: 1 label byte then R, G, B planes of 32 x 32."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images, labels = read_cifar10_raw(paths)
    return Dataset(images / 255.0, labels.astype(np.int64), split)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}


def _find(directory, name):
    for candidate in (directory / name, directory / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{name}[.gz] not found in {directory}")


def mnist_paths(directory, split):
    directory = Path(directory)
    return [_find(directory, n) for n in MNIST_FILES[split]]


def cifar10_paths(directory, split):
    directory = Path(directory)
    sub = directory / "cifar-10-batches-bin"
    if sub.is_dir():
        directory = sub
    return [_find(directory, n) for n in CIFAR_FILES[split]]


def load_mnist(directory, split="train"):
    return load_idx(*mnist_paths(directory, split), split=split)


def load_cifar10_dir(directory, split="train"):
    return load_cifar10(cifar10_paths(directory, split), split=split)


@dataclass(frozen=True)
class Standardizer:
    """Per-channel (x - mean) / std with statistics from one split."""
    mean: tuple
    std: tuple

    @classmethod
    def fit(cls, dataset):
        m = dataset.images.mean(axis=(0, 2, 3))
        s = dataset.images.std(axis=(0, 2, 3))
        s = np.where(s > 0, s, 1.0)
        return cls(tuple(float(v) for v in m), tuple(float(v) for v in s))

    def _arrays(self):
        return np.array(self.mean)[None, :, None, None], np.array(self.std)[None, :, None, None]

    def apply(self, dataset):
        m, s = self._arrays()
        return replace(dataset, images=(dataset.images - m) / s)

    def invert(self, dataset):
        m, s = self._arrays()
        return replace(dataset, images=dataset.images * s + m)


def to_bytes(images01):
    """[0, 1] images back to the uint8 values they were read from."""
    return np.rint(np.asarray(images01) * 255.0).astype(np.uint8)


def batches(dataset, batch_size, seed=None):
    """Yield (images, labels) minibatches; shuffled by a seeded permutation
    when ``seed`` is given. The last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    n = len(dataset)
    order = np.arange(n) if seed is None else rng.generator(seed, rng.SHUFFLE).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def subset(dataset, n_per_class, seed):
    """Class-balanced subset with exactly ``n_per_class`` examples per class
    present in ``dataset``, kept in original order."""
    g = rng.generator(seed, rng.SUBSET)
    chosen = []
    for c in range(N_CLASSES):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 0:
            continue
        if idx.size < n_per_class:
            raise DataError(f"class {c} has {idx.size} examples, {n_per_class} requested")
        chosen.append(g.choice(idx, size=n_per_class, replace=False))
    keep = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)
    return Dataset(dataset.images[keep], dataset.labels[keep], dataset.split)


# -- .snds raw tensor import -------------------------------------------------
#
#   b"SNDS" | version u8 | u32 LE N, C, H, W | N label bytes | float64 LE images

SNDS_MAGIC = b"SNDS"


def save_snds(dataset, path):
    from .io import atomic_write_bytes
    n, c, h, w = dataset.images.shape
    body = SNDS_MAGIC + struct.pack("<B4I", 1, n, c, h, w)
    body += dataset.labels.astype(np.uint8).tobytes()
    body += np.ascontiguousarray(dataset.images, dtype="<f8").tobytes()
    atomic_write_bytes(path, body)


def load_snds(path, split="train"):
    with _open(path) as f:
        raw = f.read()
    if raw[:4] != SNDS_MAGIC:
        raise DataError(f"{path}: not an .snds file")
    if len(raw) < 21:
        raise DataError(f"{path}: truncated header")
    version, n, c, h, w = struct.unpack_from("<B4I", raw, 4)
    if version != 1:
        raise DataError(f"{path}: unsupported .snds version {version}")
    if (h, w) != (32, 32):
        raise DataError(f"{path}: images must be 32x32, got {h}x{w}")
    need = 21 + n + 8 * n * c * h * w
    if len(raw) != need:
        raise DataError(f"{path}: expected {need} bytes, got {len(raw)}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=21).astype(np.int64)
    images = np.frombuffer(raw, dtype="<f8", offset=21 + n).reshape(n, c, h, w).astype(np.float64)
    return Dataset(images, labels, split)
