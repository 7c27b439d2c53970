"""Dataset ingestion: IDX files, in-memory handles, minibatch iteration.

The IDX reader targets the MNIST file pair (image magic 0x00000803, label
magic 0x00000801, big-endian counts); any dataset in that container works.
Pixels are scaled by 1/255 into [0, 1] float32 with a channel axis added.
"""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class DatasetHandle:
    images: np.ndarray  # float32 in [0,1], (N, C, H, W) or (N, D)
    labels: np.ndarray  # int64
    split: str
    checksum: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConsistencyError(
                f"{len(self.images)} images vs {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, idx):
        return DatasetHandle(
            self.images[idx], self.labels[idx], self.split, self.checksum
        )


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated IDX file while reading {what}")
    return buf


def load_idx_dataset(image_path, label_path, split: str = "test") -> DatasetHandle:
    """Read an MNIST-format IDX image/label file pair."""
    digest = hashlib.sha256()
    with open(image_path, "rb") as f:
        head = _read_exact(f, 16, "image header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IMAGE_MAGIC:
            raise FormatError(f"bad image magic 0x{magic:08x}")
        raw = _read_exact(f, n * rows * cols, "image data")
        if f.read(1):
            raise FormatError("trailing bytes after image data")
        digest.update(head)
        digest.update(raw)
    with open(label_path, "rb") as f:
        head = _read_exact(f, 8, "label header")
        magic, n_labels = struct.unpack(">II", head)
        if magic != LABEL_MAGIC:
            raise FormatError(f"bad label magic 0x{magic:08x}")
        raw_labels = _read_exact(f, n_labels, "label data")
        if f.read(1):
            raise FormatError("trailing bytes after label data")
        digest.update(head)
        digest.update(raw_labels)
    if n != n_labels:
        raise ConsistencyError(f"image count {n} != label count {n_labels}")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, 1, rows, cols)
    images = images.astype(np.float32) / np.float32(255.0)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return DatasetHandle(images, labels, split, digest.hexdigest())


def write_idx_images(path, images_u8):
    """Write (N, H, W) uint8 images as an IDX3 file."""
    n, rows, cols = images_u8.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(np.ascontiguousarray(images_u8, dtype=np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def from_arrays(images, labels, split: str) -> DatasetHandle:
    """Wrap in-memory arrays; checksum covers the exact bytes."""
    images = np.ascontiguousarray(images, dtype=np.float32)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    digest = hashlib.sha256()
    digest.update(images.tobytes())
    digest.update(labels.tobytes())
    return DatasetHandle(images, labels, split, digest.hexdigest())


def make_blobs(n: int, centers, spread: float, seed: int) -> DatasetHandle:
    """Gaussian point clouds for fast training unit tests."""
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=np.float32)
    y = rng.integers(0, len(centers), size=n)
    x = centers[y] + rng.normal(0, spread, size=(n, centers.shape[1]))
    return from_arrays(x.astype(np.float32), y, "train")


def iterate_minibatches(data: DatasetHandle, batch_size: int, rng=None):
    """Yield (images, labels) minibatches; shuffled when rng is given."""
    order = np.arange(len(data))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        sel = order[start : start + batch_size]
        yield data.images[sel], data.labels[sel]
