"""Training data: a synthetic blob-classification task and MNIST in IDX format."""
import gzip
import os
import struct
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from tbn.tbn_data import tbn_logging
from tbn.tbn_error import BadIdxMagic, ShapeMismatch, TruncatedInput

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_UBYTE = 0x08

SYNTH_SIZE = 16
SYNTH_SIGMA = 0.15
BLOB_WIDTH = 1.5
BLOB_SPACING = 3


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 4:
            raise ShapeMismatch(
                "batch inputs must be (b, c, h, w), got {}".format(self.inputs.shape)
            )
        if self.targets.shape != (self.inputs.shape[0],):
            raise ShapeMismatch(
                "{} targets for {} inputs".format(self.targets.shape, self.inputs.shape[0])
            )


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ShapeMismatch(
                "{} images but {} labels".format(len(self.images), len(self.labels))
            )
        if len(self.labels) and not (
            0 <= self.labels.min() and self.labels.max() < self.classes
        ):
            raise ShapeMismatch("labels must lie in [0, {})".format(self.classes))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def batches(
        self, batch_size: int, rng: Optional[np.random.Generator] = None
    ) -> Iterator[Batch]:
        """minibatches in order, or shuffled with rng; the last one may be smaller"""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            yield Batch(self.images[idx], self.labels[idx])


def blob_centers(classes: int, size: int, rng: np.random.Generator) -> np.ndarray:
    grid = np.arange(BLOB_SPACING, size - BLOB_SPACING + 1, BLOB_SPACING)
    candidates = np.array([(y, x) for y in grid for x in grid])
    if classes > len(candidates):
        raise ValueError(
            "at most {} classes fit a {}x{} image, got {}".format(
                len(candidates), size, size, classes
            )
        )
    return candidates[rng.choice(len(candidates), size=classes, replace=False)]


def make_synth_dataset(
    seed: int,
    n: int,
    classes: int,
    sigma: float = SYNTH_SIGMA,
    size: int = SYNTH_SIZE,
) -> Dataset:
    """one Gaussian blob per class at a class-specific position, plus pixel noise sigma.

    Args:
        seed (int): generator seed; equal seeds give identical datasets
        n (int): number of images
        classes (int): number of classes, each gets n // classes or one more images
        sigma (float, optional): noise std. Defaults to SYNTH_SIGMA.
        size (int, optional): image height and width. Defaults to SYNTH_SIZE.

    Returns:
        Dataset: float32 images (n, 1, size, size) and int64 labels
    """
    if n < 1 or classes < 1:
        raise ValueError("n and classes must be >= 1, got n={} classes={}".format(n, classes))
    if sigma < 0:
        raise ValueError("sigma must be >= 0, got {}".format(sigma))
    rng = np.random.default_rng(seed)
    centers = blob_centers(classes, size, rng)

    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy[None] - centers[:, 0, None, None]) ** 2 + (xx[None] - centers[:, 1, None, None]) ** 2
    blobs = np.exp(-d2 / (2 * BLOB_WIDTH**2))

    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    images = blobs[labels] + sigma * rng.standard_normal((n, size, size))
    return Dataset(images[:, None].astype(np.float32), labels, classes)


### IDX ###


def _open_idx(path: str):
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def parse_idx(data: bytes, source: str = "<bytes>") -> np.ndarray:
    """decodes an unsigned-byte IDX array (big-endian header)"""
    if len(data) < 4:
        raise BadIdxMagic("{}: file too short for an IDX header".format(source))
    zero, dtype, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype != _IDX_UBYTE or ndim not in (1, 3):
        raise BadIdxMagic(
            "{}: bad IDX magic 0x{:08x}".format(source, struct.unpack(">I", data[:4])[0])
        )
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedInput("{}: IDX dimensions cut short".format(source), len(data))
    dims = struct.unpack(">{}I".format(ndim), data[4:header])
    count = int(np.prod(dims))
    if len(data) - header < count:
        raise TruncatedInput(
            "{}: IDX body has {} of {} bytes".format(source, len(data) - header, count), len(data)
        )
    if len(data) - header > count:
        raise BadIdxMagic("{}: {} trailing bytes".format(source, len(data) - header - count))
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(path: str) -> np.ndarray:
    with _open_idx(path) as f:
        return parse_idx(f.read(), path)


def _find_idx(directory: str, stem: str) -> str:
    dotted = stem.replace("-idx", ".idx")
    for name in (stem, stem + ".gz", dotted, dotted + ".gz"):
        path = os.path.join(directory, name)
        if os.path.isfile(path):
            return path
    raise FileNotFoundError("no {} file in {}".format(stem, directory))


def load_mnist(directory: str, limit: Optional[int] = None) -> Dataset:
    """the MNIST training split, pixels scaled to [0, 1]"""
    images = load_idx(_find_idx(directory, "train-images-idx3-ubyte"))
    labels = load_idx(_find_idx(directory, "train-labels-idx1-ubyte"))
    if images.ndim != 3 or labels.ndim != 1:
        raise BadIdxMagic("MNIST images must be 3-d and labels 1-d")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    tbn_logging.getLogger().info("loaded {} MNIST images from {}".format(len(labels), directory))
    return Dataset(
        (images[:, None] / 255.0).astype(np.float32), labels.astype(np.int64), 10
    )
