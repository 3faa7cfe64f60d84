"""Dataset loading, synthetic data generation and deterministic batching.

MNIST comes as IDX files (big-endian 32-bit header words: magic, count,
then rows/cols for images); `.gz` paths are decompressed transparently
since that is how the canonical distribution ships. Pixels are scaled to
[0,1] and standardized with the fixed constants mean=0.1307, std=0.3081.
"""

import gzip
import struct

import numpy as np

from .tensor import Rng

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

MNIST_MEAN = 0.1307
MNIST_STD = 0.3081


class BadMagicError(ValueError):
    """IDX header magic does not match the expected file type."""


class TruncatedFileError(ValueError):
    """IDX file ended before the declared payload."""


class DimensionMismatchError(ValueError):
    """Image and label files declare different item counts."""


class LabeledDataset:
    """Images (N,C,H,W) float64 with integer labels in [0, class_count)."""

    def __init__(self, images, labels, class_count):
        images = np.asarray(images, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be (N,C,H,W), got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise DimensionMismatchError(
                f"{images.shape[0]} images but {labels.shape[0]} labels")
        if images.shape[0] < 1:
            raise ValueError("dataset must hold at least one example")
        if labels.min() < 0 or labels.max() >= class_count:
            raise ValueError(f"labels must lie in [0,{class_count})")
        if not np.all(np.isfinite(images)):
            raise ValueError("images contain non-finite values")
        self.images = images
        self.labels = labels
        self.class_count = class_count

    def __len__(self):
        return self.images.shape[0]

    def subset(self, indices):
        return LabeledDataset(self.images[indices], self.labels[indices], self.class_count)

    def sample(self, n, seed):
        """Deterministic random subset of n examples (all of them if n >= N)."""
        if n is None or n >= len(self):
            return self
        perm = Rng(seed).permutation(len(self))
        return self.subset(np.sort(perm[:n]))


def _open_maybe_gzip(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic, header_dims):
    with _open_maybe_gzip(path) as f:
        header = f.read(4 * (2 + header_dims))
        if len(header) < 4 * (2 + header_dims):
            raise TruncatedFileError(f"{path}: header truncated")
        words = struct.unpack(f">{2 + header_dims}i", header)
        magic, count, dims = words[0], words[1], words[2:]
        if magic != expected_magic:
            raise BadMagicError(f"{path}: magic {magic}, expected {expected_magic}")
        payload_len = count * int(np.prod(dims)) if dims else count
        payload = f.read(payload_len)
        if len(payload) < payload_len:
            raise TruncatedFileError(
                f"{path}: payload holds {len(payload)} bytes, header declares {payload_len}")
        data = np.frombuffer(payload, dtype=np.uint8)
    return data.reshape((count,) + dims), count


def load_mnist_idx(image_path, label_path):
    """Parse an IDX image/label file pair into a standardized dataset."""
    images, n_img = _read_idx(image_path, IMAGE_MAGIC, header_dims=2)
    labels, n_lab = _read_idx(label_path, LABEL_MAGIC, header_dims=0)
    if n_img != n_lab:
        raise DimensionMismatchError(f"{n_img} images but {n_lab} labels")
    pixels = images.astype(np.float64)[:, None, :, :] / 255.0
    pixels = (pixels - MNIST_MEAN) / MNIST_STD
    return LabeledDataset(pixels, labels.astype(np.int64), class_count=10)


def synthetic_gaussians(classes, per_class, dim_spatial, seed, separation=3.0):
    """Gaussian class clusters rendered as single-channel square images.

    Class c is N(mu_c, I) in dim_spatial^2 dimensions. The means sit on a
    fixed simplex arrangement: mu_c = separation * v_c with v_c the c-th
    orthonormal cosine-basis row, so every pair of classes is separated
    by the same distance separation*sqrt(2) and the signal is spread
    smoothly over all pixels. Images come out as (1, d, d); everything is
    deterministic given seed.
    """
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    dim = dim_spatial * dim_spatial
    if classes > dim:
        raise ValueError(f"{classes} classes need dim_spatial^2 >= classes, got {dim}")
    rng = Rng(seed)
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    grid = np.arange(dim)
    means = np.stack([np.sqrt(2.0 / dim) * np.cos(np.pi * (c + 1) * (grid + 0.5) / dim)
                      for c in range(classes)]) * separation
    x = rng.normal(0.0, 1.0, (n, dim)) + means[labels]
    images = x.reshape(n, 1, dim_spatial, dim_spatial)
    return LabeledDataset(images, labels, class_count=classes)


class BatchIterator:
    """Deterministic shuffled batches; every index appears exactly once per epoch.

    The permutation is keyed by (seed, epoch), so re-running an epoch
    reproduces its batches and different epochs get different orders. The
    final short batch is kept.
    """

    def __init__(self, dataset, batch_size, seed):
        if len(dataset) < 1:
            raise ValueError("dataset is empty")
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0

    def epoch_permutation(self, epoch):
        return Rng(self.seed).child(epoch).permutation(len(self.dataset))

    def batches(self, epoch=None):
        """Yield (images, labels) covering the dataset once."""
        if epoch is None:
            epoch = self.epoch
            self.epoch += 1
        perm = self.epoch_permutation(epoch)
        for start in range(0, len(perm), self.batch_size):
            idx = perm[start:start + self.batch_size]
            yield self.dataset.images[idx], self.dataset.labels[idx]
