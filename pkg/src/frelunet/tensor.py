"""Dense float64 tensors and the seeded random source every other module uses.

Tensors are plain numpy float64 arrays in row-major order. Everything is
64-bit because the gradient checks downstream run at 1e-6 tolerances.
Randomness always flows through :class:`Rng`, which pins numpy's Philox
counter-based bit generator: the same seed produces the same stream on
every platform, which is what makes whole experiment runs reproducible.
"""

import numpy as np


class InvalidShapeError(ValueError):
    """A shape with a non-positive dimension (or no dimensions at all)."""


def check_shape(shape):
    """Validate and normalize a shape to a tuple of positive ints."""
    dims = tuple(int(d) for d in shape)
    if len(dims) == 0:
        raise InvalidShapeError("shape must have at least one dimension")
    if any(d < 1 for d in dims):
        raise InvalidShapeError(f"all dimensions must be >= 1, got {dims}")
    return dims


def tensor_full(shape, value):
    """New tensor of `shape` with every element equal to `value`."""
    return np.full(check_shape(shape), float(value), dtype=np.float64)


def as_tensor(data):
    """Copy arbitrary array-like data into a float64 tensor."""
    return np.array(data, dtype=np.float64)


class Rng:
    """Deterministic random source (Philox counter-based generator).

    Identical (seed, key) gives an identical stream across runs and
    platforms. `child(*key)` derives an independent stream, so subsystems
    (init, dropout, batch shuffling, ...) cannot perturb each other's
    randomness no matter how many draws each makes.
    """

    def __init__(self, seed, _key=()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in _key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *key):
        return Rng(self.seed, self.key + key)

    def normal(self, mean, std, shape):
        return self._gen.normal(mean, std, size=shape)

    def uniform(self, shape):
        return self._gen.random(size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, size=shape)


def sample_gaussian(rng, shape, mean=0.0, variance=1.0):
    """I.i.d. normal draws with the given mean and variance.

    variance == 0 degenerates to a constant tensor; negative variance is
    rejected.
    """
    dims = check_shape(shape)
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    if variance == 0:
        return tensor_full(dims, mean)
    return rng.normal(mean, np.sqrt(variance), dims)


def matmul(a, b):
    """Matrix product of two rank-2 tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise InvalidShapeError(f"matmul needs rank-2 operands, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise InvalidShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def reduce_stats(t, axes):
    """Population mean and variance (divide by N) over the given axes."""
    t = np.asarray(t, dtype=np.float64)
    axes = tuple(int(ax) for ax in axes)
    if len(axes) == 0:
        raise ValueError("reduce_stats needs at least one axis")
    for ax in axes:
        if not -t.ndim <= ax < t.ndim:
            raise InvalidShapeError(f"axis {ax} out of range for rank-{t.ndim} tensor")
    mean = t.mean(axis=axes)
    var = t.var(axis=axes)  # numpy default ddof=0 == population variance
    return mean, var
