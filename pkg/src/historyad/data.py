"""Datasets: seeded Gaussian-mixture toys and IDX image files.

Pixel bytes are mapped to [-1, 1] by ``x / 127.5 - 1``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError

PIXEL_SCALE = 127.5

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class DatasetHandle:
    """Train rows for fitting, labelled test rows (1 = anomalous) for evaluation."""

    dim: int
    train: np.ndarray
    test: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    test_labels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.float64).reshape(-1, self.dim)
        self.test = np.asarray(self.test, dtype=np.float64).reshape(-1, self.dim)
        self.test_labels = np.asarray(self.test_labels, dtype=int).ravel()
        if len(self.train) == 0:
            raise ContractError("dataset has no training samples")
        if len(self.test) != len(self.test_labels):
            raise ContractError("test samples and labels differ in length")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` training rows drawn uniformly with replacement."""
        return self.train[rng.integers(0, len(self.train), size=n)]

    def batches(self, batch_size: int, seed: int):
        """Endless deterministic stream of reshuffled training batches."""
        rng = np.random.default_rng(seed)
        while True:
            order = rng.permutation(len(self.train))
            for start in range(0, len(order) - batch_size + 1, batch_size):
                yield self.train[order[start:start + batch_size]]


@dataclass(frozen=True)
class MixtureSpec:
    """Isotropic Gaussian mixture; a component with std 0 is a point mass."""

    weights: tuple[float, ...]
    means: tuple[tuple[float, ...], ...]
    stds: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        m = tuple(tuple(float(v) for v in np.atleast_1d(mu)) for mu in self.means)
        s = tuple(float(v) for v in self.stds)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)
        if not w or not len(w) == len(m) == len(s):
            raise ContractError("weights, means and stds need the same non-zero length")
        if len({len(mu) for mu in m}) != 1:
            raise ContractError("all component means need the same dimension")
        if any(v < 0 for v in w) or not sum(w) > 0:
            raise ContractError("weights must be >= 0 with a positive sum")
        if any(v < 0 for v in s):
            raise ContractError("stds must be >= 0")

    @classmethod
    def normal(cls, mean=0.0, std=1.0) -> "MixtureSpec":
        return cls((1.0,), (np.atleast_1d(mean),), (std,))

    @property
    def dim(self) -> int:
        return len(self.means[0])

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        w = np.asarray(self.weights) / sum(self.weights)
        cum = np.cumsum(w)
        comp = np.minimum(np.searchsorted(cum, rng.random(n), side="right"), len(w) - 1)
        noise = rng.standard_normal((n, self.dim))
        means = np.asarray(self.means)[comp]
        stds = np.asarray(self.stds)[comp][:, None]
        return means + stds * noise


def synth_dataset(
    spec: MixtureSpec,
    seed: int,
    n_train: int = 10_000,
    n_test: int = 2_000,
    anomaly_shift=None,
) -> DatasetHandle:
    """Seeded train/test draws from ``spec``.

    With ``anomaly_shift`` the test set gets a second, equally sized block of
    fresh normal draws translated by the shift and labelled anomalous.
    """
    if n_train < 1 or n_test < 0:
        raise ContractError("need n_train >= 1 and n_test >= 0")
    rng = np.random.default_rng(seed)
    train = spec.draw(n_train, rng)
    test = spec.draw(n_test, rng)
    labels = np.zeros(n_test, dtype=int)
    if anomaly_shift is not None:
        shift = np.broadcast_to(np.asarray(anomaly_shift, dtype=np.float64), (spec.dim,))
        test = np.vstack([test, spec.draw(n_test, rng) + shift])
        labels = np.concatenate([labels, np.ones(n_test, dtype=int)])
    return DatasetHandle(spec.dim, train, test, labels)


def read_idx(data: bytes, expect_magic: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX payload into an array of its declared shape."""
    if len(data) < 4:
        raise FormatError("truncated IDX header", offset=len(data))
    zero, dtype, ndim = struct.unpack(">HBB", data[:4])
    magic = (dtype << 8) | ndim
    if zero != 0 or dtype != 0x08 or ndim < 1:
        raise FormatError(f"bad IDX magic 0x{zero:04x}{dtype:02x}{ndim:02x}", offset=0)
    if expect_magic is not None and magic != expect_magic:
        raise FormatError(f"IDX magic {magic}, expected {expect_magic}", offset=0)
    end = 4 + 4 * ndim
    if len(data) < end:
        raise FormatError("truncated IDX dimension header", offset=len(data))
    dims = struct.unpack(f">{ndim}I", data[4:end])
    size = int(np.prod(dims, dtype=np.int64))
    if len(data) < end + size:
        raise FormatError(f"truncated IDX body: {len(data) - end} of {size} bytes", offset=len(data))
    if len(data) > end + size:
        raise FormatError("trailing bytes after IDX body", offset=end + size)
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=end).reshape(dims)


def load_idx(
    images_path,
    labels_path,
    anomalous_labels=(),
    test_fraction: float = 0.2,
    seed: int = 0,
) -> DatasetHandle:
    """Flattened images scaled to [-1, 1], split into normal train/test.

    Samples whose label is in ``anomalous_labels`` never enter training; they
    are appended to the test set with label 1.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ContractError("test_fraction must lie in [0, 1)")
    with open(images_path, "rb") as f:
        images = read_idx(f.read(), IDX_IMAGES_MAGIC)
    with open(labels_path, "rb") as f:
        labels = read_idx(f.read(), IDX_LABELS_MAGIC)
    if len(images) == 0:
        raise ContractError("IDX image file holds no images")
    if len(labels) != len(images):
        raise ContractError(f"{len(images)} images but {len(labels)} labels")
    x = images.reshape(len(images), -1).astype(np.float64) / PIXEL_SCALE - 1.0
    anomalous = np.isin(labels, np.asarray(list(anomalous_labels), dtype=np.int64))
    normal = x[~anomalous]
    if len(normal) == 0:
        raise ContractError("label filter leaves no normal samples")
    order = np.random.default_rng(seed).permutation(len(normal))
    n_test = int(round(test_fraction * len(normal)))
    if n_test >= len(normal):
        raise ContractError("test split leaves no training samples")
    test = np.vstack([normal[order[:n_test]], x[anomalous]])
    test_labels = np.concatenate([np.zeros(n_test, dtype=int), np.ones(int(anomalous.sum()), dtype=int)])
    return DatasetHandle(x.shape[1], normal[order[n_test:]], test, test_labels)
