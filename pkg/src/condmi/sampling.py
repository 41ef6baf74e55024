"""Datasets of (x, y, z) triples and the batch constructions feeding the
density-ratio classifier.

Two kinds of batches are drawn from a dataset:

* a *joint* batch of triples sampled uniformly without replacement, and
* a *product* batch that emulates sampling from p(x|z) p(y,z): anchor
  pairs (y_l, z_l) are drawn without replacement and each anchor is
  combined with the x values of the k nearest neighbors of z_l
  (Euclidean distance, exact search, ties broken by ascending index).

All draws are deterministic given a seed. ``RNG_SCHEME`` names the
seed-to-stream mapping so recorded results stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, InputError

RNG_SCHEME = "numpy-seedsequence-pcg64-v1"

SeedLike = "int | np.random.SeedSequence | np.random.Generator"


def _as_matrix(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"{name} must be 1- or 2-dimensional, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite entries")
    arr = np.ascontiguousarray(arr).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of n triples (x, y, z) with fixed dimensions."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _as_matrix(self.x, "x"))
        object.__setattr__(self, "y", _as_matrix(self.y, "y"))
        object.__setattr__(self, "z", _as_matrix(self.z, "z"))
        if not (self.x.shape[0] == self.y.shape[0] == self.z.shape[0]):
            raise InputError(
                "x, y, z must hold the same number of samples, got "
                f"{self.x.shape[0]}, {self.y.shape[0]}, {self.z.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dx(self) -> int:
        return self.x.shape[1]

    @property
    def dy(self) -> int:
        return self.y.shape[1]

    @property
    def dz(self) -> int:
        return self.z.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.dx + self.dy + self.dz

    def features(self) -> np.ndarray:
        """Stacked [x | y | z] matrix of shape (n, dx+dy+dz)."""
        return np.hstack([self.x, self.y, self.z])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.x[idx], self.y[idx], self.z[idx])


@dataclass(frozen=True)
class BatchPair:
    """Equal-size joint-class and product-class batches.

    ``k`` records the neighbor count used to build the product batch and
    must divide the batch size (the product batch is assembled from
    b/k anchors).
    """

    joint: Dataset
    prod: Dataset
    k: int

    def __post_init__(self):
        if self.joint.n != self.prod.n:
            raise ConfigurationError(
                f"joint and prod batches differ in size: {self.joint.n} vs {self.prod.n}"
            )
        if self.joint.n == 0:
            raise InputError("batches must be non-empty")
        if self.k < 1 or self.joint.n % self.k:
            raise ConfigurationError(f"k={self.k} must divide the batch size {self.joint.n}")

    @property
    def b(self) -> int:
        return self.joint.n

    def features(self) -> np.ndarray:
        """Stacked features, joint rows first then prod rows (2b, d)."""
        return np.vstack([self.joint.features(), self.prod.features()])

    def labels(self) -> np.ndarray:
        """Class labels matching :meth:`features`: 1 for joint, 0 for prod."""
        return np.concatenate([np.ones(self.b), np.zeros(self.b)])


def split_dataset(data: Dataset, train_fraction: float, seed) -> tuple[Dataset, Dataset]:
    """Disjoint random partition into (train, test) of sizes
    (floor(n * train_fraction), remainder)."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    n_train = int(np.floor(data.n * train_fraction))
    return data.subset(perm[:n_train]), data.subset(perm[n_train:])


def sample_joint_batch(data: Dataset, b: int, seed) -> Dataset:
    """Draw b triples uniformly without replacement."""
    if not 1 <= b <= data.n:
        raise InputError(f"batch size b={b} must be in [1, n={data.n}]")
    rng = np.random.default_rng(seed)
    idx = rng.choice(data.n, size=b, replace=False)
    return data.subset(idx)


def _sq_dists(z: np.ndarray, anchor_z: np.ndarray) -> np.ndarray:
    diff = z - anchor_z
    return (diff * diff).sum(axis=1)


def _smallest_k(d2: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest values, ties broken by ascending index.

    Equivalent to a stable argsort prefix but O(n) via a partition around
    the k-th distance.
    """
    n = d2.shape[0]
    if k >= n:
        return np.argsort(d2, kind="stable")[:k]
    kth = np.partition(d2, k - 1)[k - 1]
    cand = np.flatnonzero(d2 <= kth)
    cand = cand[np.argsort(d2[cand], kind="stable")]
    return cand[:k]


def knn_indices(data: Dataset, anchor_index: int, k: int) -> np.ndarray:
    """Exact k nearest neighbors of z[anchor_index] among all z vectors.

    The anchor itself is a distance-0 neighbor. Returns indices ordered by
    (distance, index) ascending.
    """
    if not 1 <= k <= data.n:
        raise InputError(f"k={k} must be in [1, n={data.n}]")
    if not 0 <= anchor_index < data.n:
        raise InputError(f"anchor_index={anchor_index} out of range [0, {data.n})")
    d2 = _sq_dists(data.z, data.z[anchor_index])
    return _smallest_k(d2, k)


def prod_batch_from_anchors(
    data: Dataset, anchor_indices, k: int, include_anchor: bool = True
) -> Dataset:
    """Product-class batch for explicit anchors: every anchor (y_l, z_l)
    contributes k triples (x_j, y_l, z_l) with j ranging over the k-NN
    index set of z_l."""
    anchors = np.asarray(anchor_indices, dtype=np.int64)
    max_k = data.n if include_anchor else data.n - 1
    if not 1 <= k <= max_k:
        raise InputError(f"k={k} must be in [1, {max_k}] for n={data.n} "
                         f"(include_anchor={include_anchor})")
    neighbors = np.empty((anchors.shape[0], k), dtype=np.int64)
    for row, anchor in enumerate(anchors):
        d2 = _sq_dists(data.z, data.z[anchor])
        if not include_anchor:
            d2 = d2.copy()
            d2[anchor] = np.inf
        neighbors[row] = _smallest_k(d2, k)
    x = data.x[neighbors.ravel()]
    y = np.repeat(data.y[anchors], k, axis=0)
    z = np.repeat(data.z[anchors], k, axis=0)
    return Dataset(x, y, z)


def sample_prod_batch(
    data: Dataset, b: int, k: int, seed, include_anchor: bool = True
) -> Dataset:
    """Draw a product-class batch of b triples via m = b/k random anchors."""
    if k < 1 or b % k:
        raise ConfigurationError(f"k={k} must divide the batch size b={b}")
    m = b // k
    if m > data.n:
        raise InputError(f"need m={m} anchors but the dataset holds only n={data.n} samples")
    rng = np.random.default_rng(seed)
    anchors = rng.choice(data.n, size=m, replace=False)
    return prod_batch_from_anchors(data, anchors, k, include_anchor)


def sample_batch_pair(
    data: Dataset, b: int, k: int, seed, include_anchor: bool = True
) -> BatchPair:
    """Draw a joint batch and a product batch of common size b."""
    rng = np.random.default_rng(seed)
    joint = sample_joint_batch(data, b, rng)
    prod = sample_prod_batch(data, b, k, rng, include_anchor)
    return BatchPair(joint=joint, prod=prod, k=k)


def save_csv(data: Dataset, path) -> None:
    """Write the dataset as CSV with header x_0..,y_0..,z_0.. (one row per
    triple, full float64 precision)."""
    names = (
        [f"x_{i}" for i in range(data.dx)]
        + [f"y_{i}" for i in range(data.dy)]
        + [f"z_{i}" for i in range(data.dz)]
    )
    np.savetxt(
        path,
        data.features(),
        delimiter=",",
        header=",".join(names),
        comments="",
        fmt="%.17g",
    )


def load_csv(path) -> Dataset:
    """Read a dataset written by :func:`save_csv`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
    names = header.split(",")
    dims = {"x": 0, "y": 0, "z": 0}
    for pos, name in enumerate(names):
        prefix, _, index = name.partition("_")
        if prefix not in dims or not index.isdigit():
            raise InputError(f"unexpected CSV column {name!r}")
        if int(index) != dims[prefix]:
            raise InputError(f"CSV columns out of order near {name!r}")
        if prefix == "y" and dims["z"] or prefix == "x" and (dims["y"] or dims["z"]):
            raise InputError(f"CSV columns out of order near {name!r}")
        dims[prefix] += 1
    if not (dims["x"] and dims["y"] and dims["z"]):
        raise InputError("CSV must contain x_*, y_* and z_* columns")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != len(names):
        raise InputError(
            f"CSV rows have {table.shape[1]} fields, header names {len(names)}"
        )
    dx, dy = dims["x"], dims["y"]
    return Dataset(table[:, :dx], table[:, dx : dx + dy], table[:, dx + dy :])
