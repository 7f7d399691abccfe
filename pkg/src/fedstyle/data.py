"""Datasets, CSV ingestion, train/test/public splitting and client partitioners."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InputError, ParseError

SYNTHETIC_MEAN_NORM = 3.0


@dataclass
class Dataset:
    """Labeled feature rows. ``x`` is ``(n, d)`` float64, ``y`` is ``(n,)`` int."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise InputError(f"inconsistent dataset shapes x={self.x.shape} y={self.y.shape}")
        if self.num_classes < 1:
            raise InputError("num_classes must be >= 1")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise InputError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.x)):
            raise InputError("features must be finite")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.num_classes)

    def of_class(self, c: int) -> Dataset:
        return self.subset(np.flatnonzero(self.y == c))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)

    @classmethod
    def concat(cls, parts: list[Dataset]) -> Dataset:
        if not parts:
            raise InputError("nothing to concatenate")
        return cls(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
            max(p.num_classes for p in parts),
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    public_fraction_of_train: float = 0.1
    seed: int = 0
    public_overlaps_clients: bool = False

    def __post_init__(self) -> None:
        for name in ("train_fraction", "public_fraction_of_train"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise InputError(f"{name} must be in (0, 1), got {val}")


class Split(NamedTuple):
    train: list[Dataset]  # per class, public rows removed unless overlapping
    test: list[Dataset]  # per class
    public: Dataset


@dataclass
class Partition:
    """Per-client index lists into a pooled training set."""

    client_indices: list[np.ndarray]

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)

    def sizes(self) -> list[int]:
        return [len(ix) for ix in self.client_indices]


def generate_synthetic(
    num_classes: int,
    n_per_class: int,
    dim: int,
    sigma: float,
    seed: int,
) -> Dataset:
    """Gaussian clusters around class means of norm 3, rows grouped by class."""
    if num_classes < 2:
        raise InputError("need at least 2 classes")
    if n_per_class < 10:
        raise InputError("need at least 10 samples per class")
    if dim < 1:
        raise InputError("dim must be >= 1")
    if not np.isfinite(sigma) or sigma < 0:
        raise InputError("sigma must be finite and >= 0")
    rng = np.random.default_rng([seed, 0xDA7A])
    means = rng.standard_normal((num_classes, dim))
    means *= SYNTHETIC_MEAN_NORM / np.linalg.norm(means, axis=1, keepdims=True)
    noise = rng.standard_normal((num_classes, n_per_class, dim))
    x = (means[:, None, :] + sigma * noise).reshape(-1, dim)
    y = np.repeat(np.arange(num_classes), n_per_class)
    return Dataset(x, y, num_classes)


def synthetic_means(num_classes: int, dim: int, seed: int) -> np.ndarray:
    """The class means ``generate_synthetic`` uses for the same arguments."""
    rng = np.random.default_rng([seed, 0xDA7A])
    means = rng.standard_normal((num_classes, dim))
    return means * (SYNTHETIC_MEAN_NORM / np.linalg.norm(means, axis=1, keepdims=True))


def load_csv(path: str | Path) -> Dataset:
    """Read ``label,f0,...,f{d-1}`` rows (header required)."""
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("missing header", line=1) from None
    if not header or header[0].strip() != "label" or len(header) < 2:
        raise ParseError("header must start with 'label' followed by feature columns", line=1)
    d = len(header) - 1
    xs, ys = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != d + 1:
            raise ParseError(f"expected {d + 1} fields, got {len(row)}", line=lineno)
        try:
            label = int(row[0])
        except ValueError:
            raise ParseError(f"non-integer label {row[0]!r}", line=lineno) from None
        if label < 0:
            raise ParseError(f"negative label {label}", line=lineno)
        try:
            feats = [float(f) for f in row[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", line=lineno) from None
        if not all(np.isfinite(feats)):
            raise ParseError("non-finite feature", line=lineno)
        ys.append(label)
        xs.append(feats)
    if not ys:
        raise ParseError("no samples")
    return Dataset(np.array(xs), np.array(ys), max(ys) + 1)


def save_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f{k}" for k in range(ds.dim)])
        for label, row in zip(ds.y, ds.x):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def split(ds: Dataset, spec: SplitSpec) -> Split:
    """Per-class train/test split, then carve the public set out of each class's train part."""
    train, test, public = [], [], []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.y == c)
        if len(idx) < 5:
            raise InputError(f"class {c} has {len(idx)} samples; need at least 5")
        rng = np.random.default_rng([spec.seed, 0x5917, c])
        idx = idx[rng.permutation(len(idx))]
        n_train = min(max(int(round(spec.train_fraction * len(idx))), 2), len(idx) - 1)
        n_pub = min(max(int(round(spec.public_fraction_of_train * n_train)), 1), n_train - 1)
        tr, te = idx[:n_train], idx[n_train:]
        pub = tr[:n_pub]
        if not spec.public_overlaps_clients:
            tr = tr[n_pub:]
        train.append(ds.subset(tr))
        test.append(ds.subset(te))
        public.append(ds.subset(pub))
    pub_ds = Dataset.concat(public)
    missing = np.flatnonzero(pub_ds.class_counts() == 0)
    if len(missing):
        raise InputError(f"public set lacks classes {missing.tolist()}")
    return Split(train, test, pub_ds)


def pool(train_sets: list[Dataset]) -> Dataset:
    """Concatenate per-class train sets; partitions index into this pool."""
    return Dataset.concat(train_sets)


def _offsets(train_sets: list[Dataset]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum([len(t) for t in train_sets])])


def partition_sorted(train_sets: list[Dataset]) -> Partition:
    """Client i gets exactly class i."""
    off = _offsets(train_sets)
    return Partition([np.arange(off[c], off[c + 1]) for c in range(len(train_sets))])


def partition_dirichlet(
    train_sets: list[Dataset], alpha: float, num_clients: int, seed: int
) -> Partition:
    """Split each class across clients with proportions drawn from Dir(alpha)."""
    if not alpha > 0:
        raise InputError("alpha must be > 0")
    if num_clients < 2:
        raise InputError("num_clients must be >= 2")
    total = sum(len(t) for t in train_sets)
    if total < num_clients:
        raise InputError(f"{total} samples cannot fill {num_clients} clients")
    rng = np.random.default_rng([seed, 0xD1C7])
    off = _offsets(train_sets)
    buckets: list[list[int]] = [[] for _ in range(num_clients)]
    for c in range(len(train_sets)):
        idx = np.arange(off[c], off[c + 1])
        p = rng.dirichlet(np.full(num_clients, alpha))
        idx = idx[rng.permutation(len(idx))]
        cuts = (np.cumsum(p)[:-1] * len(idx)).astype(np.int64)
        for k, part in enumerate(np.split(idx, cuts)):
            buckets[k].extend(part.tolist())
    while True:
        sizes = [len(b) for b in buckets]
        empty = [k for k, s in enumerate(sizes) if s == 0]
        if not empty:
            break
        donor = int(np.argmax(sizes))
        buckets[empty[0]].append(buckets[donor].pop())
    return Partition([np.array(sorted(b), dtype=np.int64) for b in buckets])


def partition_evenly(train_sets: list[Dataset], num_clients: int, seed: int) -> Partition:
    """Shuffle the whole pool and deal it out round-robin."""
    if num_clients < 2:
        raise InputError("num_clients must be >= 2")
    total = sum(len(t) for t in train_sets)
    rng = np.random.default_rng([seed, 0xE7E7])
    order = rng.permutation(total)
    return Partition([np.sort(order[k::num_clients]) for k in range(num_clients)])
