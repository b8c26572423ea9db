"""Datasets, target encoding, train/test splitting and client partitioning."""

from __future__ import annotations

import bz2
import csv
import enum
import gzip
import io
import lzma
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError, EncodingError, FormatError, IngestError, ShapeError

_OPENERS = {".gz": gzip.open, ".gzip": gzip.open, ".bz2": bz2.open, ".xz": lzma.open}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features stored column-per-sample, shape (num_features, num_samples).

    ``labels`` is None for unlabeled data. ``class_list`` is sorted and holds
    every class known to the task, which may include classes absent from
    this particular subset.
    """

    features: np.ndarray
    labels: np.ndarray | None
    class_list: tuple = ()

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels is not None:
            if self.labels.shape != (self.features.shape[1],):
                raise ShapeError(
                    f"{self.features.shape[1]} samples but {self.labels.shape[0]} labels"
                )
            if not self.class_list:
                object.__setattr__(self, "class_list", tuple(sorted(set(self.labels.tolist()))))

    @property
    def num_samples(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_classes(self) -> int:
        return len(self.class_list)

    def subset(self, indices) -> "Dataset":
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.features[:, indices], labels, self.class_list)

    def class_indices(self) -> np.ndarray:
        """Position of each sample's label within ``class_list``."""
        if self.labels is None:
            raise ArgumentError("dataset is unlabeled")
        lookup = {c: i for i, c in enumerate(self.class_list)}
        try:
            return np.fromiter((lookup[v] for v in self.labels.tolist()), dtype=np.int64,
                               count=self.num_samples)
        except KeyError as exc:
            raise EncodingError(f"label {exc.args[0]!r} is not in the class list") from None


def _open_text(path: Path):
    opener = _OPENERS.get(path.suffix.lower())
    if opener is None:
        return open(path, newline="", encoding="utf-8")
    return io.TextIOWrapper(opener(path, "rb"), encoding="utf-8", newline="")


def _resolve_label_column(label_column, header, width: int, path) -> int | None:
    if label_column is None:
        return None
    if isinstance(label_column, str):
        if header is None:
            raise ArgumentError("a named label column requires a header row")
        try:
            return [h.strip() for h in header].index(label_column)
        except ValueError:
            raise ArgumentError(f"no column named {label_column!r} in {path}") from None
    idx = label_column + width if label_column < 0 else label_column
    if not 0 <= idx < width:
        raise ArgumentError(f"label column {label_column} out of range for {width} columns")
    return idx


def _rows_to_dataset(rows, width, label_idx, path, first_line: int, class_list=()) -> Dataset:
    for i, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(
                f"{path}: row {i + first_line} has {len(row)} columns, expected {width}"
            )
    feat_cols = [j for j in range(width) if j != label_idx]
    feats = np.empty((len(feat_cols), len(rows)), dtype=np.float64)
    for i, row in enumerate(rows):
        for f, j in enumerate(feat_cols):
            try:
                feats[f, i] = float(row[j])
            except ValueError:
                raise IngestError(
                    f"{path}: row {i + first_line}, column {j + 1}: "
                    f"cannot parse {row[j]!r} as a number"
                ) from None
    labels = None
    if label_idx is not None:
        labels = np.array([row[label_idx].strip() for row in rows])
    return Dataset(feats, labels, tuple(class_list))


def _open_reader(path: Path):
    try:
        return _open_text(path)
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc


def load_csv(path, label_column: int | str | None = -1, has_header: bool = False) -> Dataset:
    """Read a comma-separated file with one sample per row.

    ``label_column`` is a column index (negative counts from the end), a
    header name, or None for unlabeled files. Labels are kept verbatim as
    strings; every other column must parse as a number. Compressed files
    are recognised by their suffix (.gz, .bz2, .xz).
    """
    path = Path(path)
    try:
        with _open_reader(path) as handle:
            reader = csv.reader(handle)
            header = next(reader, None) if has_header else None
            if has_header and header is None:
                raise IngestError(f"{path}: file is empty")
            rows = [r for r in reader if r]
    except (OSError, EOFError, UnicodeDecodeError, csv.Error) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc

    if not rows:
        raise IngestError(f"{path}: no data rows")
    width = len(header) if header is not None else len(rows[0])
    label_idx = _resolve_label_column(label_column, header, width, path)
    return _rows_to_dataset(rows, width, label_idx, path, 2 if has_header else 1)


def iter_csv_chunks(path, chunk_rows: int, class_list, label_column: int | str = -1,
                    has_header: bool = False):
    """Yield consecutive labeled chunks of at most ``chunk_rows`` samples.

    Every chunk carries ``class_list`` so that targets encode consistently.
    """
    if chunk_rows < 1:
        raise ArgumentError(f"chunk_rows must be >= 1, got {chunk_rows}")
    path = Path(path)
    with _open_reader(path) as handle:
        reader = csv.reader(handle)
        header = next(reader, None) if has_header else None
        line = 2 if has_header else 1
        width = label_idx = None
        rows: list = []
        emitted = False
        for row in reader:
            if not row:
                continue
            if width is None:
                width = len(header) if header is not None else len(row)
                label_idx = _resolve_label_column(label_column, header, width, path)
            rows.append(row)
            if len(rows) == chunk_rows:
                yield _rows_to_dataset(rows, width, label_idx, path, line, class_list)
                line += len(rows)
                rows = []
                emitted = True
        if rows:
            yield _rows_to_dataset(rows, width, label_idx, path, line, class_list)
        elif not emitted:
            raise IngestError(f"{path}: no data rows")


def write_csv(ds: Dataset, path, header: bool = False) -> None:
    """Write features followed by the label column (if any)."""
    path = Path(path)
    opener = _OPENERS.get(path.suffix.lower())
    handle = (io.TextIOWrapper(opener(path, "wb"), encoding="utf-8", newline="")
              if opener else open(path, "w", newline="", encoding="utf-8"))
    with handle:
        w = csv.writer(handle)
        if header:
            cols = [f"x{i}" for i in range(ds.num_features)]
            w.writerow(cols + (["label"] if ds.labels is not None else []))
        for i in range(ds.num_samples):
            row = [repr(float(v)) for v in ds.features[:, i]]
            if ds.labels is not None:
                row.append(str(ds.labels[i]))
            w.writerow(row)


def make_blobs(
    num_samples: int,
    num_features: int = 2,
    num_classes: int = 2,
    separation: float = 10.0,
    noise: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Gaussian clusters with class ``k`` centred at ``separation * e_k``.

    Requires ``num_features >= num_classes``. Labels are the strings "0",
    "1", ...; samples are interleaved in random order.
    """
    if num_features < num_classes:
        raise ArgumentError("make_blobs needs at least as many features as classes")
    rng = np.random.default_rng(seed)
    cls = rng.integers(0, num_classes, size=num_samples)
    x = rng.normal(scale=noise, size=(num_features, num_samples))
    x[cls, np.arange(num_samples)] += separation
    width = len(str(num_classes - 1))
    labels = np.array([str(c).zfill(width) for c in cls])
    class_list = tuple(str(c).zfill(width) for c in range(num_classes))
    return Dataset(x, labels, class_list)


def encode_targets(labels, class_list: Sequence, low: float = 0.05, high: float = 0.95) -> np.ndarray:
    """One-hot (n x c) targets with ``high`` for the true class and ``low`` elsewhere."""
    if not 0.0 < low < high < 1.0:
        raise ArgumentError(f"need 0 < low < high < 1, got low={low}, high={high}")
    lookup = {c: i for i, c in enumerate(class_list)}
    uniq, inverse = np.unique(np.asarray(labels), return_inverse=True)
    try:
        cols = np.array([lookup[v] for v in uniq.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise EncodingError(f"label {exc.args[0]!r} is not one of {list(class_list)}") from None
    out = np.full((inverse.size, len(lookup)), low, dtype=np.float64)
    if inverse.size:
        out[np.arange(inverse.size), cols[inverse.ravel()]] = high
    return out


def split_train_test(ds: Dataset, train_fraction: float = 0.70, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle; the first ``floor(fraction * n)`` samples go to training."""
    n = ds.num_samples
    if not 0.0 < train_fraction < 1.0:
        raise ArgumentError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(np.floor(train_fraction * n))
    if n_train < 1 or n_train >= n:
        raise ArgumentError(f"a {train_fraction} split of {n} samples leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


class PartitionMode(str, enum.Enum):
    IID_SHUFFLE = "iid_shuffle"
    LABEL_SORTED = "label_sorted"

    @classmethod
    def parse(cls, text: str) -> "PartitionMode":
        key = text.strip().lower().replace("-", "_")
        aliases = {"iid": cls.IID_SHUFFLE, "non_iid": cls.LABEL_SORTED, "noniid": cls.LABEL_SORTED}
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class PartitionPlan:
    mode: PartitionMode = PartitionMode.IID_SHUFFLE
    num_clients: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", PartitionMode(self.mode))
        if self.num_clients < 1:
            raise ArgumentError(f"num_clients must be >= 1, got {self.num_clients}")


def partition_indices(num_samples: int, plan: PartitionPlan, class_idx=None) -> list[np.ndarray]:
    """Split ``range(num_samples)`` into ``plan.num_clients`` disjoint shards.

    ``iid_shuffle`` shuffles, groups the shuffled order by class (when
    ``class_idx`` is given) and deals samples round-robin, so every shard
    gets each class in near-exact proportion. ``label_sorted`` stable-sorts
    by class and cuts contiguous chunks, so most shards hold a single class.
    Shard sizes always differ by at most one. A single client receives the
    samples in their original order.
    """
    p = plan.num_clients
    if p > num_samples:
        raise ArgumentError(f"{p} clients for only {num_samples} samples")
    if class_idx is not None:
        class_idx = np.asarray(class_idx)
        if class_idx.shape != (num_samples,):
            raise ShapeError("class index vector does not match the sample count")
    if p == 1:
        return [np.arange(num_samples)]

    if plan.mode is PartitionMode.IID_SHUFFLE:
        order = np.random.default_rng(plan.seed).permutation(num_samples)
        if class_idx is not None:
            order = order[np.argsort(class_idx[order], kind="stable")]
        return [order[i::p] for i in range(p)]

    if class_idx is None:
        raise ArgumentError("label_sorted partitioning needs labels")
    order = np.argsort(class_idx, kind="stable")
    return np.array_split(order, p)


def partition(ds: Dataset, plan: PartitionPlan) -> list[Dataset]:
    class_idx = ds.class_indices() if ds.labels is not None else None
    return [ds.subset(idx) for idx in partition_indices(ds.num_samples, plan, class_idx)]


def replicate(ds: Dataset, k: int) -> Dataset:
    """Stack ``k`` copies of the samples (in-memory only)."""
    if k < 1:
        raise ArgumentError(f"replication factor must be >= 1, got {k}")
    if k == 1:
        return ds
    labels = None if ds.labels is None else np.tile(ds.labels, k)
    return Dataset(np.tile(ds.features, (1, k)), labels, ds.class_list)


def minmax_scale(reference: Dataset, *others: Dataset) -> list[Dataset]:
    """Scale features to [0, 1] using the per-feature range of ``reference``."""
    lo = reference.features.min(axis=1, keepdims=True)
    span = reference.features.max(axis=1, keepdims=True) - lo
    span[span == 0] = 1.0
    return [Dataset((d.features - lo) / span, d.labels, d.class_list) for d in (reference, *others)]
