"""Dataset loading, saving, and imbalanced split construction.

A dataset directory contains four files (documented in docs/data_format.md):

* ``meta.json`` — ``{"num_nodes": N, "num_features": D, "num_classes": C}``
* ``edges.tsv`` — header ``src<TAB>dst``, one edge per line; the loader
  symmetrizes, de-duplicates, and drops self-loops, logging a warning when
  the stored list was not already symmetric
* ``features.tsv`` — N rows of D tab-separated floats, no header
* ``labels.tsv`` — header ``node<TAB>class``, exactly one row per node

Splits follow a fixed protocol: per class a number of labeled training
nodes (minority classes get a rounded-down-ratio share), then fixed-size
validation and test samples per class, all drawn without replacement from a
seeded generator.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetFormatError, InvalidSplitError
from .sparse import CsrMatrix

logger = logging.getLogger(__name__)

META_FILE = "meta.json"
EDGES_FILE = "edges.tsv"
FEATURES_FILE = "features.tsv"
LABELS_FILE = "labels.tsv"


@dataclass(eq=False)
class Dataset:
    """An attributed graph with one class label per node.

    ``adjacency`` is binary, symmetric, zero-diagonal.
    """

    features: np.ndarray    # (N, D) float64
    labels: np.ndarray      # (N,) int64 in [0, num_classes)
    adjacency: CsrMatrix
    num_classes: int
    name: str = "dataset"

    @property
    def num_nodes(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    def validate(self) -> None:
        n = self.num_nodes
        if self.labels.shape != (n,):
            raise DatasetFormatError("labels length must equal num_nodes")
        if self.adjacency.num_rows != n or self.adjacency.num_cols != n:
            raise DatasetFormatError("adjacency must be N x N")
        if self.num_classes < 1:
            raise DatasetFormatError("num_classes must be positive")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise DatasetFormatError("label outside [0, num_classes)")
        if not np.all(np.isfinite(self.features)):
            raise DatasetFormatError("features must be finite")
        rows, cols, vals = self.adjacency.to_coo()
        transposed = CsrMatrix.from_coo(cols, rows, vals, n, n)
        if not self.adjacency.equals(transposed):
            raise DatasetFormatError("adjacency must be symmetric")
        if np.any(rows == cols):
            raise DatasetFormatError("adjacency diagonal must be zero")

    def class_counts(self, ids=None) -> np.ndarray:
        labels = self.labels if ids is None else self.labels[
            np.asarray(ids, dtype=np.int64)]
        return np.bincount(labels, minlength=self.num_classes)


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Scale each row to sum 1; all-zero rows are left as zeros."""
    sums = features.sum(axis=1, keepdims=True)
    safe = np.where(sums == 0.0, 1.0, sums)
    return features / safe


def build_undirected_adjacency(src, dst, num_nodes: int) -> CsrMatrix:
    """Binary symmetric zero-diagonal adjacency from (possibly directed,
    possibly duplicated) edge endpoints."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    merged = CsrMatrix.from_coo(rows, cols, np.ones(rows.size),
                                num_nodes, num_nodes)
    # duplicates summed during canonicalization; clamp back to binary
    return CsrMatrix(merged.num_rows, merged.num_cols, merged.row_offsets,
                     merged.col_indices, np.ones_like(merged.values))


def load_dataset(directory) -> Dataset:
    directory = os.fspath(directory)
    meta_path = os.path.join(directory, META_FILE)
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError as exc:
        raise DatasetFormatError(f"missing {meta_path}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid JSON in {meta_path}: {exc}") from exc
    try:
        n = int(meta["num_nodes"])
        d = int(meta["num_features"])
        c = int(meta["num_classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(
            f"{meta_path} must define integer num_nodes/num_features/"
            f"num_classes: {exc}") from exc
    name = str(meta.get("name", os.path.basename(os.path.normpath(directory))))

    src, dst = _read_edges(os.path.join(directory, EDGES_FILE), n)
    features = _read_features(os.path.join(directory, FEATURES_FILE), n, d)
    labels = _read_labels(os.path.join(directory, LABELS_FILE), n, c)

    adjacency = build_undirected_adjacency(src, dst, n)
    if src.size:
        stored = {(int(a), int(b)) for a, b in zip(src, dst) if a != b}
        if any((b, a) not in stored for a, b in stored):
            logger.warning(
                "%s: edge list is not symmetric; treating edges as "
                "undirected", directory)

    ds = Dataset(features=features, labels=labels, adjacency=adjacency,
                 num_classes=c, name=name)
    ds.validate()
    return ds


def _read_edges(path, num_nodes):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError as exc:
        raise DatasetFormatError(f"missing {path}") from exc
    if not lines or lines[0].split("\t")[:2] != ["src", "dst"]:
        raise DatasetFormatError(f"{path} must start with 'src\\tdst' header")
    src, dst = [], []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetFormatError(f"{path}:{ln}: expected two fields")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{ln}: non-integer node id") from exc
        if not (0 <= a < num_nodes and 0 <= b < num_nodes):
            raise DatasetFormatError(f"{path}:{ln}: node id out of range")
        src.append(a)
        dst.append(b)
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)


def _read_features(path, num_nodes, num_features):
    try:
        features = np.loadtxt(path, delimiter="\t", dtype=np.float64,
                              ndmin=2)
    except FileNotFoundError as exc:
        raise DatasetFormatError(f"missing {path}") from exc
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: malformed float field: {exc}") from exc
    if features.shape != (num_nodes, num_features):
        raise DatasetFormatError(
            f"{path}: expected shape ({num_nodes}, {num_features}), "
            f"got {features.shape}")
    return features


def _read_labels(path, num_nodes, num_classes):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError as exc:
        raise DatasetFormatError(f"missing {path}") from exc
    if not lines or lines[0].split("\t")[:2] != ["node", "class"]:
        raise DatasetFormatError(f"{path} must start with 'node\\tclass' header")
    labels = np.full(num_nodes, -1, dtype=np.int64)
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetFormatError(f"{path}:{ln}: expected two fields")
        try:
            node, cls = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{ln}: non-integer field") from exc
        if not 0 <= node < num_nodes:
            raise DatasetFormatError(f"{path}:{ln}: node id out of range")
        if not 0 <= cls < num_classes:
            raise DatasetFormatError(f"{path}:{ln}: class out of range")
        if labels[node] != -1:
            raise DatasetFormatError(f"{path}:{ln}: duplicate label for "
                                     f"node {node}")
        labels[node] = cls
    unlabeled = np.flatnonzero(labels < 0)
    if unlabeled.size:
        raise DatasetFormatError(
            f"{path}: {unlabeled.size} node(s) have no label "
            f"(first: {int(unlabeled[0])})")
    return labels


def save_dataset(ds: Dataset, directory) -> None:
    """Write a dataset directory; floats use round-trippable repr so that
    save→load is bit-identical."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    meta = {"num_nodes": ds.num_nodes, "num_features": ds.num_features,
            "num_classes": ds.num_classes, "name": ds.name}
    with open(os.path.join(directory, META_FILE), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    rows, cols, _ = ds.adjacency.to_coo()
    with open(os.path.join(directory, EDGES_FILE), "w",
              encoding="utf-8") as fh:
        fh.write("src\tdst\n")
        for a, b in zip(rows, cols):
            fh.write(f"{a}\t{b}\n")
    with open(os.path.join(directory, FEATURES_FILE), "w",
              encoding="utf-8") as fh:
        for row in ds.features:
            fh.write("\t".join(repr(float(v)) for v in row))
            fh.write("\n")
    with open(os.path.join(directory, LABELS_FILE), "w",
              encoding="utf-8") as fh:
        fh.write("node\tclass\n")
        for node, cls in enumerate(ds.labels):
            fh.write(f"{node}\t{cls}\n")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SplitSpec:
    """Train/validation/test node ids plus the parameters that produced
    them.  Serialized schema::

        {"train": [...], "val": [...], "test": [...],
         "rho": <float>, "minority": [...], "seed": <int>}
    """

    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    rho: float
    minority: list[int] = field(default_factory=list)
    seed: int = 0

    def validate(self, num_nodes: int) -> None:
        parts = {"train": self.train_ids, "val": self.val_ids,
                 "test": self.test_ids}
        seen: set[int] = set()
        for name, ids in parts.items():
            ids = np.asarray(ids)
            if ids.size == 0:
                raise InvalidSplitError(f"{name} split is empty")
            if ids.min() < 0 or ids.max() >= num_nodes:
                raise InvalidSplitError(f"{name} split id out of range")
            if np.unique(ids).size != ids.size:
                raise InvalidSplitError(f"{name} split has duplicate ids")
            as_set = set(ids.tolist())
            if seen & as_set:
                raise InvalidSplitError("splits overlap")
            seen |= as_set

    def to_json_dict(self) -> dict:
        return {"train": self.train_ids.tolist(),
                "val": self.val_ids.tolist(),
                "test": self.test_ids.tolist(),
                "rho": self.rho,
                "minority": list(self.minority),
                "seed": self.seed}

    @staticmethod
    def from_json_dict(obj: dict) -> "SplitSpec":
        try:
            return SplitSpec(
                train_ids=np.asarray(obj["train"], dtype=np.int64),
                val_ids=np.asarray(obj["val"], dtype=np.int64),
                test_ids=np.asarray(obj["test"], dtype=np.int64),
                rho=float(obj["rho"]),
                minority=[int(c) for c in obj["minority"]],
                seed=int(obj["seed"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSplitError(f"malformed split JSON: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @staticmethod
    def load(path) -> "SplitSpec":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except FileNotFoundError as exc:
            raise InvalidSplitError(f"missing split file {path}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidSplitError(f"invalid JSON in {path}: {exc}") from exc
        return SplitSpec.from_json_dict(obj)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _sample_split(ds: Dataset, train_counts: np.ndarray, rho: float,
                  minority: list[int], seed: int, val_per_class: int,
                  test_per_class: int) -> SplitSpec:
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for c in range(ds.num_classes):
        pool = np.flatnonzero(ds.labels == c)
        t = int(train_counts[c])
        if t < 1:
            raise InvalidSplitError(
                f"class {c} would get {t} training nodes; need at least 1")
        needed = t + val_per_class + test_per_class
        if pool.size < needed:
            raise InvalidSplitError(
                f"class {c} has {pool.size} nodes but the protocol needs "
                f"{needed} ({t} train + {val_per_class} val + "
                f"{test_per_class} test)")
        chosen = rng.choice(pool, size=needed, replace=False)
        train.append(chosen[:t])
        val.append(chosen[t:t + val_per_class])
        test.append(chosen[t + val_per_class:])
    split = SplitSpec(
        train_ids=np.sort(np.concatenate(train)).astype(np.int64),
        val_ids=np.sort(np.concatenate(val)).astype(np.int64),
        test_ids=np.sort(np.concatenate(test)).astype(np.int64),
        rho=float(rho), minority=sorted(int(c) for c in minority),
        seed=int(seed))
    split.validate(ds.num_nodes)
    return split


def make_imbalanced_split(ds: Dataset, num_minority: int, rho: float,
                          seed: int, *, majority_count: int = 20,
                          val_per_class: int = 25, test_per_class: int = 55,
                          minority_classes: list[int] | None = None
                          ) -> SplitSpec:
    """Step-imbalance protocol: majority classes get ``majority_count``
    labeled nodes, the ``num_minority`` highest-index classes (unless given
    explicitly) get ``round(majority_count * rho)`` (half-up), and every
    class also contributes fixed validation/test samples.
    """
    c = ds.num_classes
    if not 0 <= num_minority < c:
        raise InvalidSplitError(
            f"num_minority must be in [0, {c}), got {num_minority}")
    if not 0.0 < rho <= 1.0:
        raise InvalidSplitError(f"rho must be in (0, 1], got {rho}")
    if minority_classes is None:
        minority = list(range(c - num_minority, c))
    else:
        minority = sorted(int(m) for m in minority_classes)
        if len(minority) != num_minority:
            raise InvalidSplitError(
                "minority_classes length must equal num_minority")
        if any(not 0 <= m < c for m in minority):
            raise InvalidSplitError("minority class index out of range")
        if len(set(minority)) != len(minority):
            raise InvalidSplitError("duplicate minority class")
    counts = np.full(c, majority_count, dtype=np.int64)
    counts[minority] = _round_half_up(majority_count * rho)
    return _sample_split(ds, counts, rho, minority, seed,
                         val_per_class, test_per_class)


def make_explicit_split(ds: Dataset, train_counts, seed: int, *,
                        val_per_class: int = 25, test_per_class: int = 55
                        ) -> SplitSpec:
    """Split with an explicit per-class labeled count (e.g. a long-tail
    profile).  The recorded imbalance ratio is min/max of the counts and the
    minority list contains every class below the maximum count."""
    counts = np.asarray(train_counts, dtype=np.int64)
    if counts.shape != (ds.num_classes,):
        raise InvalidSplitError(
            f"need one train count per class ({ds.num_classes})")
    rho = float(counts.min() / counts.max())
    minority = [int(i) for i in np.flatnonzero(counts < counts.max())]
    return _sample_split(ds, counts, rho, minority, seed,
                         val_per_class, test_per_class)
