"""Balanced pseudo-label generation.

Each class receives a quota equal to the gap between the largest labeled
class and its own labeled count, so pseudo-labels top minority classes up
toward the majority size.  Candidates are unlabeled nodes predicted as the
class with confidence strictly above a threshold; the highest-confidence
candidates fill the quota.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeError
from .sparse import as_dense


@dataclass(eq=False)
class PseudoLabelSet:
    """Selected pseudo-labeled nodes, sorted by node id."""

    node_ids: np.ndarray      # int64, ascending
    labels: np.ndarray        # int64, assigned class per node
    confidences: np.ndarray   # float64, winning probability per node
    num_classes: int

    @property
    def size(self) -> int:
        return int(self.node_ids.shape[0])

    def per_class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def min_confidence(self) -> float:
        return float(self.confidences.min()) if self.size else float("inf")


def compute_quotas(train_class_counts) -> np.ndarray:
    """Quota per class: (largest labeled class size) - (own size).

    The majority class therefore gets quota 0 and minority classes get the
    head room needed to balance the effective training set.
    """
    counts = np.asarray(train_class_counts, dtype=np.int64).ravel()
    if counts.size == 0:
        raise ShapeError("train_class_counts must be non-empty")
    if counts.min() < 0:
        raise InvalidParameterError("class counts cannot be negative")
    return counts.max() - counts


def unlimited_quotas(num_classes: int) -> np.ndarray:
    """Quotas for the unbalanced variant: every candidate is accepted."""
    return np.full(num_classes, np.inf)


def unlabeled_pool(num_nodes: int, train_ids, val_ids=None, test_ids=None, *,
                   include_eval: bool = False) -> np.ndarray:
    """Node ids eligible for pseudo-labeling: everything outside the train
    split, minus the validation/test splits unless ``include_eval``."""
    mask = np.ones(num_nodes, dtype=bool)
    mask[np.asarray(train_ids, dtype=np.int64)] = False
    if not include_eval:
        if val_ids is not None:
            mask[np.asarray(val_ids, dtype=np.int64)] = False
        if test_ids is not None:
            mask[np.asarray(test_ids, dtype=np.int64)] = False
    return np.flatnonzero(mask).astype(np.int64)


def select_balanced(probs, unlabeled_ids, quotas,
                    threshold: float) -> PseudoLabelSet:
    """Pick pseudo-labeled nodes per class under quota.

    For class c the candidates are unlabeled nodes whose predicted class
    (argmax, ties to the lowest class index) is c with winning probability
    strictly greater than ``threshold``.  Candidates are ranked by
    probability descending, node id ascending, and the top ``quotas[c]``
    are selected.  Quotas may be ``inf`` to accept every candidate.
    """
    probs = as_dense(probs)
    n, num_classes = probs.shape
    unlabeled_ids = np.asarray(unlabeled_ids, dtype=np.int64).ravel()
    quotas = np.asarray(quotas, dtype=np.float64).ravel()
    if quotas.shape != (num_classes,):
        raise ShapeError(
            f"need one quota per class ({num_classes}), got {quotas.shape}")
    if np.any(quotas < 0):
        raise InvalidParameterError("quotas cannot be negative")
    if not 0.0 <= threshold <= 1.0:
        raise InvalidParameterError(
            f"confidence threshold must be in [0, 1], got {threshold}")
    if unlabeled_ids.size:
        if unlabeled_ids.min() < 0 or unlabeled_ids.max() >= n:
            raise ShapeError("unlabeled node id out of range")

    sub = probs[unlabeled_ids]
    pred = np.argmax(sub, axis=1)             # ties -> lowest class index
    conf = sub[np.arange(sub.shape[0]), pred]
    confident = conf > threshold

    picked_ids: list[np.ndarray] = []
    picked_labels: list[np.ndarray] = []
    picked_conf: list[np.ndarray] = []
    for c in range(num_classes):
        take_mask = confident & (pred == c)
        cand_ids = unlabeled_ids[take_mask]
        cand_conf = conf[take_mask]
        # rank: confidence descending, node id ascending (ids are the
        # secondary lexsort key via ascending order within equal -conf)
        order = np.lexsort((cand_ids, -cand_conf))
        if np.isfinite(quotas[c]):
            order = order[:int(quotas[c])]
        picked_ids.append(cand_ids[order])
        picked_labels.append(np.full(order.size, c, dtype=np.int64))
        picked_conf.append(cand_conf[order])

    ids = np.concatenate(picked_ids) if picked_ids else np.empty(0, np.int64)
    labels = (np.concatenate(picked_labels) if picked_labels
              else np.empty(0, np.int64))
    confs = (np.concatenate(picked_conf) if picked_conf
             else np.empty(0, np.float64))
    order = np.argsort(ids, kind="stable")
    return PseudoLabelSet(node_ids=ids[order], labels=labels[order],
                          confidences=confs[order], num_classes=num_classes)


def write_pseudo_tsv(pls: PseudoLabelSet, path) -> None:
    """Diagnostic dump: ``node<TAB>label<TAB>confidence`` per selected node."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node\tlabel\tconfidence\n")
        for i, y, p in zip(pls.node_ids, pls.labels, pls.confidences):
            fh.write(f"{i}\t{y}\t{float(p)!r}\n")
