"""Connectivity views of a graph.

Two adjacency constructions feed the encoders:

* :func:`build_structural` — hop-distance adjacency.  Entry (i, j) is
  ``1 / spd(i, j)`` when the shortest-path hop count is between 1 and
  ``max_hops``, else 0.  Built by truncated breadth-first search from every
  source, so memory stays proportional to the number of retained entries.
* :class:`SemanticAdjacency` — cluster cliques kept implicit.  Nodes sharing
  a k-means cluster form a fully connected block whose diagonal is replaced
  by self-loops; after symmetric normalization, propagating features through
  such a block replaces every row by its cluster's mean.
  :func:`semantic_propagate` computes exactly that without materializing the
  cliques.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InvalidParameterError, ShapeError
from .sparse import CsrMatrix, as_dense


# ---------------------------------------------------------------------------
# Structural adjacency
# ---------------------------------------------------------------------------

@njit(cache=True)
def _bfs_counts(row_offsets, col_indices, max_hops):  # pragma: no cover
    n = row_offsets.shape[0] - 1
    counts = np.zeros(n, dtype=np.int64)
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        qn = 0
        queue[qn] = s
        qn += 1
        dist[s] = 0
        head = 0
        while head < qn:
            u = queue[head]
            head += 1
            du = dist[u]
            if du == max_hops:
                continue
            for p in range(row_offsets[u], row_offsets[u + 1]):
                v = col_indices[p]
                if dist[v] < 0:
                    dist[v] = du + 1
                    queue[qn] = v
                    qn += 1
        counts[s] = qn - 1  # reached nodes minus the source itself
        for t in range(qn):
            dist[queue[t]] = -1
    return counts


@njit(cache=True)
def _bfs_fill(row_offsets, col_indices, max_hops,
              out_offsets, out_cols, out_vals):  # pragma: no cover
    n = row_offsets.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        qn = 0
        queue[qn] = s
        qn += 1
        dist[s] = 0
        head = 0
        pos = out_offsets[s]
        while head < qn:
            u = queue[head]
            head += 1
            du = dist[u]
            if du == max_hops:
                continue
            for p in range(row_offsets[u], row_offsets[u + 1]):
                v = col_indices[p]
                if dist[v] < 0:
                    dist[v] = du + 1
                    queue[qn] = v
                    qn += 1
                    out_cols[pos] = v
                    out_vals[pos] = 1.0 / (du + 1)
                    pos += 1
        for t in range(qn):
            dist[queue[t]] = -1


@dataclass(eq=False)
class StructuralAdjacency:
    """Hop-distance adjacency: ``matrix[i, j] = 1 / spd(i, j)`` up to
    ``max_hops`` hops, zero diagonal."""

    matrix: CsrMatrix
    max_hops: int


def build_structural(adj: CsrMatrix, max_hops: int) -> StructuralAdjacency:
    """Build the hop-distance adjacency of ``adj`` (treated as unweighted;
    any stored entry is an edge).

    ``max_hops`` must be a positive integer.  For ``max_hops == 1`` and a
    binary symmetric zero-diagonal input, the result equals the input
    exactly.
    """
    if adj.num_rows != adj.num_cols:
        raise ShapeError("structural adjacency requires a square input graph")
    if int(max_hops) != max_hops or max_hops < 1:
        raise InvalidParameterError(
            f"max_hops must be a positive integer, got {max_hops!r}")
    max_hops = int(max_hops)
    counts = _bfs_counts(adj.row_offsets, adj.col_indices, max_hops)
    offsets = np.zeros(adj.num_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    cols = np.empty(offsets[-1], dtype=np.int64)
    vals = np.empty(offsets[-1], dtype=np.float64)
    _bfs_fill(adj.row_offsets, adj.col_indices, max_hops, offsets, cols, vals)
    rows = np.repeat(np.arange(adj.num_rows, dtype=np.int64), counts)
    matrix = CsrMatrix.from_coo(rows, cols, vals, adj.num_rows, adj.num_cols)
    return StructuralAdjacency(matrix=matrix, max_hops=max_hops)


# ---------------------------------------------------------------------------
# k-means clustering
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ClusterModel:
    """Result of a k-means run.

    The returned triple is mutually consistent: ``assignments`` minimize the
    distance to ``centroids`` (ties to the lowest cluster index) and ``loss``
    is the summed squared distance under that assignment.
    """

    assignments: np.ndarray   # int64, one cluster id per point
    centroids: np.ndarray     # (k, dim) float64
    loss: float
    n_iter: int

    @property
    def num_clusters(self) -> int:
        return int(self.centroids.shape[0])

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.num_clusters)


def _pairwise_sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (np.sum(points * points, axis=1)[:, None]
          + np.sum(centroids * centroids, axis=1)[None, :]
          - 2.0 * points @ centroids.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _plus_plus_init(points: np.ndarray, k: int,
                    rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    min_d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = min_d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=min_d2 / total))
        else:  # all points coincide with chosen centroids
            idx = int(rng.integers(n))
        centroids[c] = points[idx]
        np.minimum(min_d2, np.sum((points - centroids[c]) ** 2, axis=1),
                   out=min_d2)
    return centroids


def kmeans(points, k: int, seed: int | None = None, *,
           max_iter: int = 100, tol: float = 1e-4,
           init: np.ndarray | None = None) -> ClusterModel:
    """Lloyd's algorithm with seeded k-means++ initialization.

    Each iteration assigns points to the nearest centroid (ties to the
    lowest index), repairs empty clusters by moving the worst-fit point
    (largest current squared distance, ties to the lowest point index) onto
    them, then checks convergence — the relative loss decrease falling to
    ``tol`` or below — before recomputing centroids, so the returned state
    is a consistent fixed point.  ``init`` warm-starts from given centroids
    and skips k-means++.
    """
    points = as_dense(points)
    n = points.shape[0]
    if k < 1 or k > n:
        raise InvalidParameterError(
            f"need 1 <= k <= n_points, got k={k} with {n} points")
    if max_iter < 1:
        raise InvalidParameterError("max_iter must be >= 1")
    if tol < 0:
        raise InvalidParameterError("tol must be >= 0")
    if init is not None:
        centroids = as_dense(init, copy=True)
        if centroids.shape != (k, points.shape[1]):
            raise ShapeError(
                f"init centroids must have shape ({k}, {points.shape[1]})")
    else:
        rng = np.random.default_rng(seed)
        centroids = _plus_plus_init(points, k, rng)

    prev_loss = None
    assignments = np.zeros(n, dtype=np.int64)
    loss = 0.0
    for it in range(1, max_iter + 1):
        d2 = _pairwise_sq_dists(points, centroids)
        assignments = np.argmin(d2, axis=1).astype(np.int64)
        cur_d2 = d2[np.arange(n), assignments]
        sizes = np.bincount(assignments, minlength=k)
        for empty in np.flatnonzero(sizes == 0):
            # steal the worst-fit point, but never empty a donor cluster
            eligible = sizes[assignments] > 1
            cand = np.where(eligible, cur_d2, -1.0)
            worst = int(np.argmax(cand))
            if cand[worst] < 0.0:
                break  # no donor has two members; cannot repair further
            sizes[assignments[worst]] -= 1
            sizes[empty] += 1
            centroids[empty] = points[worst]
            assignments[worst] = empty
            cur_d2[worst] = 0.0
        loss = float(cur_d2.sum())
        converged = (prev_loss is not None
                     and prev_loss - loss <= tol * max(prev_loss, 0.0))
        if converged or it == max_iter:
            return ClusterModel(assignments=assignments,
                                centroids=centroids, loss=loss, n_iter=it)
        prev_loss = loss
        for c in range(k):
            centroids[c] = points[assignments == c].mean(axis=0)
    raise AssertionError("unreachable")  # loop always returns


# ---------------------------------------------------------------------------
# Semantic adjacency
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SemanticAdjacency:
    """Implicit normalized clique adjacency over cluster assignments.

    Equivalent to building a dense matrix with 1 wherever two nodes share a
    cluster, replacing the diagonal with self-loops, and symmetrically
    normalizing — but stored as just the assignment vector.  Propagation
    through it replaces each node's features with its cluster's mean.
    """

    assignments: np.ndarray
    num_clusters: int
    _order: np.ndarray = field(init=False, repr=False)
    _starts: np.ndarray = field(init=False, repr=False)
    _counts: np.ndarray = field(init=False, repr=False)
    _slot: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64).ravel()
        if a.size == 0:
            raise ShapeError("assignments must be non-empty")
        if a.min() < 0 or a.max() >= self.num_clusters:
            raise InvalidParameterError("cluster id out of range")
        self.assignments = a
        order = np.argsort(a, kind="stable")
        sorted_a = a[order]
        starts = np.flatnonzero(
            np.concatenate([[True], sorted_a[1:] != sorted_a[:-1]]))
        self._order = order
        self._starts = starts
        self._counts = np.diff(np.append(starts, a.size))
        # slot[c] = row of the per-cluster mean for cluster c (present only)
        slot = np.full(self.num_clusters, -1, dtype=np.int64)
        slot[sorted_a[starts]] = np.arange(starts.size)
        self._slot = slot

    @property
    def num_nodes(self) -> int:
        return int(self.assignments.shape[0])

    def cluster_sizes(self) -> np.ndarray:
        sizes = np.zeros(self.num_clusters, dtype=np.int64)
        present = self._slot >= 0
        sizes[present] = self._counts[self._slot[present]]
        return sizes

    def to_dense_normalized(self) -> np.ndarray:
        """Materialize the normalized clique matrix (tests / small graphs)."""
        n = self.num_nodes
        same = self.assignments[:, None] == self.assignments[None, :]
        dense = same.astype(np.float64)  # diagonal already 1 (self-loop)
        deg = dense.sum(axis=1)
        return dense / np.sqrt(np.outer(deg, deg))


def build_semantic(model_or_assignments, num_clusters: int | None = None
                   ) -> SemanticAdjacency:
    """Build a :class:`SemanticAdjacency` from a :class:`ClusterModel` or a
    raw assignment vector (``num_clusters`` required in the latter case)."""
    if isinstance(model_or_assignments, ClusterModel):
        model = model_or_assignments
        return SemanticAdjacency(assignments=model.assignments,
                                 num_clusters=model.num_clusters)
    if num_clusters is None:
        raise InvalidParameterError(
            "num_clusters is required with a raw assignment vector")
    return SemanticAdjacency(assignments=model_or_assignments,
                             num_clusters=int(num_clusters))


def semantic_propagate(sem: SemanticAdjacency, x) -> np.ndarray:
    """Propagate features through the implicit normalized clique adjacency:
    row i of the result is the mean of ``x`` over node i's cluster.

    Idempotent, and preserves the total feature sum (each cluster's rows sum
    to the cluster's original sum).
    """
    x = as_dense(x)
    if x.shape[0] != sem.num_nodes:
        raise ShapeError(
            f"feature rows ({x.shape[0]}) != number of nodes ({sem.num_nodes})")
    sums = np.add.reduceat(x[sem._order], sem._starts, axis=0)
    means = sums / sem._counts[:, None]
    return means[sem._slot[sem.assignments]]


# ---------------------------------------------------------------------------
# Debug exports
# ---------------------------------------------------------------------------

def write_adjacency_tsv(matrix: CsrMatrix, path) -> None:
    """Dump stored entries as ``src<TAB>dst<TAB>weight`` rows (row-major,
    columns ascending).  Weights use round-trippable float repr."""
    rows, cols, vals = matrix.to_coo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("src\tdst\tweight\n")
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r}\t{c}\t{float(v)!r}\n")


def write_assignments_tsv(sem: SemanticAdjacency, path) -> None:
    """Dump cluster assignments as ``node<TAB>cluster`` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node\tcluster\n")
        for node, cluster in enumerate(sem.assignments):
            fh.write(f"{node}\t{cluster}\n")
