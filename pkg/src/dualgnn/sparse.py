"""Canonical CSR sparse matrices and the graph operations built on them.

Dense matrices throughout the package are C-contiguous 2-D float64
``numpy.ndarray`` objects; this module provides :func:`as_dense` to coerce
and validate them.

A :class:`CsrMatrix` is always canonical: within each row the column indices
are strictly increasing (therefore duplicate-free) and every stored value is
finite.  :func:`CsrMatrix.from_coo` is the one constructor that accepts
arbitrary input and canonicalizes it, merging duplicate coordinates by
summation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateDegreeError, ShapeError


def as_dense(x, *, copy: bool = False) -> np.ndarray:
    """Coerce ``x`` to a C-contiguous 2-D float64 array.

    Raises :class:`ShapeError` if ``x`` is not 2-dimensional.
    """
    out = np.array(x, dtype=np.float64, order="C", copy=copy)
    if out.ndim != 2:
        raise ShapeError(f"expected a 2-D dense matrix, got ndim={out.ndim}")
    return out


@dataclass(eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with float64 values.

    Attributes
    ----------
    num_rows, num_cols:
        Matrix dimensions.
    row_offsets:
        int64 array of length ``num_rows + 1``; row ``i`` owns the slice
        ``[row_offsets[i], row_offsets[i + 1])`` of the index/value arrays.
    col_indices:
        int64 array of column indices, strictly increasing within each row.
    values:
        float64 array of stored values, all finite.
    """

    num_rows: int
    num_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    @staticmethod
    def from_coo(rows, cols, values, num_rows: int, num_cols: int) -> "CsrMatrix":
        """Build a canonical CSR matrix from coordinate triples.

        Duplicate coordinates are merged by summing their values.  Raises
        :class:`ShapeError` for out-of-range indices or mismatched lengths
        and ``ValueError`` for non-finite values.
        """
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(values, dtype=np.float64).ravel()
        if num_rows < 0 or num_cols < 0:
            raise ShapeError("matrix dimensions must be non-negative")
        if not (rows.shape == cols.shape == vals.shape):
            raise ShapeError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= num_rows:
                raise ShapeError("row index out of range")
            if cols.min() < 0 or cols.max() >= num_cols:
                raise ShapeError("column index out of range")
        if not np.all(np.isfinite(vals)):
            raise ValueError("sparse values must be finite")

        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            first = np.empty(rows.size, dtype=bool)
            first[0] = True
            first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(first)
            merged_vals = np.add.reduceat(vals, starts)
            rows, cols = rows[first], cols[first]
        else:
            merged_vals = vals

        counts = np.bincount(rows, minlength=num_rows)
        row_offsets = np.zeros(num_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=row_offsets[1:])
        return CsrMatrix(num_rows, num_cols,
                         row_offsets, cols.copy(), merged_vals)

    @staticmethod
    def from_dense(dense, tol: float = 0.0) -> "CsrMatrix":
        """Build from a dense array, keeping entries with ``|x| > tol``."""
        dense = as_dense(dense)
        rows, cols = np.nonzero(np.abs(dense) > tol)
        return CsrMatrix.from_coo(rows, cols, dense[rows, cols],
                                  dense.shape[0], dense.shape[1])

    def to_coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (rows, cols, values) coordinate arrays in stored order."""
        counts = np.diff(self.row_offsets)
        rows = np.repeat(np.arange(self.num_rows, dtype=np.int64), counts)
        return rows, self.col_indices.copy(), self.values.copy()

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_rows, self.num_cols), dtype=np.float64)
        rows, cols, vals = self.to_coo()
        out[rows, cols] = vals
        return out

    def row_sums(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.num_rows, dtype=np.int64),
                         np.diff(self.row_offsets))
        return np.bincount(rows, weights=self.values, minlength=self.num_rows)

    def diagonal(self) -> np.ndarray:
        diag = np.zeros(min(self.num_rows, self.num_cols), dtype=np.float64)
        rows, cols, vals = self.to_coo()
        ondiag = rows == cols
        diag[rows[ondiag]] = vals[ondiag]
        return diag

    def validate(self) -> None:
        """Check all canonical-form invariants; raise ValueError on failure."""
        ro, ci, v = self.row_offsets, self.col_indices, self.values
        if ro.shape != (self.num_rows + 1,):
            raise ShapeError("row_offsets has wrong length")
        if ro[0] != 0 or ro[-1] != ci.shape[0] or np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing from 0 to nnz")
        if ci.shape != v.shape:
            raise ShapeError("col_indices and values lengths differ")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.num_cols:
                raise ShapeError("column index out of range")
        for i in range(self.num_rows):
            seg = ci[ro[i]:ro[i + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise ValueError(f"row {i} columns not strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("stored values must be finite")

    def equals(self, other: "CsrMatrix") -> bool:
        """Exact structural and numerical equality."""
        return (self.num_rows == other.num_rows
                and self.num_cols == other.num_cols
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices)
                and np.array_equal(self.values, other.values))


def add_self_loops(a: CsrMatrix, weight: float = 1.0) -> CsrMatrix:
    """Return ``a`` with every diagonal entry replaced by ``weight``.

    Any existing diagonal values are discarded, not added to.  The input is
    unchanged.
    """
    if a.num_rows != a.num_cols:
        raise ShapeError("self-loops require a square matrix")
    if not np.isfinite(weight):
        raise ValueError("self-loop weight must be finite")
    rows, cols, vals = a.to_coo()
    off = rows != cols
    rows, cols, vals = rows[off], cols[off], vals[off]
    if weight != 0.0:
        diag = np.arange(a.num_rows, dtype=np.int64)
        rows = np.concatenate([rows, diag])
        cols = np.concatenate([cols, diag])
        vals = np.concatenate([vals, np.full(a.num_rows, float(weight))])
    return CsrMatrix.from_coo(rows, cols, vals, a.num_rows, a.num_cols)


def sym_normalize(a: CsrMatrix) -> CsrMatrix:
    """Symmetric degree normalization: entry (i, j) becomes
    ``a[i, j] / sqrt(deg_i * deg_j)`` where ``deg_i`` is row i's sum.

    Raises :class:`DegenerateDegreeError` if any row sum is not strictly
    positive (an all-zero row cannot be normalized).
    """
    if a.num_rows != a.num_cols:
        raise ShapeError("symmetric normalization requires a square matrix")
    deg = a.row_sums()
    bad = np.flatnonzero(deg <= 0.0)
    if bad.size:
        raise DegenerateDegreeError(
            f"{bad.size} row(s) have non-positive degree (first: row {bad[0]});"
            " add self-loops or remove isolated nodes before normalizing")
    inv_sqrt = 1.0 / np.sqrt(deg)
    rows, cols, vals = a.to_coo()
    scaled = vals * inv_sqrt[rows] * inv_sqrt[cols]
    out = CsrMatrix(a.num_rows, a.num_cols, a.row_offsets.copy(),
                    a.col_indices.copy(), scaled)
    return out


@njit(cache=True)
def _spmm_kernel(row_offsets, col_indices, values, x, out):  # pragma: no cover
    n_rows = row_offsets.shape[0] - 1
    n_cols = x.shape[1]
    for i in range(n_rows):
        for p in range(row_offsets[i], row_offsets[i + 1]):
            j = col_indices[p]
            v = values[p]
            for k in range(n_cols):
                out[i, k] += v * x[j, k]


def spmm(a: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse × dense product ``a @ x``.

    Accumulation order is fixed: each output row is built by walking that
    row's stored entries in order, so results are bit-reproducible across
    runs for identical inputs.
    """
    x = as_dense(x)
    if a.num_cols != x.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.num_rows}x{a.num_cols} sparse by "
            f"{x.shape[0]}x{x.shape[1]} dense")
    out = np.zeros((a.num_rows, x.shape[1]), dtype=np.float64)
    _spmm_kernel(a.row_offsets, a.col_indices, a.values, x, out)
    return out
