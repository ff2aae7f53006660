"""Reverse-mode automatic differentiation over dense float64 matrices.

A :class:`Tape` records operations as they execute; :meth:`Tape.backward`
replays the records in reverse, exactly once each, accumulating gradients.
Each backward call works on its own cotangent workspace and merges the
results into ``Tensor.grad`` at the end, so calling backward twice without
zeroing doubles every gradient exactly.

All ops take the tape as their first argument; passing ``tape=None`` runs
the forward computation without recording (evaluation mode).
"""

from __future__ import annotations

import numpy as np

from .connectivity import SemanticAdjacency, semantic_propagate
from .errors import InvalidParameterError, ShapeError
from .sparse import CsrMatrix, as_dense, spmm


class Tensor:
    """A 2-D float64 value with an optional gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = as_dense(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def accumulate_grad(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += delta


class Parameter(Tensor):
    """A trainable tensor; always requires a gradient."""

    __slots__ = ()

    def __init__(self, value):
        super().__init__(value, requires_grad=True)
        self.grad = np.zeros_like(self.value)


class Tape:
    """Operation recorder for one forward pass."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def record(self, out: Tensor, backward_fn) -> None:
        self._records.append((out, backward_fn))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into ``.grad`` of every tensor that
        requires a gradient and participated in the recorded computation.

        ``loss`` must be a 1×1 tensor.  Records are visited in reverse
        recording order, each exactly once.
        """
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
        cot: dict[int, list] = {}

        def accum(t: Tensor, delta: np.ndarray) -> None:
            if not t.requires_grad:
                return
            entry = cot.get(id(t))
            if entry is None:
                cot[id(t)] = [t, delta.copy()]
            else:
                entry[1] += delta

        accum(loss, np.ones((1, 1)))
        for out, backward_fn in reversed(self._records):
            entry = cot.pop(id(out), None)
            if entry is None:
                continue
            g = entry[1]
            out.accumulate_grad(g)
            backward_fn(g, accum)
        for t, g in cot.values():
            t.accumulate_grad(g)


def _maybe_record(tape: Tape | None, out: Tensor, backward_fn) -> None:
    if tape is not None and out.requires_grad:
        tape.record(out, backward_fn)


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------

def matmul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape} do not align")
    out = Tensor(a.value @ b.value,
                 requires_grad=a.requires_grad or b.requires_grad)

    def backward_fn(g, accum):
        if a.requires_grad:
            accum(a, g @ b.value.T)
        if b.requires_grad:
            accum(b, a.value.T @ g)

    _maybe_record(tape, out, backward_fn)
    return out


def propagate(tape: Tape | None, operator, x: Tensor) -> Tensor:
    """Multiply by a symmetric propagation operator (a normalized
    :class:`CsrMatrix` or a :class:`SemanticAdjacency`).

    The backward pass applies the same operator to the incoming gradient,
    which is the transpose rule specialized to symmetric operators.
    """
    if isinstance(operator, CsrMatrix):
        out_value = spmm(operator, x.value)

        def apply_op(g):
            return spmm(operator, g)
    elif isinstance(operator, SemanticAdjacency):
        out_value = semantic_propagate(operator, x.value)

        def apply_op(g):
            return semantic_propagate(operator, g)
    else:
        raise InvalidParameterError(
            f"unsupported propagation operator type {type(operator).__name__}")
    out = Tensor(out_value, requires_grad=x.requires_grad)

    def backward_fn(g, accum):
        accum(x, apply_op(g))

    _maybe_record(tape, out, backward_fn)
    return out


def concat_cols(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ShapeError("column concat needs equal row counts")
    out = Tensor(np.concatenate([a.value, b.value], axis=1),
                 requires_grad=a.requires_grad or b.requires_grad)
    split = a.shape[1]

    def backward_fn(g, accum):
        if a.requires_grad:
            accum(a, g[:, :split])
        if b.requires_grad:
            accum(b, g[:, split:])

    _maybe_record(tape, out, backward_fn)
    return out


def relu(tape: Tape | None, a: Tensor) -> Tensor:
    mask = a.value > 0.0
    out = Tensor(np.where(mask, a.value, 0.0), requires_grad=a.requires_grad)

    def backward_fn(g, accum):
        accum(a, g * mask)

    _maybe_record(tape, out, backward_fn)
    return out


def dropout(tape: Tape | None, a: Tensor, rate: float,
            rng: np.random.Generator | None = None, *,
            training: bool = True, mask: np.ndarray | None = None) -> Tensor:
    """Inverted dropout: keeps each entry with probability ``1 - rate`` and
    scales kept entries by ``1 / (1 - rate)`` so the expectation is the
    identity.  In evaluation mode (``training=False``) it is the identity.

    The same mask drawn in the forward pass is reused in the backward pass.
    A pre-drawn boolean ``mask`` may be supplied for reproducible checks.
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if mask is None:
        if rng is None:
            raise InvalidParameterError("training-mode dropout needs an rng")
        mask = rng.random(a.shape) >= rate
    keep_scale = 1.0 / (1.0 - rate)
    out = Tensor(a.value * (mask * keep_scale),
                 requires_grad=a.requires_grad)

    def backward_fn(g, accum):
        accum(a, g * (mask * keep_scale))

    _maybe_record(tape, out, backward_fn)
    return out


def add(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    out = Tensor(a.value + b.value,
                 requires_grad=a.requires_grad or b.requires_grad)

    def backward_fn(g, accum):
        if a.requires_grad:
            accum(a, g)
        if b.requires_grad:
            accum(b, g)

    _maybe_record(tape, out, backward_fn)
    return out


def scale(tape: Tape | None, a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out = Tensor(a.value * factor, requires_grad=a.requires_grad)

    def backward_fn(g, accum):
        accum(a, g * factor)

    _maybe_record(tape, out, backward_fn)
    return out


def add_row_bias(tape: Tape | None, x: Tensor, bias: Tensor) -> Tensor:
    if bias.shape != (1, x.shape[1]):
        raise ShapeError(
            f"bias shape {bias.shape} does not broadcast over {x.shape}")
    out = Tensor(x.value + bias.value,
                 requires_grad=x.requires_grad or bias.requires_grad)

    def backward_fn(g, accum):
        if x.requires_grad:
            accum(x, g)
        if bias.requires_grad:
            accum(bias, g.sum(axis=0, keepdims=True))

    _maybe_record(tape, out, backward_fn)
    return out


def sum_all(tape: Tape | None, a: Tensor) -> Tensor:
    out = Tensor(np.array([[a.value.sum()]]), requires_grad=a.requires_grad)

    def backward_fn(g, accum):
        accum(a, np.full_like(a.value, g[0, 0]))

    _maybe_record(tape, out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# Softmax / cross-entropy
# ---------------------------------------------------------------------------

def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Numerically stable row softmax of a plain array; rows sum to 1."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _subset_ce_parts(logits: Tensor, ids: np.ndarray, labels: np.ndarray):
    ids = np.asarray(ids, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if ids.shape != labels.shape:
        raise ShapeError("ids and labels must have equal length")
    if ids.size and (ids.min() < 0 or ids.max() >= logits.shape[0]):
        raise ShapeError("node id out of range")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError("label out of range")
    z = logits.value[ids]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    ce = lse - z[np.arange(ids.size), labels]
    return ids, labels, z, ce


def weighted_ce(tape: Tape | None, logits: Tensor, ids, labels,
                node_weights) -> Tensor:
    """Weighted-sum softmax cross-entropy over a node subset:
    ``sum_i w_i * (logsumexp(z_i) - z_i[y_i])``.

    ``node_weights`` holds one weight per subset entry (already mapped from
    class weights by the caller).  The gradient w.r.t. row i of the logits
    is ``w_i * (softmax(z_i) - onehot(y_i))``.
    """
    ids, labels, z, ce = _subset_ce_parts(logits, ids, labels)
    w = np.asarray(node_weights, dtype=np.float64).ravel()
    if w.shape != ids.shape:
        raise ShapeError("node_weights must match subset length")
    out = Tensor(np.array([[float(np.dot(w, ce))]]),
                 requires_grad=logits.requires_grad)

    def backward_fn(g, accum):
        probs = softmax_rows(z)
        probs[np.arange(ids.size), labels] -= 1.0
        probs *= (g[0, 0] * w)[:, None]
        dz = np.zeros_like(logits.value)
        np.add.at(dz, ids, probs)
        accum(logits, dz)

    _maybe_record(tape, out, backward_fn)
    return out


def mean_ce(tape: Tape | None, logits: Tensor, ids, labels) -> Tensor:
    """Mean softmax cross-entropy over a node subset against hard labels.

    An empty subset yields an exact-zero constant with no gradient.
    """
    ids = np.asarray(ids, dtype=np.int64).ravel()
    if ids.size == 0:
        return Tensor(np.zeros((1, 1)))
    ids, labels, z, ce = _subset_ce_parts(logits, ids, labels)
    out = Tensor(np.array([[float(ce.mean())]]),
                 requires_grad=logits.requires_grad)

    def backward_fn(g, accum):
        probs = softmax_rows(z)
        probs[np.arange(ids.size), labels] -= 1.0
        probs *= g[0, 0] / ids.size
        dz = np.zeros_like(logits.value)
        np.add.at(dz, ids, probs)
        accum(logits, dz)

    _maybe_record(tape, out, backward_fn)
    return out
