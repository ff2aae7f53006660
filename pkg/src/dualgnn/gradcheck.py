"""Central finite-difference validation of analytic gradients.

Used by the test suite and by the ``grad-check`` CLI subcommand.  A check
builds the same scalar loss twice: once on a tape for analytic gradients,
and many times without a tape while perturbing one parameter entry at a
time for the numeric reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape
from .connectivity import build_semantic
from .sparse import CsrMatrix, add_self_loops, sym_normalize


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def numeric_gradient(loss_fn, param: Parameter, h: float) -> np.ndarray:
    """Central differences: (f(x+h) - f(x-h)) / 2h, one entry at a time.
    ``loss_fn`` must be deterministic and read ``param.value`` in place."""
    grad = np.zeros_like(param.value)
    flat_value = param.value.ravel()
    flat_grad = grad.ravel()
    for idx in range(flat_value.size):
        orig = flat_value[idx]
        flat_value[idx] = orig + h
        f_plus = loss_fn()
        flat_value[idx] = orig - h
        f_minus = loss_fn()
        flat_value[idx] = orig
        flat_grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def check_gradient(name: str, build_loss, params: list[Parameter], *,
                   h: float = 1e-5, tolerance: float = 1e-5
                   ) -> GradCheckResult:
    """Compare analytic and central-difference gradients of a scalar loss.

    ``build_loss(tape)`` must rebuild the same computation each call; with
    ``tape=None`` it runs untaped (used for the numeric probes).  The error
    measure is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)``,
    maximized over all entries of all parameters.
    """
    tape = Tape()
    loss = build_loss(tape)
    for p in params:
        p.zero_grad()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def loss_value():
        return float(build_loss(None).value[0, 0])

    max_rel = 0.0
    for p, a in zip(params, analytic):
        n = numeric_gradient(loss_value, p, h)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        max_rel = max(max_rel, float((np.abs(a - n) / denom).max()))
    return GradCheckResult(name=name, max_rel_err=max_rel,
                           tolerance=tolerance)


def standard_checks(seed: int = 0) -> list[GradCheckResult]:
    """Run the finite-difference check over every differentiable op and a
    composite forward mirroring the model's per-node loss structure."""
    rng = np.random.default_rng(seed)
    results = []

    def fresh(shape):
        return Parameter(rng.standard_normal(shape))

    # -- matmul -----------------------------------------------------------
    a, b = fresh((5, 4)), fresh((4, 3))

    def matmul_loss(tape):
        return ad.sum_all(tape, ad.relu(tape, ad.matmul(tape, a, b)))

    results.append(check_gradient("matmul+relu", matmul_loss, [a, b]))

    # -- sparse propagate -------------------------------------------------
    dense = (rng.random((6, 6)) < 0.4).astype(float)
    dense = np.triu(dense, 1)
    dense = dense + dense.T
    adj = sym_normalize(add_self_loops(CsrMatrix.from_dense(dense), 1.0))
    x = fresh((6, 3))

    def propagate_loss(tape):
        return ad.sum_all(tape, ad.relu(tape, ad.propagate(tape, adj, x)))

    results.append(check_gradient("propagate(csr)+relu", propagate_loss, [x]))

    # -- semantic propagate ------------------------------------------------
    sem = build_semantic(rng.integers(0, 3, size=6), num_clusters=3)
    xs = fresh((6, 3))

    def sem_loss(tape):
        return ad.sum_all(tape, ad.relu(tape, ad.propagate(tape, sem, xs)))

    results.append(check_gradient("propagate(semantic)+relu", sem_loss, [xs]))

    # -- concat_cols -------------------------------------------------------
    c1, c2 = fresh((4, 2)), fresh((4, 3))
    w = fresh((5, 2))

    def concat_loss(tape):
        return ad.sum_all(tape, ad.matmul(
            tape, ad.concat_cols(tape, c1, c2), w))

    results.append(check_gradient("concat_cols", concat_loss, [c1, c2, w]))

    # -- dropout (fixed mask) ----------------------------------------------
    d = fresh((5, 4))
    mask = rng.random((5, 4)) >= 0.5

    def dropout_loss(tape):
        return ad.sum_all(tape, ad.relu(
            tape, ad.dropout(tape, d, 0.5, mask=mask)))

    results.append(check_gradient("dropout", dropout_loss, [d]))

    # -- add / scale / add_row_bias -----------------------------------------
    e1, e2 = fresh((3, 3)), fresh((3, 3))
    bias = fresh((1, 3))

    def arith_loss(tape):
        s = ad.add(tape, ad.scale(tape, e1, 0.7), e2)
        return ad.sum_all(tape, ad.relu(tape, ad.add_row_bias(tape, s, bias)))

    results.append(check_gradient("add+scale+bias", arith_loss,
                                  [e1, e2, bias]))

    # -- weighted cross-entropy ---------------------------------------------
    logits_w = fresh((6, 4))
    ids = np.array([0, 2, 3, 5])
    labels = np.array([1, 0, 3, 2])
    weights = np.array([0.5, 1.0, 0.25, 2.0])

    def wce_loss(tape):
        return ad.weighted_ce(tape, logits_w, ids, labels, weights)

    results.append(check_gradient("weighted_ce", wce_loss, [logits_w]))

    # -- mean cross-entropy --------------------------------------------------
    logits_m = fresh((6, 4))

    def mce_loss(tape):
        return ad.mean_ce(tape, logits_m, ids, labels)

    results.append(check_gradient("mean_ce", mce_loss, [logits_m]))

    # -- sum over a single parameter: gradient must be all ones -------------
    lone = fresh((3, 2))

    def sum_loss(tape):
        return ad.sum_all(tape, lone)

    results.append(check_gradient("sum_all", sum_loss, [lone]))

    return results
