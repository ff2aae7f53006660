"""Adam optimizer with coupled L2 regularization.

The L2 term (``weight_decay * value``) is added to the raw gradient before
the moment updates — the classic coupled formulation, not the decoupled
variant.  Moments use beta1=0.9, beta2=0.999 with bias correction and
eps=1e-8 inside the denominator.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter
from .errors import InvalidParameterError, TrainingAbortedError


class Adam:
    """Holds first/second moment state for a fixed parameter list."""

    def __init__(self, params: list[Parameter], lr: float,
                 weight_decay: float = 0.0, *, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise InvalidParameterError("learning rate must be positive")
        if weight_decay < 0:
            raise InvalidParameterError("weight decay must be non-negative")
        self.params = list(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        """Apply one update from the accumulated gradients, then zero them.

        Raises :class:`TrainingAbortedError` if any gradient is non-finite,
        leaving parameters untouched.
        """
        for i, p in enumerate(self.params):
            if not np.all(np.isfinite(p.grad)):
                raise TrainingAbortedError(
                    f"non-finite gradient in parameter {i} at step {self.t + 1}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad + self.weight_decay * p.value
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad.fill(0.0)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(optimizer: Adam) -> None:
    """Functional alias for :meth:`Adam.step`."""
    optimizer.step()
