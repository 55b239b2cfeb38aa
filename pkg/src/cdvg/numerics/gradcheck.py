"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericalFailure
from .tensor import Tensor


def grad_check(fn: Callable[[Tensor], Tensor], point, epsilon: float = 1e-5) -> float:
    """Max relative error between the analytic and numeric gradient of ``fn`` at ``point``.

    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    return grad_check_params(lambda: fn(x), [x], epsilon)


def grad_check_params(fn: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5) -> float:
    """Same as :func:`grad_check` but over every coordinate of several leaf tensors.

    ``fn`` is re-evaluated with each coordinate perturbed in place, so any
    discrete choices it makes (e.g. Top-K selection) must be frozen by the caller.
    """
    for p in params:
        p.grad = None
    out = fn()
    out.backward()
    worst = 0.0
    for pi, p in enumerate(params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(fn().data)
            flat[i] = orig - epsilon
            f_minus = float(fn().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalFailure(f"non-finite value perturbing parameter {pi} coordinate {i}")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
