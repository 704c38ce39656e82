"""Central finite-difference gradient checking.

The numeric side only ever calls the forward closure, so it is independent
of the tape it certifies. Comparison rule: a gradient entry passes when

    |analytic - numeric| <= max(atol, rtol * max(|analytic|, |numeric|))

with rtol = 1e-4 and an absolute floor of 1e-7 by default.
"""

from __future__ import annotations

import numpy as np

from .optim import Parameter
from .tensor import Tensor, backward


def numeric_grad(loss_fn, tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of loss_fn() w.r.t. every entry of `tensor`."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = loss_fn().item()
        flat[i] = keep - h
        lo = loss_fn().item()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def check_gradients(loss_fn, params: list[Parameter], rtol: float = 1e-4,
                    atol: float = 1e-7, h: float = 1e-5) -> float:
    """Compare tape gradients against central differences.

    Returns the worst violation ratio |a-n| / max(atol, rtol*scale); values
    <= 1 mean every entry passed.
    """
    for p in params:
        p.value.zero_grad()
    loss = loss_fn()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.value.grad
        if analytic is None:
            raise AssertionError(f"no gradient reached parameter {p.name}")
        numeric = numeric_grad(loss_fn, p.value, h)
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        tol = np.maximum(atol, rtol * scale)
        ratio = float((np.abs(analytic - numeric) / tol).max())
        worst = max(worst, ratio)
        p.value.zero_grad()
    return worst
