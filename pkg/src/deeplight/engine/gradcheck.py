"""Central finite-difference checks for the differentiable ops."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor


def gradcheck(fn: Callable[[], Tensor], wrt: Sequence[Tensor],
              eps: float = 1e-3, seed: int = 0) -> float:
    """Worst relative error between analytic and numeric grads of fn().

    fn rebuilds its output from the live `wrt` tensors on every call, so the
    checker can perturb `tensor.data` in place. The output is reduced to a
    scalar through a fixed random projection; the projection sum is computed
    in float64 to keep cancellation out of the comparison.
    """
    out0 = fn()
    rng = np.random.default_rng(seed)
    proj = rng.uniform(0.5, 1.5, size=out0.shape)

    loss = ops.sum_(ops.mul(out0, Tensor(proj)))
    loss.backward()
    analytic = []
    for t in wrt:
        if t.grad is None:
            raise AssertionError("wrt tensor received no gradient")
        analytic.append(np.array(t.grad, dtype=np.float64))
        t.grad = None

    worst = 0.0
    for t, a in zip(wrt, analytic):
        num = np.zeros(t.data.shape, dtype=np.float64).reshape(-1)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float((fn().data.astype(np.float64) * proj).sum())
            flat[i] = orig - eps
            dn = float((fn().data.astype(np.float64) * proj).sum())
            flat[i] = orig
            num[i] = (up - dn) / (2.0 * eps)
        num = num.reshape(t.data.shape)
        scale = max(np.abs(a).max(), np.abs(num).max(), 1e-6)
        rel = float(np.abs(a - num).max() / scale)
        worst = max(worst, rel)
    return worst
