"""Adam with persistent moment buffers, updating parameters in place."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class OptimError(RuntimeError):
    pass


class Adam:
    """Standard Adam (bias-corrected). Parameters are a name -> Tensor map.

    step() requires every parameter to carry a grad (a missing one means the
    forward pass silently dropped a parameter) and zeroes grads afterwards.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                raise OptimError(f"missing gradient for parameter '{name}'")
            g = p.grad
            dt = p.data.dtype.type
            m = self.m[name]
            v = self.v[name]
            m *= dt(b1)
            m += dt(1.0 - b1) * g
            v *= dt(b2)
            v += dt(1.0 - b2) * (g * g)
            mhat = m / dt(bc1)
            vhat = v / dt(bc2)
            p.data -= dt(self.lr) * mhat / (np.sqrt(vhat) + dt(self.eps))
            p.grad = None

    # checkpoint support -----------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for k in self.params:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, records: dict[str, np.ndarray], t: int) -> None:
        for k, p in self.params.items():
            for prefix, store in (("opt.m.", self.m), ("opt.v.", self.v)):
                key = prefix + k
                if key not in records:
                    raise OptimError(f"checkpoint missing optimizer record '{key}'")
                arr = records[key]
                if arr.shape != p.data.shape:
                    raise OptimError(
                        f"optimizer record '{key}' has shape {arr.shape}, "
                        f"expected {p.data.shape}")
                store[k] = arr.astype(p.data.dtype).copy()
        self.t = int(t)
