"""Reverse-mode autodiff core: a numpy-backed Tensor and the backward pass.

The engine is deliberately small: dense float arrays, a tape of executed ops,
and a topological backward walk. Training runs in float32; tests that need
headroom switch the engine to float64 with `using_dtype`.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_default_dtype = np.float32
_grad_enabled = True

# Sentinel marking a loss whose graph has already been walked.
_CONSUMED = object()


class GraphError(RuntimeError):
    pass


def set_default_dtype(dtype) -> None:
    """Set the dtype new tensors are created with (float32 or float64)."""
    global _default_dtype
    dt = np.dtype(dtype)
    if dt.type not in (np.float32, np.float64):
        raise ValueError(f"unsupported default dtype: {dtype!r}")
    _default_dtype = dt.type


def default_dtype() -> type:
    return _default_dtype


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the engine default dtype."""
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class no_grad(contextlib.ContextDecorator):
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One recorded op: parent tensors plus the closure producing their grads."""

    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents: Sequence["Tensor"], backward_fn: Callable):
        self.parents = tuple(parents)
        self.backward_fn = backward_fn


class Tensor:
    """Dense n-d float array, optionally recorded on the differentiation graph.

    `requires_grad` marks leaves whose gradient should be accumulated and kept
    (parameters, or inputs under a gradient check). Op outputs carry a `node`
    instead; their grads are freed as soon as the backward walk passes them.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"],
                 backward_fn: Callable) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = False
        out.node = None
        if _grad_enabled and any(p.requires_grad or p.node is not None for p in parents):
            out.node = Node(parents, backward_fn)
        return out

    # -- introspection ------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.node = None
        return out

    def __repr__(self) -> str:
        flags = []
        if self.requires_grad:
            flags.append("requires_grad")
        if self.node is not None:
            flags.append("graph")
        tag = (" " + ",".join(flags)) if flags else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # -- autodiff ------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate grads of this scalar into every requires_grad leaf.

        The graph is consumed: saved activations are released as the walk
        passes them, and a second backward on the same loss raises.
        """
        if self.node is _CONSUMED:
            raise GraphError("backward already ran on this tensor; graph consumed")
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar, got shape {self.shape}")
        if self.node is None and not self.requires_grad:
            raise GraphError("tensor is not connected to a recorded graph "
                             "(built under no_grad, or from constant inputs)")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            node = t.node
            if node is None or node is _CONSUMED:
                continue
            grads = node.backward_fn(t.grad)
            for parent, g in zip(node.parents, grads):
                if g is None:
                    continue
                if parent.requires_grad or parent.node is not None:
                    if parent.grad is None:
                        parent.grad = g
                    else:
                        parent.grad = parent.grad + g
            t.node = None
            if not t.requires_grad:
                t.grad = None
        self.node = _CONSUMED

    # Small operator sugar; the op library in ops.py is the real surface.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the op graph (parents before children)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None and t.node is not _CONSUMED:
            for p in t.node.parents:
                stack.append((p, False))
    return order


def as_tensor(value, requires_grad: bool = False) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=requires_grad)
