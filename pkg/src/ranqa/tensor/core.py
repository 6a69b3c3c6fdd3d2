"""Reverse-mode differentiation over dense numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when it participates in a graph,
remembers its parents plus a closure mapping the upstream gradient to one
gradient per parent.  Graphs are rebuilt on every forward pass; there is no
global tape.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class StateError(RuntimeError):
    pass


class ConsistencyError(RuntimeError):
    pass


_grad_enabled = True


class no_grad:
    """Context manager that suppresses graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __getitem__(self, idx):
        from . import ops
        return ops.index(self, idx)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op result; attaches graph links only when some parent needs grad."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.parents = ()
    out.backward_fn = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. each tensor in ``wrt``.

    Tensors not reachable from ``loss`` receive zeros.
    """
    wrt = list(wrt)
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    keep = {id(t) for t in wrt}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_toposort(loss)):
            g = grads.get(id(node)) if id(node) in keep else grads.pop(id(node), None)
            if g is None or node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                _check_finite(pg, f"backward of {node.op}")
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
    out = []
    for t in wrt:
        g = grads.get(id(t))
        out.append(np.zeros_like(t.data) if g is None else g.astype(t.data.dtype, copy=False))
    return out


@dataclass
class Entry:
    tensor: Tensor
    trainable: bool = True


class ParamStore:
    """Ordered name -> Tensor map with per-entry optimizer state.

    Non-trainable entries (batch-norm running statistics, counters) are
    saved with the store but never touched by optimizers or clipping.
    """

    def __init__(self):
        self.entries: "OrderedDict[str, Entry]" = OrderedDict()
        self.opt_state: dict[str, dict[str, np.ndarray]] = {}
        self.opt_kind: str | None = None
        self.step_count = 0

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if not name:
            raise ValueError("parameter names must be non-empty")
        if name in self.entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.array(value, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        t = Tensor(arr, requires_grad=trainable)
        self.entries[name] = Entry(t, trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def trainable(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, e.tensor) for k, e in self.entries.items() if e.trainable)

    def is_trainable(self, name: str) -> bool:
        return self.entries[name].trainable

    def freeze(self) -> None:
        for e in self.entries.values():
            e.tensor.requires_grad = False

    def unfreeze(self) -> None:
        for e in self.entries.values():
            e.tensor.requires_grad = e.trainable

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, e.tensor.data) for k, e in self.entries.items())

    def copy_from(self, other: "ParamStore") -> None:
        for name, e in self.entries.items():
            src = other[name].data
            if src.shape != e.tensor.data.shape:
                raise ShapeError(f"{name}: shape {src.shape} != {e.tensor.data.shape}")
            e.tensor.data[...] = src

    def astype(self, dtype) -> None:
        for e in self.entries.values():
            e.tensor.data = e.tensor.data.astype(dtype)


@dataclass
class GradReport:
    loss: float
    grads: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def __getitem__(self, name):
        return self.grads[name]


def backward(loss: Tensor, params: ParamStore) -> GradReport:
    """Reverse-mode gradients of ``loss`` for every trainable entry of ``params``."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    value = float(loss.data.reshape(-1)[0])
    if not np.isfinite(value):
        raise NonFiniteError("loss is not finite")
    named = params.trainable()
    gs = grad(loss, named.values())
    return GradReport(value, OrderedDict(zip(named.keys(), gs)))
