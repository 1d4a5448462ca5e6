"""Reverse-mode autodiff on numpy arrays.

Every operation returns a :class:`Tensor`. When any input requires a
gradient (and recording is enabled) the result keeps references to its
parents and a closure mapping the upstream gradient to one gradient per
parent. :func:`backward` walks that graph once in reverse topological
order and then releases it.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from ..exceptions import DimensionError, StateError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    # convenience -----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data.item())

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return len(self.data)

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
        return ops.neg(self)

    def __pow__(self, exponent):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)

    def backward(self, grad=None) -> None:
        backward(self, grad)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


_observers: list = []


def add_result_observer(fn) -> None:
    """Call ``fn(array)`` for the data of every op result until removed."""
    _observers.append(fn)


def remove_result_observer(fn) -> None:
    _observers.remove(fn)


def make_result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap ``data``; record ``backward_fn`` if any parent needs a gradient."""
    out = Tensor(data)
    for fn in _observers:
        fn(out.data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent._backward is not None and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    The graph is released afterwards; a second call raises :class:`StateError`.
    """
    if loss._consumed:
        raise StateError("backward already called on this graph; run the forward pass again")
    if not loss.requires_grad:
        raise StateError("loss does not depend on any tensor that requires grad")
    if grad is None:
        if loss.data.size != 1:
            raise DimensionError(f"backward without explicit grad needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    grad = np.asarray(grad, dtype=loss.dtype)
    if loss.is_leaf:
        loss.grad = grad if loss.grad is None else loss.grad + grad
        return

    order = _topological(loss)
    pending: dict[int, np.ndarray] = {id(loss): grad}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
    for node in order:
        node._backward = None
        node._parents = ()
        node._consumed = True
