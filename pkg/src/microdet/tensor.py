"""Core autodiff values: float64 tensors, the gradient tape, and backward.

`Tensor` is the single numeric currency of the toolkit: a dense row-major
float64 array (training and gradient-check precision; checkpoints store
float32). Differentiable primitives live in `microdet.ops`; this module
owns the value types, the recording `Tape`, and reverse-mode `backward`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import GraphError

Array = np.ndarray

_TAPE_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    """The innermost recording tape, or None outside any `with Tape():`."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense N-D float64 value, immutable once produced by an op.

    Leaves created with ``requires_grad=True`` receive gradient
    contributions in ``.grad`` when `backward` runs; gradients of
    intermediate values are transient and never stored on the tensor.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        # np.asarray with order="C" keeps 0-d arrays 0-d (ascontiguousarray
        # would promote them to 1-d and break scalar-loss bookkeeping).
        self.data: Array = np.asarray(data, dtype=np.float64, order="C")
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar routes through ops; imported lazily to avoid a cycle.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __truediv__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a primitive; divide by scalars")
        return ops.mul(self, 1.0 / float(other))


class Parameter(Tensor):
    """Named trainable leaf with a preallocated accumulating gradient.

    ``trainable=False`` parameters (BatchNorm running statistics, counters)
    are still part of the registry and checkpoints but never receive
    gradients and are ignored by optimizers.
    """

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = bool(trainable)
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


class _Node:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out: Tensor, parents: tuple, backward_fn: Callable):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Execution-ordered record of primitive applications.

    Eager execution order is a topological order of the data-flow graph,
    so walking the record backwards visits ops in exact reverse
    topological order.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._out_ids: set[int] = set()

    def record(self, out: Tensor, parents: tuple, backward_fn: Callable) -> None:
        self._nodes.append(_Node(out, parents, backward_fn))
        self._out_ids.add(id(out))

    def __len__(self) -> int:
        return len(self._nodes)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False


def backward(tape: Tape, loss: Tensor, upstream: float | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into the ``.grad`` of every reachable leaf.

    Calling twice without zeroing gradients accumulates. ``upstream``
    overrides the seed gradient (default 1.0); seeding 0.0 provably leaves
    every parameter gradient unchanged.
    """
    if loss.size != 1:
        raise GraphError(f"loss must be a scalar tensor, got shape {loss.shape}")
    if id(loss) not in tape._out_ids:
        raise GraphError("loss was not produced by a primitive recorded on this tape")
    seed = 1.0 if upstream is None else float(upstream)
    flowing: dict[int, Array] = {id(loss): np.full_like(loss.data, seed)}
    for node in reversed(tape._nodes):
        grad_out = flowing.pop(id(node.out), None)
        if grad_out is None:
            continue
        parent_grads = node.backward_fn(grad_out)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                continue
            if id(parent) in tape._out_ids:
                acc = flowing.get(id(parent))
                flowing[id(parent)] = pg if acc is None else acc + pg
            else:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pg


def collect_parameters(tensors: Sequence[Tensor]) -> list[Parameter]:
    """Filter a tensor sequence down to its Parameter leaves."""
    return [t for t in tensors if isinstance(t, Parameter)]
