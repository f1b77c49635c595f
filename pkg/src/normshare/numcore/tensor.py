"""Tensors, recorded operations and reverse-mode traversal."""

from __future__ import annotations

import itertools
import threading
import weakref
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Input shapes do not conform to the operation."""


class ParameterError(ValueError):
    """An operation parameter is outside its domain."""


class ContractError(RuntimeError):
    """A documented precondition was violated by the caller."""


_state = threading.local()
_order = itertools.count()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable recording inside the block (inference, finite differences)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense array with an optional gradient buffer.

    Leaves created by the user (parameters, inputs) have ``node is None``;
    outputs of recorded operations point at the :class:`Node` that made them.
    """

    __slots__ = ("value", "grad", "requires_grad", "node", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(value, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.value = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.value.reshape(-1)

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True).reshape(self.value.shape)
        else:
            self.grad += g.reshape(self.value.shape)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


class Node:
    """One recorded operation: inputs, (weakly held) outputs, backward rule.

    ``backward_fn`` maps the list of output gradients (``None`` where an
    output received no gradient) to one gradient per input (``None`` to skip).
    """

    __slots__ = ("op", "inputs", "outputs", "backward_fn", "order")

    def __init__(self, op: str, inputs: Sequence[Tensor], outputs: Sequence[Tensor],
                 backward_fn: Callable[[list], Sequence]):
        self.op = op
        self.inputs = tuple(inputs)
        self.outputs = tuple(weakref.ref(t) for t in outputs)
        self.backward_fn = backward_fn
        self.order = next(_order)


def record(op: str, inputs: Sequence[Tensor], outputs: Sequence[Tensor], backward_fn) -> None:
    """Attach a node to ``outputs`` if recording is on and any input needs grad."""
    if not grad_enabled() or not any(t.requires_grad for t in inputs):
        return
    node = Node(op, inputs, outputs, backward_fn)
    for t in outputs:
        t.node = node
        t.requires_grad = True


class Tape:
    """The operations reachable from an output, in recording order.

    Recording order is a topological order because a node can only be created
    after all of its inputs exist.
    """

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen: dict[int, Node] = {}
        stack = [out.node] if out.node is not None else []
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen[id(node)] = node
            for t in node.inputs:
                if t.node is not None and id(t.node) not in seen:
                    stack.append(t.node)
        return cls(sorted(seen.values(), key=lambda n: n.order))

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(x) into ``x.grad`` for every tensor that needs it.

    Gradients add onto whatever is already in ``.grad``, so a parameter used
    in several places (or across several losses) receives the sum.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_output(loss)
    loss.accumulate(np.ones_like(loss.value))
    for node in reversed(tape.nodes):
        outs = [ref() for ref in node.outputs]
        grads = [o.grad if o is not None else None for o in outs]
        if all(g is None for g in grads):
            continue
        in_grads = node.backward_fn(grads)
        for t, g in zip(node.inputs, in_grads):
            if g is not None and t.requires_grad:
                t.accumulate(g)
        # intermediates are consumed exactly once; free them
        for o in outs:
            if o is not None and o is not loss:
                o.grad = None
    return tape
