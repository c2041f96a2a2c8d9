"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable operation that touches a tensor with ``requires_grad``
appends a record to the calling thread's tape. :func:`backward` replays the
records in reverse order and then clears the tape, so the lifecycle is one
tape per forward pass.

>>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
>>> backward((x * x).sum())
>>> x.grad
array([2., 4., 6.])
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class TapeRecord:
    output: "Tensor"
    inputs: tuple["Tensor", ...]
    backward: BackwardFn


class GradTape:
    """Ordered log of differentiable operations for one forward pass."""

    def __init__(self) -> None:
        self.records: list[TapeRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def record(self, output: "Tensor", inputs: tuple["Tensor", ...], fn: BackwardFn) -> None:
        self.records.append(TapeRecord(output, inputs, fn))

    def clear(self) -> None:
        self.records.clear()


class _ThreadState(threading.local):
    def __init__(self) -> None:
        self.tape = GradTape()
        self.enabled = True


_state = _ThreadState()


def get_tape() -> GradTape:
    """Return the tape owned by the calling thread."""
    return _state.tape


def is_grad_enabled() -> bool:
    return _state.enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    previous = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(value: "Tensor | np.ndarray | float") -> "Tensor":
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """An n-dimensional float64 array that can take part in autodiff.

    ``grad`` is accumulated (not overwritten) on leaf tensors by
    :func:`backward`; call :meth:`zero_grad` between optimisation steps.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._is_leaf = True

    @classmethod
    def from_op(cls, data: np.ndarray, inputs: tuple["Tensor", ...], fn: BackwardFn) -> "Tensor":
        """Wrap an op result and record it on the tape if any input needs grad."""
        out = cls(data)
        if _state.enabled and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._is_leaf = False
            _state.tape.record(out, inputs, fn)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)),
        )

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a / b,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
        )

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        return Tensor.from_op(
            a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),)
        )

    # -- reductions and shape ---------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def fn(g):
            if axis is not None and not keepdims:
                axes = (axis,) if isinstance(axis, int) else axis
                g = np.expand_dims(g, tuple(a % len(shape) for a in axes))
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(np.asarray(out), (self,), fn)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else int(
            np.prod([self.shape[a] for a in ((axis,) if isinstance(axis, int) else axis)])
        )
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor.from_op(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(original),)
        )

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape

        def fn(g):
            full = np.zeros(shape)
            full[index] = g
            return (full,)

        return Tensor.from_op(np.array(self.data[index]), (self,), fn)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor reachable from a scalar ``loss``.

    Leaf tensors accumulate into any existing gradient; intermediate tensors
    receive their total gradient. The calling thread's tape is cleared
    afterwards.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    if loss._is_leaf:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        tape.clear()
        return
    if not tape.records:
        raise ContractError("backward called on an empty tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for record in reversed(tape.records):
        g = pending.pop(id(record.output), None)
        if g is None:
            continue
        record.output.grad = g
        for tensor, tg in zip(record.inputs, record.backward(g)):
            if tg is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + tg
            else:
                pending[key] = tg
            if tensor._is_leaf:
                leaves[key] = tensor
    for key, tensor in leaves.items():
        g = pending[key]
        if g.shape != tensor.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match tensor {tensor.shape}")
        tensor.grad = g if tensor.grad is None else tensor.grad + g
    tape.clear()
