"""Tensor: an N-d float array with reverse-mode autodiff.

Conventions
-----------
* dtype is float32 for training; build graphs from float64 arrays to run
  gradient checks at oracle precision. Binary ops require both operands to
  share a dtype (python scalars are cast to the tensor's dtype).
* Broadcasting follows numpy rules; the backward pass sums gradients over
  broadcast axes so leaf gradients always match leaf shapes.
* Every op validates that its output is finite. NaN/Inf raises
  `NumericsError` naming the op instead of propagating silently. Wrap hot
  loops in `no_finite_checks()` only when profiling shows the scans matter.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

Scalar = Union[int, float]


class ShapeError(ValueError):
    """Operands have incompatible or undocumented shapes."""


class NumericsError(ArithmeticError):
    """An op produced NaN or Inf."""


_FINITE_CHECKS = True


@contextlib.contextmanager
def no_finite_checks():
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = False
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


def _check_finite(op: str, data: np.ndarray) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericsError(f"op {op!r} produced non-finite values")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float array plus the graph bookkeeping needed for backward().

    Fields: `data` (the cached forward value), `op` (identifier of the op
    that produced it, empty for leaves), `parents` (input nodes), `grad`
    (gradient accumulator, filled by backward), `requires_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        op: str = "",
        parents: Sequence["Tensor"] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self.parents = tuple(parents)
        self._backward = backward
        if op:
            _check_finite(op, arr)
        elif _FINITE_CHECKS and not np.all(np.isfinite(arr)):
            raise NumericsError("tensor constructed from non-finite data")

    # -- basic introspection -------------------------------------------------

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"expected a scalar tensor, got shape {self.shape}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'!r}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------------

    def detach(self) -> "Tensor":
        """Leaf view of this value, cut from the graph (shares data)."""
        return Tensor(self.data, requires_grad=False)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root.

        Populates `.grad` on every reachable requires_grad tensor; repeated
        calls without `zero_grad()` accumulate.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar root, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # Interior grads are only transport; free them so repeated backward
        # calls accumulate leaf gradients without double-counting interiors.
        for node in topo:
            if node._backward is not None:
                node.grad = None

    # -- helpers -------------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.dtype != self.dtype:
                raise ShapeError(f"dtype mismatch: {self.dtype} vs {other.dtype}")
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data + other.data
        needs = self.requires_grad or other.requires_grad

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(_unbroadcast(grad, self.shape))
            if other.requires_grad:
                other.accumulate_grad(_unbroadcast(grad, other.shape))

        return Tensor(out_data, needs, "add", (self, other), backward if needs else None)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(-grad)

        return Tensor(-self.data, self.requires_grad, "neg", (self,), backward if self.requires_grad else None)

    def __sub__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data - other.data
        needs = self.requires_grad or other.requires_grad

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(_unbroadcast(grad, self.shape))
            if other.requires_grad:
                other.accumulate_grad(_unbroadcast(-grad, other.shape))

        return Tensor(out_data, needs, "sub", (self, other), backward if needs else None)

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data * other.data
        needs = self.requires_grad or other.requires_grad

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(_unbroadcast(grad * other.data, self.shape))
            if other.requires_grad:
                other.accumulate_grad(_unbroadcast(grad * self.data, other.shape))

        return Tensor(out_data, needs, "mul", (self, other), backward if needs else None)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data / other.data
        needs = self.requires_grad or other.requires_grad

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(_unbroadcast(grad / other.data, self.shape))
            if other.requires_grad:
                other.accumulate_grad(_unbroadcast(-grad * self.data / (other.data**2), other.shape))

        return Tensor(out_data, needs, "div", (self, other), backward if needs else None)

    def __pow__(self, exponent: Scalar) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise ShapeError("pow supports scalar exponents only")
        out_data = self.data**exponent

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad * exponent * self.data ** (exponent - 1))

        return Tensor(out_data, self.requires_grad, "pow", (self,), backward if self.requires_grad else None)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._coerce(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError(f"matmul expects 2-d operands, got {self.shape} @ {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {self.shape} @ {other.shape}")
        out_data = self.data @ other.data
        needs = self.requires_grad or other.requires_grad

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad @ other.data.T)
            if other.requires_grad:
                other.accumulate_grad(self.data.T @ grad)

        return Tensor(out_data, needs, "matmul", (self, other), backward if needs else None)

    __matmul__ = matmul

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(grad):
            if not self.requires_grad:
                return
            g = grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.accumulate_grad(np.broadcast_to(g, self.shape).copy())

        return Tensor(out_data, self.requires_grad, "sum", (self,), backward if self.requires_grad else None)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad.reshape(self.shape))

        return Tensor(out_data, self.requires_grad, "reshape", (self,), backward if self.requires_grad else None)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        out_data = self.data.transpose(axes)
        inverse = tuple(np.argsort(axes))

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad.transpose(inverse))

        return Tensor(out_data, self.requires_grad, "transpose", (self,), backward if self.requires_grad else None)

    def __getitem__(self, key) -> "Tensor":
        out_data = self.data[key]

        def backward(grad):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, key, grad)
                self.accumulate_grad(full)

        return Tensor(out_data, self.requires_grad, "slice", (self,), backward if self.requires_grad else None)

    # -- elementwise nonlinearities -------------------------------------------

    def relu(self) -> "Tensor":
        out_data = np.maximum(self.data, 0)

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad * (self.data > 0))

        return Tensor(out_data, self.requires_grad, "relu", (self,), backward if self.requires_grad else None)

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        out_data = np.where(self.data > 0, self.data, self.data * np.asarray(slope, dtype=self.dtype))

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad * np.where(self.data > 0, 1.0, slope).astype(self.dtype))

        return Tensor(out_data, self.requires_grad, "leaky_relu", (self,), backward if self.requires_grad else None)

    def sigmoid(self) -> "Tensor":
        # exp on the negative half-line only, so no overflow at large |x|
        pos = self.data >= 0
        out_data = np.empty_like(self.data)
        out_data[pos] = 1.0 / (1.0 + np.exp(-self.data[pos]))
        ex = np.exp(self.data[~pos])
        out_data[~pos] = ex / (1.0 + ex)

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad * out_data * (1.0 - out_data))

        return Tensor(out_data, self.requires_grad, "sigmoid", (self,), backward if self.requires_grad else None)

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad * (1.0 - out_data**2))

        return Tensor(out_data, self.requires_grad, "tanh", (self,), backward if self.requires_grad else None)

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad * out_data)

        return Tensor(out_data, self.requires_grad, "exp", (self,), backward if self.requires_grad else None)

    def log(self) -> "Tensor":
        out_data = np.log(self.data)

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad / self.data)

        return Tensor(out_data, self.requires_grad, "log", (self,), backward if self.requires_grad else None)

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad * 0.5 / out_data)

        return Tensor(out_data, self.requires_grad, "sqrt", (self,), backward if self.requires_grad else None)

    def abs(self) -> "Tensor":
        out_data = np.abs(self.data)

        def backward(grad):
            if self.requires_grad:
                self.accumulate_grad(grad * np.sign(self.data))

        return Tensor(out_data, self.requires_grad, "abs", (self,), backward if self.requires_grad else None)

    def softplus(self) -> "Tensor":
        # log(1 + e^x) = max(x, 0) + log1p(e^-|x|), stable across the line
        out_data = np.maximum(self.data, 0) + np.log1p(np.exp(-np.abs(self.data)))

        def backward(grad):
            if self.requires_grad:
                pos = self.data >= 0
                sig = np.empty_like(self.data)
                sig[pos] = 1.0 / (1.0 + np.exp(-self.data[pos]))
                ex = np.exp(self.data[~pos])
                sig[~pos] = ex / (1.0 + ex)
                self.accumulate_grad(grad * sig)

        return Tensor(out_data, self.requires_grad, "softplus", (self,), backward if self.requires_grad else None)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along `axis`; gradient splits back to each input."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    dtype = tensors[0].dtype
    for t in tensors:
        if t.dtype != dtype:
            raise ShapeError("concat requires a uniform dtype")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    needs = any(t.requires_grad for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        moved = np.moveaxis(grad, axis, 0)
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.accumulate_grad(np.moveaxis(moved[lo:hi], 0, axis))

    return Tensor(out_data, needs, "concat", tuple(tensors), backward if needs else None)
