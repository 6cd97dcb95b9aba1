"""Dense tensors with a reverse-mode autodiff tape.

Every differentiable operation is a :class:`Function` subclass. Calling
``Function.apply`` runs the numpy forward kernel and, when any input needs a
gradient, links the output tensor to a tape node holding whatever the
backward rule needs. ``Tensor.backward`` walks that graph once in reverse
topological order.
"""

from __future__ import annotations

import contextlib
from typing import Any, Iterator, Sequence

import numpy as np

_DTYPES = {"float32": np.float32, "float64": np.float64}

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable taping inside the block (inference, parameter updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def resolve_dtype(precision: str | np.dtype | type) -> np.dtype:
    if isinstance(precision, str):
        try:
            return np.dtype(_DTYPES[precision])
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}; expected float32 or float64") from None
    dt = np.dtype(precision)
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dt}")
    return dt


class Tensor:
    """N-dimensional real array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_node")

    def __init__(self, data: Any, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(resolve_dtype(dtype), copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._node: Function | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self) -> None:
        """Raise if any value is NaN or infinite (debug mode check)."""
        if not np.all(np.isfinite(self.data)):
            bad = np.argwhere(~np.isfinite(self.data))[0]
            raise FloatingPointError(f"non-finite value in tensor {self.name or ''} at index {tuple(bad)}")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other: "Tensor") -> "Tensor":
        from .ops import add

        return add(self, other)

    def sum(self) -> "Tensor":
        from .ops import tensor_sum

        return tensor_sum(self)

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every tensor that requires it.

        Gradients accumulate additively, so fan-out is handled by the
        chain rule and repeated calls sum.
        """
        if self._node is None:
            if self.requires_grad:
                g = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)
                self.grad = g if self.grad is None else self.grad + g
                return
            raise RuntimeError("backward() called on a tensor that was not produced by a taped operation")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("backward() without an explicit gradient requires a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for t in order:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            t.grad = g if t.grad is None else t.grad + g
            node = t._node
            if node is None:
                continue
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig


def _topological_order(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root``, outputs before inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for inp in t._node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    order.reverse()
    return order


class Function:
    """One taped operation: numpy forward plus its backward rule."""

    name = "function"

    def __init__(self) -> None:
        self.inputs: tuple[Tensor, ...] = ()

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    @classmethod
    def call(cls, *inputs: Tensor, **kwargs: Any) -> tuple[Tensor, "Function"]:
        """Run the op and return both the output and the (possibly untaped) node."""
        fn = cls(**kwargs)
        out = Tensor(fn.forward(*(t.data for t in inputs)))
        if _grad_enabled and any(t.requires_grad for t in inputs):
            fn.inputs = inputs
            out.requires_grad = True
            out._node = fn
        return out, fn

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        return cls.call(*inputs, **kwargs)[0]


def parameter(data: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)
