"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays and record their producing operation so that a
single call to :func:`backward` can propagate gradients to every leaf that
requires them.  The graph is built eagerly: each op closes over its parents
and stores a `_backward` callback, and `backward` walks the nodes in reverse
topological order exactly once.

Conventions baked in here (and relied on by the network code):

* exp arguments are clamped to [-50, 50] in forward and backward alike,
* ReLU subgradient at 0 is 0,
* f64 is used for gradient checks, f32 is the training default,
* dropout is applied through a pre-sampled mask tensor so that a frozen
  mask makes the whole forward pass deterministic.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

EXP_CLAMP = 50.0

# Forward ops verify output finiteness by default; can be switched off for
# tight training loops once a model is trusted.
CHECK_FINITE = True


class NumericDomainError(ArithmeticError):
    """A forward op produced NaN/Inf, or was called outside its domain."""


class ShapeMismatchError(ValueError):
    """Operands cannot be combined; message names both shapes."""


def _check_finite(arr: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NumericDomainError(f"non-finite values produced by op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense real tensor, optionally recorded on the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[], None] | None = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name

    # -- niceties ----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __getitem__(self, idx):
        return slice_(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _needs(t: Tensor) -> bool:
    return t.requires_grad or t._parents != ()


# -- primitives -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatchError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    out = _make(data, (a, b), None, "add")

    def bw():
        g = out.grad
        if _needs(a):
            a._accumulate(_unbroadcast(g, a.shape))
        if _needs(b):
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeMismatchError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    out = _make(data, (a, b), None, "sub")

    def bw():
        g = out.grad
        if _needs(a):
            a._accumulate(_unbroadcast(g, a.shape))
        if _needs(b):
            b._accumulate(-_unbroadcast(g, b.shape))

    out._backward = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatchError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    out = _make(data, (a, b), None, "mul")

    def bw():
        g = out.grad
        if _needs(a):
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if _needs(b):
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = bw
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeMismatchError(f"div: shapes {a.shape} and {b.shape} do not broadcast")
    out = _make(data, (a, b), None, "div")

    def bw():
        g = out.grad
        if _needs(a):
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if _needs(b):
            # d/db (a/b) = -(a/b)/b; using out.data avoids squaring b, which
            # can overflow f32 when b is a clamped exponential
            b._accumulate(_unbroadcast(-g * out.data / b.data, b.shape))

    out._backward = bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 1 or a.shape[-1] != b.shape[0 if b.data.ndim == 1 else -2]:
        raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")
    data = a.data @ b.data
    out = _make(data, (a, b), None, "matmul")

    def bw():
        g = out.grad
        if a.data.ndim == 2 and b.data.ndim == 2:
            if _needs(a):
                a._accumulate(g @ b.data.T)
            if _needs(b):
                b._accumulate(a.data.T @ g)
        elif a.data.ndim == 1 and b.data.ndim == 2:
            if _needs(a):
                a._accumulate(g @ b.data.T)
            if _needs(b):
                b._accumulate(np.outer(a.data, g))
        elif a.data.ndim == 2 and b.data.ndim == 1:
            if _needs(a):
                a._accumulate(np.outer(g, b.data))
            if _needs(b):
                b._accumulate(a.data.T @ g)
        else:  # 1-D dot product
            if _needs(a):
                a._accumulate(g * b.data)
            if _needs(b):
                b._accumulate(g * a.data)

    out._backward = bw
    return out


def exp(a: Tensor) -> Tensor:
    clipped = np.clip(a.data, -EXP_CLAMP, EXP_CLAMP)
    data = np.exp(clipped)
    out = _make(data, (a,), None, "exp")

    def bw():
        inside = (np.abs(a.data) < EXP_CLAMP).astype(a.data.dtype)
        if _needs(a):
            a._accumulate(out.grad * data * inside)

    out._backward = bw
    return out


def power(a: Tensor, exponent) -> Tensor:
    """Elementwise a**p for a constant real exponent (scalar or array)."""
    p = np.asarray(exponent, dtype=a.dtype)
    if not np.all(p == np.round(p)) and np.any(a.data <= 0):
        raise NumericDomainError("power: non-integer exponent requires a positive base")
    data = np.power(a.data, p)
    out = _make(data, (a,), None, "power")

    def bw():
        if _needs(a):
            a._accumulate(out.grad * p * np.power(a.data, p - 1))

    out._backward = bw
    return out


def maximum(a: Tensor, floor: float) -> Tensor:
    """Clamp from below by a constant; subgradient is 0 in the clamped region."""
    data = np.maximum(a.data, floor)
    out = _make(data, (a,), None, "maximum")

    def bw():
        if _needs(a):
            a._accumulate(out.grad * (a.data > floor))

    out._backward = bw
    return out


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)
    out = _make(data, (a,), None, "relu")

    def bw():
        if _needs(a):
            a._accumulate(out.grad * (a.data > 0))

    out._backward = bw
    return out


def max_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.max(axis=axis, keepdims=keepdims)
    out = _make(data, (a,), None, "max")

    def bw():
        if not _needs(a):
            return
        expanded = out.data if keepdims or axis is None else np.expand_dims(out.data, axis)
        g = out.grad if keepdims or axis is None else np.expand_dims(out.grad, axis)
        mask = (a.data == expanded)
        # ties share the gradient equally, which keeps backward deterministic
        counts = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
        a._accumulate(g * mask / counts)

    out._backward = bw
    return out


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    out = _make(np.asarray(data), (a,), None, "sum")

    def bw():
        if not _needs(a):
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype))

    out._backward = bw
    return out


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)
    out = _make(np.asarray(data), (a,), None, "mean")

    def bw():
        if not _needs(a):
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype) / n)

    out._backward = bw
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    out = _make(data, (a,), None, "softmax")

    def bw():
        if not _needs(a):
            return
        g = out.grad
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accumulate(data * (g - dot))

    out._backward = bw
    return out


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = _make(data, tuple(tensors), None, "concatenate")
    sizes = [t.shape[axis] for t in tensors]

    def bw():
        offset = 0
        for t, size in zip(tensors, sizes):
            if _needs(t):
                idx = [slice(None)] * data.ndim
                idx[axis] = slice(offset, offset + size)
                t._accumulate(out.grad[tuple(idx)])
            offset += size

    out._backward = bw
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.stack([t.data for t in tensors], axis=axis)
    out = _make(data, tuple(tensors), None, "stack")

    def bw():
        for i, t in enumerate(tensors):
            if _needs(t):
                t._accumulate(np.take(out.grad, i, axis=axis))

    out._backward = bw
    return out


def slice_(a: Tensor, idx) -> Tensor:
    data = a.data[idx]
    out = _make(np.asarray(data), (a,), None, "slice")

    def bw():
        if not _needs(a):
            return
        g = np.zeros_like(a.data)
        np.add.at(g, idx, out.grad)
        a._accumulate(g)

    out._backward = bw
    return out


def transpose(a: Tensor) -> Tensor:
    out = _make(a.data.T.copy(), (a,), None, "transpose")

    def bw():
        if _needs(a):
            a._accumulate(out.grad.T)

    out._backward = bw
    return out


def gather_pairs(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Pick a[rows[i], cols[i]] into a 1-D tensor; backward scatter-adds."""
    data = a.data[rows, cols]
    out = _make(data, (a,), None, "gather_pairs")

    def bw():
        if not _needs(a):
            return
        g = np.zeros_like(a.data)
        np.add.at(g, (rows, cols), out.grad)
        a._accumulate(g)

    out._backward = bw
    return out


def scatter_pairs(values: Tensor, rows: np.ndarray, cols: np.ndarray,
                  shape: tuple[int, int]) -> Tensor:
    """Build a dense matrix with values[i] at (rows[i], cols[i]), zeros elsewhere."""
    data = np.zeros(shape, dtype=values.dtype)
    np.add.at(data, (rows, cols), values.data)
    out = _make(data, (values,), None, "scatter_pairs")

    def bw():
        if _needs(values):
            values._accumulate(out.grad[rows, cols])

    out._backward = bw
    return out


def dropout_apply(a: Tensor, mask: np.ndarray) -> Tensor:
    """Apply a pre-sampled dropout mask (already scaled by 1/(1-p))."""
    return mul(a, Tensor(np.asarray(mask, dtype=a.dtype)))


def avg_pool_nodes(a: Tensor, axis: int = 0) -> Tensor:
    """Average-pool over the node axis of a (J, C) or (Q, J) feature map."""
    return mean(a, axis=axis)


# -- backward pass ----------------------------------------------------------

def topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order walk; every node appears after its parents."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Propagate gradients from a scalar loss; visits each node exactly once.

    Returns a map id(param) -> gradient for the given params (all leaves with
    requires_grad get their .grad populated regardless).  Params that do not
    participate in the graph get zero gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
    result: dict[int, np.ndarray] = {}
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            result[id(p)] = p.grad
    return result


# -- gradient checking ------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor],
               eps: float = 1e-5) -> dict[str, float]:
    """Compare analytic gradients of the scalar `f()` against central finite
    differences, returning the relative error per parameter:

        max_i |analytic_i - numeric_i| / max(max_i |analytic_i|,
                                             max_i |numeric_i|, 1e-12)

    The maxima run over the entries of one parameter tensor, so near-zero
    individual gradients are measured against the scale of their tensor
    rather than against finite-difference rounding noise.

    `f` must be deterministic (dropout frozen) and params must be f64.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ValueError(f"grad_check requires f64 params, {name} is {p.data.dtype}")

    base = f()
    again = f()
    if base.item() != again.item():
        raise RuntimeError("grad_check: f is non-deterministic (two forward passes disagree)")

    backward(base, params.values())
    analytic = {name: p.grad.copy() for name, p in params.items()}

    global CHECK_FINITE
    report: dict[str, float] = {}
    saved_check = CHECK_FINITE
    CHECK_FINITE = False  # the base pass above already validated finiteness
    try:
        for name, p in params.items():
            flat = p.data.reshape(-1)
            a = analytic[name].reshape(-1)
            numeric = np.empty_like(a)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = f().item()
                flat[i] = orig - eps
                lo = f().item()
                flat[i] = orig
                numeric[i] = (hi - lo) / (2 * eps)
            diff = float(np.max(np.abs(a - numeric)))
            denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(numeric))), 1e-12)
            report[name] = diff / denom
    finally:
        CHECK_FINITE = saved_check
    return report
