"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every operation eagerly computes its numpy result and, while gradients are
enabled, records the backward closures needed to propagate adjoints to its
parents. The recorded graph is effectively a per-forward-pass tape: it lives
only as long as the output tensors and is walked exactly once per call to
``backward``. There is no shared mutable state between independent graphs, so
distinct forward passes may run on different threads.

Design constraints baked in here:
  * float64 everywhere; any op producing NaN/Inf raises immediately.
  * max-reductions route the gradient to the first maximal element on ties.
  * ``backward`` recomputes adjoints from scratch each call (no accumulation
    across calls), so repeated calls on the same graph are bit-identical.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backprop.

    ``grad`` is populated by :func:`backward` and holds d(root)/d(self) as a
    plain ndarray of the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar. Python scalars are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, _as_tensor(1.0 / float(other)))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor],
          vjps: Sequence[Callable[[np.ndarray], np.ndarray]]) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    needs_grad = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        out._parents = tuple(parents)
        out._vjps = tuple(vjps)
    return out


# ---------------------------------------------------------------------------
# primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    return _make("add", a.data + b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.shape),
                  lambda g: _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _make("sub", a.data - b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.shape),
                  lambda g: _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _make("mul", a.data * b.data, (a, b),
                 (lambda g: _unbroadcast(g * b.data, a.shape),
                  lambda g: _unbroadcast(g * a.data, b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    out = ad @ bd

    def grad_a(g: np.ndarray) -> np.ndarray:
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd
        if bd.ndim == 1:
            return np.expand_dims(g, -1) * bd
        if ad.ndim == 1:
            if bd.ndim != 2:
                raise NotImplementedError("1-d @ >2-d matmul backward")
            return bd @ g
        return _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)

    def grad_b(g: np.ndarray) -> np.ndarray:
        if ad.ndim == 1 and bd.ndim == 1:
            return g * ad
        if ad.ndim == 1:
            return np.outer(ad, g)
        if bd.ndim == 1:
            return np.swapaxes(ad, -1, -2) @ g if ad.ndim == 2 else \
                _unbroadcast((np.swapaxes(ad, -1, -2) @ np.expand_dims(g, -1))[..., 0], bd.shape)
        return _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)

    return _make("matmul", out, (a, b), (grad_a, grad_b))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i: int):
        def vjp(g: np.ndarray) -> np.ndarray:
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(index)]
        return vjp

    return _make("concat", out, tensors, [make_vjp(i) for i in range(len(tensors))])


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.stack([t.data for t in tensors], axis=axis)

    def make_vjp(i: int):
        return lambda g: np.take(g, i, axis=axis)

    return _make("stack", out, tensors, [make_vjp(i) for i in range(len(tensors))])


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make("reshape", a.data.reshape(shape), (a,),
                 (lambda g: g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make("swapaxes", np.swapaxes(a.data, ax1, ax2), (a,),
                 (lambda g: np.swapaxes(g, ax1, ax2),))


def index_rows(a: Tensor, idx) -> Tensor:
    """Gather along axis 0 with an integer array; duplicates accumulate on backward."""
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return out

    return _make("index_rows", a.data[idx], (a,), (vjp,))


def narrow(a: Tensor, key) -> Tensor:
    """Basic (non-duplicating) slice."""
    def vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a.data)
        out[key] = g
        return out

    return _make("narrow", a.data[key], (a,), (vjp,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make("sigmoid", out, (a,), (lambda g: g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), (lambda g: g * (1.0 - out * out),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, (a,), (lambda g: g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log of non-positive value")
    return _make("log", np.log(a.data), (a,), (lambda g: g / a.data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _make("relu", a.data * mask, (a,), (lambda g: g * mask,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data > lo) & (a.data < hi)
    return _make("clip", np.clip(a.data, lo, hi), (a,), (lambda g: g * mask,))


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.shape).copy()

    return _make("sum", out, (a,), (vjp,))


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return sum_(a, axis=axis) * (1.0 / n)


def amax(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Max-reduce; on ties the gradient goes to the first maximal element."""
    out = a.data.max(axis=axis, keepdims=keepdims)

    def vjp(g: np.ndarray) -> np.ndarray:
        onehot = np.zeros_like(a.data)
        if axis is None:
            onehot.flat[np.argmax(a.data)] = 1.0
            return onehot * g
        arg = np.argmax(a.data, axis=axis)
        np.put_along_axis(onehot, np.expand_dims(arg, axis), 1.0, axis=axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        return onehot * gg

    return _make("amax", out, (a,), (vjp,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: np.ndarray) -> np.ndarray:
        return out * (g - (g * out).sum(axis=axis, keepdims=True))

    return _make("softmax", out, (a,), (vjp,))


# ---------------------------------------------------------------------------
# backward pass

def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(root)/d(node) through the recorded graph.

    Returns a map from every reachable ``requires_grad`` tensor to its
    gradient, and mirrors it into each tensor's ``grad`` attribute
    (overwriting, never accumulating, so a second call is identical).
    Leaves not reachable from ``root`` are simply absent from the map;
    callers treat missing entries as zero.
    """
    if root.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.shape}")

    # Iterative post-order DFS; the resulting list is a topological order
    # (parents precede children), each node appearing exactly once.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    adjoint: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    by_id: dict[int, Tensor] = {id(root): root}
    for node in reversed(order):
        g = adjoint.get(id(node))
        if g is None:
            continue
        by_id[id(node)] = node
        for parent, vjp in zip(node._parents, node._vjps):
            contribution = vjp(g)
            pid = id(parent)
            by_id[pid] = parent
            if pid in adjoint:
                adjoint[pid] = adjoint[pid] + contribution
            else:
                adjoint[pid] = contribution

    result: dict[Tensor, np.ndarray] = {}
    for nid, g in adjoint.items():
        node = by_id[nid]
        if node.requires_grad:
            node.grad = g
            result[node] = g
    return result


def grad_check(f: Callable[..., Tensor], inputs: Tensor | Iterable[Tensor],
               eps: float = 1e-5) -> float:
    """Max discrepancy between analytic gradients of ``f`` and central differences.

    Relative error per coordinate uses an absolute floor of 1e-3 in the
    denominator so near-zero gradients are compared on an absolute scale.
    """
    points = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for p in points:
        p.requires_grad = True
    out = f(*points)
    grads = backward(out)

    worst = 0.0
    for p in points:
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                hi = f(*points).item()
            flat[i] = orig - eps
            with no_grad():
                lo = f(*points).item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, err)
    return worst
