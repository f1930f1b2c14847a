"""Minimal reverse-mode differentiation over float64 numpy arrays.

Every primitive returns a new :class:`Tensor`. When any input requires a
gradient, the result keeps references to its parents plus a closure that maps
the upstream gradient to per-parent gradients; :func:`backprop` walks that
implicit tape in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

LEAKY_SLOPE = 0.2

_debug = False


def set_debug(flag: bool) -> None:
    """Check every primitive output for NaN/Inf when enabled."""
    global _debug
    _debug = bool(flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar; every path goes through a named primitive
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from {op}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def scalar_mul(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)
    return _make(out, (x,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log: non-positive input")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient passes only where the input was inside the range."""
    inside = (x.data >= lo) & (x.data <= hi)
    out = np.clip(x.data, lo, hi)
    return _make(out, (x,), lambda g: (np.where(inside, g, 0.0),), "clip")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast numpy-style."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                k, m = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def dot(a, b) -> Tensor:
    """Inner product along the last axis (leading axes broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dot: incompatible shapes {a.shape} and {b.shape}")
    _check_broadcast("dot", a, b)

    def backward(g):
        g = g[..., None]
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(np.sum(a.data * b.data, axis=-1), (a, b), backward, "dot")


def transpose(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ValueError(f"transpose: need at least 2 axes, got shape {x.shape}")
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def cosine_similarity(a, b, eps: float = 0.0) -> Tensor:
    """Row-wise cosine along the last axis. A zero-norm argument yields 0 with zero gradient."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"cosine_similarity: incompatible shapes {a.shape} and {b.shape}")
    _check_broadcast("cosine_similarity", a, b)
    na = np.sqrt(np.sum(a.data * a.data, axis=-1))
    nb = np.sqrt(np.sum(b.data * b.data, axis=-1))
    ok = na * nb > eps
    inv_a = np.where(na > 0, 1.0 / np.where(na > 0, na, 1.0), 0.0)[..., None]
    inv_b = np.where(nb > 0, 1.0 / np.where(nb > 0, nb, 1.0), 0.0)[..., None]
    an, bn = a.data * inv_a, b.data * inv_b
    cos = np.where(ok, np.sum(an * bn, axis=-1), 0.0)

    def backward(g):
        # d cos/da = (b_hat - cos a_hat)/|a|, symmetric in b
        g = np.where(ok, g, 0.0)[..., None]
        c = cos[..., None]
        da = (g * inv_a) * (bn - c * an)
        db = (g * inv_b) * (an - c * bn)
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _make(cos, (a, b), backward, "cosine_similarity")


# ---------------------------------------------------------------- shape / indexing


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValueError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(out, tensors, backward, "stack")


def _is_basic(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in parts)


def _scatter_add_rows(n_rows: int, idx: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[idx[i]] += values[i]`` as a sparse one-hot product (much faster than ``np.add.at``)."""
    n = idx.shape[0]
    if n == 0:
        return np.zeros((n_rows,) + values.shape[1:])
    onehot = sparse.csr_matrix((np.ones(n), (idx, np.arange(n))), shape=(n_rows, n))
    out = onehot @ values.reshape(n, -1)
    return np.asarray(out).reshape((n_rows,) + values.shape[1:])


def index(x: Tensor, key) -> Tensor:
    """Numpy basic/advanced indexing; gradients scatter-add back (repeated indices accumulate)."""
    out = x.data[key]
    basic = _is_basic(key)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _make(np.array(out, copy=True), (x,), backward, "index")


def row_select(table: Tensor, idx) -> Tensor:
    """Embedding lookup: rows of a 2-D table at an integer index array of any shape."""
    idx = np.asarray(idx, dtype=np.intp)
    if table.ndim != 2:
        raise ValueError(f"row_select: table must be 2-D, got shape {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row_select: index out of range for table with {table.shape[0]} rows")

    def backward(g):
        return (_scatter_add_rows(table.shape[0], idx.reshape(-1), g.reshape(-1, table.shape[1])),)

    return _make(table.data[idx], (table,), backward, "row_select")


def scatter_rows(x: Tensor, idx, n_rows: int) -> Tensor:
    """Place row ``i`` of ``x`` at row ``idx[i]`` of a zero matrix with ``n_rows`` rows (adds on collision)."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape[0] != x.shape[0]:
        raise ValueError(f"scatter_rows: {idx.shape[0]} indices for {x.shape[0]} rows")
    out = _scatter_add_rows(n_rows, idx, x.data)
    return _make(out, (x,), lambda g: (g[idx],), "scatter_rows")


# ---------------------------------------------------------------- reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scalar_mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Softmax with the max subtracted first; masked-out entries get probability 0."""
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if np.any(~mask.any(axis=axis)):
            raise ValueError("empty attention support")
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scalar_mul": scalar_mul,
    "concat": concat,
    "stack": stack,
    "row_select": row_select,
    "embedding_lookup": row_select,
    "index": index,
    "scatter_rows": scatter_rows,
    "reshape": reshape,
    "sum": sum,
    "mean": mean,
    "softmax": softmax,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "leaky_relu": leaky_relu,
    "log": log,
    "clip": clip,
    "cosine_similarity": cosine_similarity,
    "dot": dot,
    "transpose": transpose,
}


def eval_primitive(op: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------- backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backprop(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad leaf reachable from ``loss``.

    Intermediate results pass their gradient on without storing it.
    """
    if loss.data.size != 1:
        raise ValueError(f"backprop: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def finite_difference_check(
    f: Callable[[], Tensor], params: Iterable[Tensor], epsilon: float = 1e-5
) -> float:
    """Worst relative error between backprop gradients and central differences.

    ``f`` rebuilds the scalar loss from the current ``params`` data on every call.
    The denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise ValueError("finite_difference_check: non-finite objective")
    backprop(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.flat
        for i in range(p.data.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(f().data)
            flat[i] = orig - epsilon
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError("finite_difference_check: non-finite objective")
            numeric = (fp - fm) / (2.0 * epsilon)
            a = float(analytic.flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
