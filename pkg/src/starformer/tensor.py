"""Dense float64 tensors with tape-style reverse-mode differentiation.

Every operation returns a new :class:`Tensor`.  When at least one input
requires a gradient, the result remembers its parents and a closure that maps
the output adjoint to the input adjoints.  :func:`backward` orders the
recorded nodes topologically, replays the closures in reverse and then
releases the graph, so each forward pass supports exactly one backward pass.

"Rows" always means the second-to-last axis and "features" the last axis, so
the same op works on a single ``(n, d)`` matrix or a ``(batch, n, d)`` stack.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Within this block ops record nothing (forward-only evaluation)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NumericError(ArithmeticError):
    """A non-finite value reached an op that cannot handle it."""


class GraphError(RuntimeError):
    """Misuse of the recorded graph (non-scalar loss, replay after release)."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_released")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = ""
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op or 'leaf'!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: Sequence[Tensor], fn: BackwardFn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    out._released = False
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(x.data * c, (x,), lambda g: (g * c,), "scale")


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _record(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,), "relu")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        # shared weight matrix: one flat GEMM each way, no per-row outer products
        a2 = ad.reshape(-1, ad.shape[-1])
        out = (a2 @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))

        def back2(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _record(out, (a, b), back2, "matmul")
    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise DimensionError(f"matmul: batch axes differ, {a.shape} x {b.shape}") from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, ad.shape),
                None if gb is None else _unbroadcast(gb, bd.shape))

    return _record(out, (a, b), back, "matmul")


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along the last axis.

    ``mask`` (broadcastable boolean, True = keep) drops entries by giving them
    probability exactly zero; every row must keep at least one entry.
    """
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows: NaN in input")
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (x,), back, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row of features to zero mean, unit variance, then apply gain/bias."""
    d = x.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs at least 2 features, got {d}")
    if gain.shape[-1] != d or bias.shape[-1] != d:
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def back(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape))

    return _record(out, (x, gain, bias), back, "layer_norm")


# ---------------------------------------------------------------------------
# row reductions and reshaping
# ---------------------------------------------------------------------------

def mean_rows(x: Tensor) -> Tensor:
    n = x.shape[-2]
    shape = x.shape
    return _record(x.data.mean(axis=-2, keepdims=True), (x,),
                   lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean_rows")


def max_pool_rows(x: Tensor) -> Tensor:
    """Per-feature maximum over rows; the adjoint goes to the first argmax row."""
    idx = np.expand_dims(np.argmax(x.data, axis=-2), -2)
    out = np.take_along_axis(x.data, idx, axis=-2)
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, idx, g, axis=-2)
        return (gx,)

    return _record(out, (x,), back, "max_pool_rows")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax):
            raise DimensionError(
                f"concat along axis {axis}: inconsistent shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _record(np.concatenate([t.data for t in tensors], axis=ax), tensors,
                   lambda g: tuple(np.split(g, cuts, axis=ax)), "concat")


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=-2)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    n = x.shape[-2]
    if not 0 <= start <= stop <= n:
        raise DimensionError(f"slice_rows [{start}:{stop}] out of range for {n} rows")
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        gx[..., start:stop, :] = g
        return (gx,)

    return _record(x.data[..., start:stop, :].copy(), (x,), back, "slice_rows")


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows by an integer index array of any shape.

    ``x[..., n, d]`` with ``index`` of shape ``S`` gives ``[..., *S, d]``.
    Repeated indices accumulate in the adjoint.
    """
    index = np.asarray(index, dtype=np.intp)
    n = x.shape[-2]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise DimensionError(f"gather_rows index out of range for {n} rows")
    lead = x.shape[:-2]
    d = x.shape[-1]
    flat = index.reshape(-1)
    out = x.data[..., flat, :].reshape(lead + index.shape + (d,))
    shape = x.shape
    # Scatter plan for the adjoint.  A 2-D index is handled one column at a
    # time: a duplicate-free column is a plain fancy-index add, a constant
    # column is a sum.  Anything else goes through sort + reduceat.
    cols = index.reshape(index.shape[0], -1) if index.ndim >= 2 else index.reshape(-1, 1)
    plan = []
    for j in range(cols.shape[1]):
        c = cols[:, j]
        if c.size and (c == c[0]).all():
            plan.append(("const", j, int(c[0])))
        elif np.unique(c).size == c.size:
            plan.append(("perm", j, c))
        else:
            plan = None
            break
    if plan is None:
        order = np.argsort(flat, kind="stable")
        rows, starts = np.unique(flat[order], return_index=True)

    def back(g):
        gx = np.zeros(shape)
        if not flat.size:
            return (gx,)
        if plan is not None:
            g3 = g.reshape(lead + cols.shape + (d,))
            for kind, j, c in plan:
                if kind == "const":
                    gx[..., c, :] += g3[..., :, j, :].sum(axis=-2)
                else:
                    gx[..., c, :] += g3[..., :, j, :]
        else:
            g2 = g.reshape(lead + (flat.size, d))[..., order, :]
            gx[..., rows, :] = np.add.reduceat(g2, starts, axis=-2)
        return (gx,)

    return _record(out, (x,), back, "gather_rows")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _record(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def expand(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Broadcast to ``shape`` (materialised copy)."""
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise DimensionError(f"expand: {x.shape} does not broadcast to {shape}") from None
    old = x.shape
    return _record(out, (x,), lambda g: (_unbroadcast(g, old),), "expand")


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean over all elements of the squared difference; returns a 0-d tensor."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    return _record(np.array(np.mean(diff * diff)), (pred, target),
                   lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n), "mse")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _record(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate adjoints are kept only for the duration of the pass; the
    graph is released afterwards so a second call raises :class:`GraphError`.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise GraphError("graph already released by a previous backward pass")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")
    order = _topological(loss)
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if node._backward is None:
            if node.requires_grad and g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is not None:
            for p, gp in zip(node._parents, node._backward(g)):
                if gp is None or not p.requires_grad:
                    continue
                k = id(p)
                adj[k] = gp if k not in adj else adj[k] + gp
        node._parents = ()
        node._backward = None
        node._released = True
