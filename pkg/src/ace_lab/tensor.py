"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is a dynamic tape. Every operation whose inputs require gradients
records a node holding its parent tensors and a VJP closure; backward walks
nodes in reverse creation order (a valid topological order for a dynamically
built graph), visits each node once, and accumulates gradients additively
into the leaves.

VJP closures are written in terms of tensor operations, not raw NumPy, so a
backward pass can itself be recorded: `vjp(..., create_graph=True)` returns
gradients that are differentiable graph tensors. That is what makes
gradient-of-gradient objectives (the generator's path-length penalty) train
like any other loss.

Conventions:
  * dtype is always float64; inputs are converted on construction,
  * only leaf tensors (no recorded parents) receive `.grad`,
  * `.grad` accumulates across backward calls until cleared by the caller,
  * `log` refuses inputs below EPS_LOG; probability sites add EPS_LOG first.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from . import _kernels as K
from .errors import DomainError, GraphError, ShapeError

EPS_LOG = 1e-12

_ids = itertools.count()


class _TapeState(threading.local):
    def __init__(self):
        self.enabled = True


_state = _TapeState()


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def is_grad_enabled() -> bool:
    return _state.enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    # -- introspection -------------------------------------------------

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
        return self.data.item()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def detach(self) -> "Tensor":
        """Same values, no graph. Shares the underlying array."""
        return Tensor(self.data)

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _lift(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64))


def _record(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _state.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


# -- elementwise binary ops ---------------------------------------------


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum `g` down to `shape`, undoing NumPy broadcasting."""
    if g.shape == shape:
        return g
    for _ in range(g.ndim - len(shape)):
        g = tsum(g, axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(mul(g, -1.0), b.shape)

    return _record(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _record(a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        ga = _unbroadcast(div(g, b), a.shape)
        gb = _unbroadcast(mul(div(mul(g, a), mul(b, b)), -1.0), b.shape)
        return ga, gb

    return _record(a.data / b.data, (a, b), vjp)


# -- elementwise unary ops ------------------------------------------------


def relu(x) -> Tensor:
    x = _lift(x)

    def vjp(g):
        if _state.enabled:
            mask = Tensor((x.data > 0.0).astype(np.float64))
            return (mul(g, mask),)
        return (Tensor(K.relu_backward(g.data, x.data)),)

    return _record(K.relu(x.data), (x,), vjp)


def sigmoid(x) -> Tensor:
    x = _lift(x)
    out = _record(K.sigmoid(x.data), (x,), None)

    def vjp(g):
        return (mul(mul(g, out), sub(1.0, out)),)

    out._vjp = vjp if out.requires_grad else None
    return out


def tanh(x) -> Tensor:
    x = _lift(x)
    out = _record(K.tanh(x.data), (x,), None)

    def vjp(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out._vjp = vjp if out.requires_grad else None
    return out


def exp(x) -> Tensor:
    x = _lift(x)
    out = _record(K.exp(x.data), (x,), None)

    def vjp(g):
        return (mul(g, out),)

    out._vjp = vjp if out.requires_grad else None
    return out


def log(x) -> Tensor:
    """Natural log. Inputs below EPS_LOG are a domain error, not a NaN."""
    x = _lift(x)
    lo = float(x.data.min()) if x.data.size else 1.0
    if lo < EPS_LOG:
        raise DomainError(f"log input {lo:g} is below the {EPS_LOG:g} floor")

    def vjp(g):
        return (div(g, x),)

    return _record(K.log(x.data), (x,), vjp)


def sqrt(x) -> Tensor:
    """Elementwise square root. The derivative is unbounded at 0; callers
    that may hit exact zeros should add a small constant first."""
    x = _lift(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt of a negative value")
    out = _record(K.sqrt(x.data), (x,), None)

    def vjp(g):
        return (div(g, mul(out, 2.0)),)

    out._vjp = vjp if out.requires_grad else None
    return out


def absolute(x) -> Tensor:
    x = _lift(x)

    def vjp(g):
        return (mul(g, Tensor(np.sign(x.data))),)

    return _record(np.abs(x.data), (x,), vjp)


# -- structural ops -------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = _lift(x)
    shape = tuple(shape)

    def vjp(g):
        return (reshape(g, x.shape),)

    return _record(x.data.reshape(shape), (x,), vjp)


def broadcast_to(x, shape) -> Tensor:
    x = _lift(x)
    shape = tuple(shape)

    def vjp(g):
        return (_unbroadcast(g, x.shape),)

    return _record(np.ascontiguousarray(np.broadcast_to(x.data, shape)), (x,), vjp)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    if isinstance(axis, int):
        axis = (axis,)

    def vjp(g):
        if axis is None:
            kept = (1,) * x.ndim
        elif keepdims:
            kept = g.shape
        else:
            kept = list(x.shape)
            for ax in axis:
                kept[ax % x.ndim] = 1
            kept = tuple(kept)
        return (broadcast_to(reshape(g, kept), x.shape),)

    return _record(x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = 1
        for ax in axes:
            count *= x.shape[ax % x.ndim]
    return div(tsum(x, axis=axis, keepdims=keepdims), float(count))


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat of an empty sequence")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            narrow(g, axis, int(offsets[i]), sizes[i]) for i in range(len(parts))
        )

    return _record(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), vjp)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis`, starting at `start`."""
    x = _lift(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def vjp(g):
        return (_embed(g, axis, start, x.shape),)

    return _record(np.ascontiguousarray(x.data[idx]), (x,), vjp)


def _embed(x: Tensor, axis: int, start: int, full_shape: tuple[int, ...]) -> Tensor:
    """Place `x` into a zero tensor of `full_shape` at `start` along `axis`."""
    length = x.shape[axis]

    def vjp(g):
        return (narrow(g, axis, start, length),)

    data = np.zeros(full_shape, dtype=np.float64)
    idx = [slice(None)] * len(full_shape)
    idx[axis] = slice(start, start + length)
    data[tuple(idx)] = x.data
    return _record(data, (x,), vjp)


def rowmax(x) -> Tensor:
    """Row-wise max of a 2-D tensor, shape (n, 1). Gradient flows to the
    first argmax of each row."""
    x = _lift(x)
    if x.ndim != 2:
        raise ShapeError(f"rowmax expects 2-D input, got {x.shape}")

    def vjp(g):
        mask = np.zeros_like(x.data)
        mask[np.arange(x.shape[0]), np.argmax(x.data, axis=1)] = 1.0
        return (mul(g, Tensor(mask)),)

    return _record(x.data.max(axis=1, keepdims=True), (x,), vjp)


# -- fused ops ------------------------------------------------------------


def matmul(a, b, ta: bool = False, tb: bool = False) -> Tensor:
    """2-D matrix product with optional transposes applied to the operands."""
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    inner_a = a.shape[0] if ta else a.shape[1]
    inner_b = b.shape[1] if tb else b.shape[0]
    if inner_a != inner_b:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape}{'^T' if ta else ''} "
            f"@ {b.shape}{'^T' if tb else ''}"
        )

    def vjp(g):
        if not ta and not tb:
            return matmul(g, b, tb=True), matmul(a, g, ta=True)
        if ta and not tb:
            return matmul(b, g, tb=True), matmul(a, g)
        if not ta and tb:
            return matmul(g, b), matmul(g, a, ta=True)
        return matmul(b, g, ta=True, tb=True), matmul(g, a, ta=True, tb=True)

    return _record(K.gemm(a.data, b.data, ta, tb), (a, b), vjp)


def softmax(x) -> Tensor:
    """Row-wise softmax of a 2-D tensor with at least two columns."""
    x = _lift(x)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeError(f"softmax expects shape (n, K) with K >= 2, got {x.shape}")
    out = _record(K.softmax_rows(x.data), (x,), None)

    def vjp(g):
        s = tsum(mul(g, out), axis=1, keepdims=True)
        return (mul(sub(g, s), out),)

    out._vjp = vjp if out.requires_grad else None
    return out


# -- backward engine ------------------------------------------------------


def _collect(root: Tensor, stop_ids: frozenset) -> list[Tensor]:
    """All recorded nodes reachable from `root`, not descending past stops."""
    seen = {id(root)}
    out = [root]
    stack = [root]
    while stack:
        t = stack.pop()
        if t._vjp is None or id(t) in stop_ids:
            continue
        for p in t._parents:
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
                stack.append(p)
    return out


def _backprop(root: Tensor, seed: Tensor, stop_ids: frozenset, create_graph: bool):
    """Propagate `seed` from `root`; returns {id(tensor): grad Tensor}."""
    nodes = _collect(root, stop_ids)
    nodes.sort(key=lambda t: -t.node_id)
    grads: dict[int, Tensor] = {id(root): seed}
    ctx = _keep_grad() if create_graph else no_grad()
    with ctx:
        for t in nodes:
            if t._vjp is None or id(t) in stop_ids:
                continue
            g = grads.get(id(t))
            if g is None:
                continue
            for parent, pg in zip(t._parents, t._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                held = grads.get(id(parent))
                grads[id(parent)] = pg if held is None else add(held, pg)
    return grads, nodes


@contextmanager
def _keep_grad():
    prev = _state.enabled
    _state.enabled = True
    try:
        yield
    finally:
        _state.enabled = prev


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every leaf that requires
    gradients. `loss` must be a scalar."""
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward on a tensor that does not require gradients")
    seed = Tensor(np.ones_like(loss.data))
    grads, nodes = _backprop(loss, seed, frozenset(), create_graph=False)
    for t in nodes:
        if t._vjp is not None or not t.requires_grad:
            continue
        g = grads.get(id(t))
        if g is None:
            continue
        if t.grad is None:
            t.grad = np.array(g.data, copy=True)
        else:
            t.grad += g.data


def vjp(output: Tensor, probe: Tensor, wrt: list[Tensor], create_graph: bool = False):
    """Vector-Jacobian product: gradients of <output, probe> with respect to
    each tensor in `wrt`. Entries are None where no path exists. With
    create_graph=True the results are differentiable graph tensors."""
    probe = _lift(probe)
    if probe.shape != output.shape:
        raise ShapeError(f"probe shape {probe.shape} != output shape {output.shape}")
    if not output.requires_grad:
        return [None] * len(wrt)
    stop = frozenset(id(t) for t in wrt)
    grads, _ = _backprop(output, probe, stop, create_graph)
    return [grads.get(id(t)) for t in wrt]


def vjp_norm(output: Tensor, latent: Tensor, probe, create_graph: bool = False) -> Tensor:
    """Euclidean norm of d<output, probe>/d(latent) as a scalar tensor.

    A constant output has a zero Jacobian, so the norm is 0. A latent that is
    differentiable but not an ancestor of `output` is a contract violation.
    """
    probe = _lift(probe)
    if probe.shape != output.shape:
        raise ShapeError(f"probe shape {probe.shape} != output shape {output.shape}")
    if not latent.requires_grad:
        raise GraphError("vjp_norm latent does not require gradients")
    if not output.requires_grad:
        return Tensor(0.0)
    (g,) = vjp(output, probe, [latent], create_graph=create_graph)
    if g is None:
        raise GraphError("latent is not on the output's graph")
    return sqrt(tsum(mul(g, g)))
