"""Dense float64 arrays with reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:func:`grad_of` walks that graph backwards.  The operation set is deliberately
small: it covers the layers and losses in this package and nothing more.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "_parents", "_backward", "_op")

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self._parents = parents
        self._backward = backward
        self._op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


class Parameter(Tensor):
    """A trainable leaf.  ``grad`` always has the value's shape."""

    __slots__ = ("grad", "name")

    def __init__(self, data, name: str = ""):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    if not _GRAD_ENABLED:
        return Tensor(out, op=op)
    return Tensor(out, parents, backward, op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad ** exponent
    return _make(out, (a,), lambda g: (g * exponent * ad ** (exponent - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _make(out, (a,), lambda g: (g / ad,), "log")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids exp overflow on either tail
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x) computed as max(x, 0) + log1p(e^{-|x|})."""
    ad = a.data
    return _make(_softplus(ad), (a,), lambda g: (g * _sigmoid(ad),), "softplus")


def log_sigmoid(a: Tensor) -> Tensor:
    ad = a.data
    return _make(-_softplus(-ad), (a,), lambda g: (g * _sigmoid(-ad),), "log_sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), backward, "gelu")


# reductions and shape ops

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def amax(a: Tensor, axis: int) -> Tensor:
    """Max over one axis; the gradient goes to the first maximising entry."""
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)
    shape = a.shape

    def backward(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (a,), backward, "max")


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def backward(g):
        gx = np.zeros(shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(a.data[idx], (a,), backward, "getitem")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([x.data for x in xs], axis=axis)
    return _make(out, tuple(xs), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _make(out, tuple(xs), backward, "stack")


def take_along_axis(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    indices = np.asarray(indices)
    out = np.take_along_axis(a.data, indices, axis=axis)
    shape = a.shape
    ax = axis % a.ndim

    def backward(g):
        gx = np.zeros(shape)
        grids = list(np.indices(indices.shape, sparse=True))
        grids[ax] = indices
        np.add.at(gx, tuple(grids), g)
        return (gx,)

    return _make(out, (a,), backward, "take_along_axis")


# linear algebra and normalisations

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), backward, "matmul")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ValueError("softmax_rows needs at least one column")
    return softmax(x, axis=-1)


def logsumexp(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """log sum exp over ``axis``, restricted to ``mask`` entries when given.

    Rows whose mask is empty evaluate to 0 with zero gradient; callers are
    expected to discard them.
    """
    x = a.data
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.broadcast_to(mask, x.shape)
    empty = ~mask.any(axis=axis, keepdims=True)
    m = np.where(mask, x, -np.inf).max(axis=axis, keepdims=True)
    m = np.where(empty, 0.0, m)
    s = np.where(mask, np.exp(np.where(mask, x - m, 0.0)), 0.0).sum(axis=axis, keepdims=True)
    s = np.where(empty, 1.0, s)
    out_k = np.where(empty, 0.0, m + np.log(s))
    out = out_k.squeeze(axis)

    def backward(g):
        w = np.where(mask, np.exp(np.where(mask, x - out_k, 0.0)), 0.0)
        return (w * np.expand_dims(g, axis),)

    return _make(out, (a,), backward, "logsumexp")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def backward(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, bias.shape)

    return _make(out, (a, gain, bias), backward, "layer_norm")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


# differentiation

def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
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
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def grad_of(loss: Tensor, parameters: Iterable[Tensor]) -> list[np.ndarray]:
    """d(loss)/d(param) for each parameter; unreached parameters get zeros."""
    if loss.data.size != 1:
        raise ValueError(f"grad_of needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None) if node._parents else grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads.get(id(p), np.zeros_like(p.data)).reshape(p.shape) for p in parameters]


def backward(loss: Tensor, parameters: Sequence[Parameter]) -> None:
    """Accumulate gradients of ``loss`` into ``parameter.grad``."""
    for p, g in zip(parameters, grad_of(loss, parameters)):
        p.grad += g


def finite_difference_check(
    fn: Callable[[], Tensor],
    parameters: Sequence[Tensor],
    probes: int = 100,
    h: float = 1e-5,
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
) -> dict:
    """Compare analytic gradients of ``fn()`` with central differences.

    ``probes`` random (parameter, element) pairs are perturbed in place.  The
    relative error of a probe is ``|analytic - numeric| / max(|analytic|,
    |numeric|, floor)``; ``floor`` keeps vanishing components from dividing by
    zero.
    """
    rng = rng or np.random.default_rng(0)
    analytic = grad_of(fn(), parameters)
    sizes = np.array([p.data.size for p in parameters], dtype=float)
    worst = 0.0
    for _ in range(probes):
        pi = rng.choice(len(parameters), p=sizes / sizes.sum())
        flat = parameters[pi].data.reshape(-1)
        j = rng.integers(flat.size)
        orig = flat[j]
        flat[j] = orig + h
        with no_grad():
            up = float(fn().data)
        flat[j] = orig - h
        with no_grad():
            down = float(fn().data)
        flat[j] = orig
        num = (up - down) / (2 * h)
        ana = float(analytic[pi].reshape(-1)[j])
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        worst = max(worst, err)
    return {"probes": probes, "max_rel_err": worst}
