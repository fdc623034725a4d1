"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every op returns a new ``Tensor`` that records its parents and a backward
closure.  ``backward`` walks the recorded graph in reverse creation order,
which is a valid topological order because parents are always created
before their children.  Complex quantities are handled by ``CTensor``, a
pair of real tensors, so every complex rule reduces to real ones.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import erf, expit

from .errors import NotScalar, ShapeMismatch

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array with an optional gradient record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeMismatch("tensors are limited to rank 3")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._id = next(_ids)
        self.name = name

    # construction helpers -----------------------------------------------

    @classmethod
    def _make(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._id = next(_ids)
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operators -------------------------------------------------------------

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def backward(self):
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (only row-vector and scalar broadcasts)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


_sink: dict | None = None


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if _sink is not None:
        prev = _sink.get(t._id)
        _sink[t._id] = np.array(g, dtype=np.float64, copy=True) if prev is None else prev + g
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _check_broadcast(a: np.ndarray, b: np.ndarray):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    big, small = (a, b) if a.ndim >= b.ndim else (b, a)
    tail = big.shape[big.ndim - small.ndim:]
    if small.ndim == 1 and tail == small.shape:
        return
    if small.ndim == big.ndim and all(s in (1, t) for s, t in zip(small.shape, big.shape)):
        if sum(s != t for s, t in zip(small.shape, big.shape)) <= 1:
            return
    raise ShapeMismatch(f"incompatible shapes {a.shape} and {b.shape}")


# elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    out = Tensor._make(a.data + b.data, (a, b), None)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    out._backward = bw if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    out = Tensor._make(a.data * b.data, (a, b), None)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    out._backward = bw if out.requires_grad else None
    return out


def neg(a: Tensor) -> Tensor:
    return _unary(a, -a.data, lambda g: -g)


def _unary(a: Tensor, value: np.ndarray, grad_fn) -> Tensor:
    out = Tensor._make(value, (a,), None)
    if out.requires_grad:
        out._backward = lambda g: _accum(a, grad_fn(g))
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return _unary(a, s, lambda g: g * s * (1 - s))


def silu(a: Tensor) -> Tensor:
    s = expit(a.data)
    return _unary(a, a.data * s, lambda g: g * (s + a.data * s * (1 - s)))


def relu(a: Tensor) -> Tensor:
    m = a.data > 0
    return _unary(a, a.data * m, lambda g: g * m)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1 + erf(x / np.sqrt(2)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)
    return _unary(a, x * cdf, lambda g: g * (cdf + x * pdf))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _unary(a, t, lambda g: g * (1 - t * t))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _unary(a, e, lambda g: g * e)


def log(a: Tensor) -> Tensor:
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.data)
    return _unary(a, r, lambda g: g * 0.5 / r)


def tabs(a: Tensor) -> Tensor:
    """|x| with subgradient 0 at 0."""
    return _unary(a, np.abs(a.data), lambda g: g * np.sign(a.data))


def square(a: Tensor) -> Tensor:
    return _unary(a, a.data * a.data, lambda g: 2 * g * a.data)


def scale(a: Tensor, c: float) -> Tensor:
    return _unary(a, a.data * c, lambda g: g * c)


def reciprocal(a: Tensor) -> Tensor:
    r = 1.0 / a.data
    return _unary(a, r, lambda g: -g * r * r)


ACTIVATIONS = {
    "silu": silu,
    "sigmoid": sigmoid,
    "relu": relu,
    "gelu": gelu,
    "tanh": tanh,
    "identity": lambda x: x,
}


# linear algebra -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; ``a`` may be rank 2 or 3 (batched), ``b`` rank 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0] or b.ndim != 2:
        raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}")
    out = Tensor._make(a.data @ b.data, (a, b), None)

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            ga = a.data.reshape(-1, a.shape[-1])
            _accum(b, ga.T @ g.reshape(-1, g.shape[-1]))

    out._backward = bw if out.requires_grad else None
    return out


def spmm(s, x: Tensor) -> Tensor:
    """Constant (sparse or dense) matrix times a rank-2 tensor."""
    if s.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"spmm of {s.shape} and {x.shape}")
    val = s @ x.data
    val = np.asarray(val)
    st = s.T.tocsr() if sp.issparse(s) else s.T
    return _unary(x, val, lambda g: np.asarray(st @ g))


def transpose(a: Tensor) -> Tensor:
    return _unary(a, a.data.T.copy(), lambda g: g.T)


def reshape(a: Tensor, shape) -> Tensor:
    return _unary(a, a.data.reshape(shape), lambda g: g.reshape(a.shape))


# reductions and indexing ---------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    val = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return _unary(a, np.asarray(val), grad_fn)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / count)


def index(a: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing (row gather)."""
    val = a.data[idx]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return full

    return _unary(a, np.array(val), grad_fn)


gather_rows = index


def scatter_rows(a: Tensor, idx: np.ndarray, n: int) -> Tensor:
    """Sum rows of ``a`` into an n-row output at positions ``idx``."""
    idx = np.asarray(idx)
    out = np.zeros((n,) + a.shape[1:])
    np.add.at(out, idx, a.data)
    return _unary(a, out, lambda g: g[idx])


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    val = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = Tensor._make(val, tensors, None)

    def bw(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            _accum(t, piece)

    out._backward = bw if out.requires_grad else None
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _unary(a, s, lambda g: s * (g - (g * s).sum(axis=-1, keepdims=True)))


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _unary(a, out, lambda g: g - s * g.sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean (optionally class-weighted) negative log-likelihood.

    With ``weights`` the loss is Σ w_{y_i} nll_i / Σ w_{y_i}.
    """
    targets = np.asarray(targets, dtype=np.int64)
    lp = log_softmax(logits)
    picked = index(lp, (np.arange(len(targets)), targets))
    if weights is None:
        return scale(tsum(picked), -1.0 / len(targets))
    w = np.asarray(weights, dtype=np.float64)[targets]
    return scale(tsum(mul(picked, Tensor(w))), -1.0 / w.sum())


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred - Tensor(np.asarray(target, dtype=np.float64).reshape(pred.shape))
    return mean(square(diff))


# complex pairs ------------------------------------------------------------


class CTensor:
    """Complex tensor stored as a pair of real tensors (re, im)."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor | None = None):
        self.re = as_tensor(re)
        self.im = as_tensor(np.zeros_like(self.re.data)) if im is None else as_tensor(im)
        if self.re.shape != self.im.shape:
            raise ShapeMismatch("real and imaginary parts differ in shape")

    @classmethod
    def from_numpy(cls, z: np.ndarray) -> "CTensor":
        return cls(Tensor(np.real(z)), Tensor(np.imag(z)))

    @property
    def shape(self):
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


def cadd(a: CTensor, b: CTensor) -> CTensor:
    return CTensor(a.re + b.re, a.im + b.im)


def cmul(a: CTensor, b: CTensor) -> CTensor:
    """Elementwise complex product."""
    return CTensor(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)


def conj(a: CTensor) -> CTensor:
    return CTensor(a.re, neg(a.im))


def re(a: CTensor) -> Tensor:
    return a.re


def im(a: CTensor) -> Tensor:
    return a.im


def cabs(a: CTensor, eps: float = 0.0) -> Tensor:
    """Complex modulus √(re² + im²) (gradient 0 where the modulus is 0)."""
    r2 = a.re.data ** 2 + a.im.data ** 2 + eps
    mod = np.sqrt(r2)
    safe = np.where(mod > 0, mod, 1.0)
    out = Tensor._make(mod, (a.re, a.im), None)

    def bw(g):
        w = np.where(mod > 0, g / safe, 0.0)
        _accum(a.re, w * a.re.data)
        _accum(a.im, w * a.im.data)

    out._backward = bw if out.requires_grad else None
    return out


def cspmm(s, x) -> CTensor:
    """Constant complex (or real) matrix times a real or complex tensor."""
    if isinstance(x, Tensor):
        x = CTensor(x, Tensor(np.zeros_like(x.data)))
    if sp.issparse(s):
        sr, si = s.real.tocsr(), s.imag.tocsr()
    else:
        sr, si = np.real(s), np.imag(s)
    re_part = spmm(sr, x.re) - spmm(si, x.im)
    im_part = spmm(sr, x.im) + spmm(si, x.re)
    return CTensor(re_part, im_part)


def cscale(a: CTensor, t: Tensor) -> CTensor:
    """Multiply a complex tensor by a real tensor (broadcast as in ``mul``)."""
    return CTensor(a.re * t, a.im * t)


# backward ----------------------------------------------------------------


def backward(loss: Tensor, params: Sequence[Tensor] | None = None):
    """Accumulate d(loss)/d(·) into ``.grad`` of every reachable leaf.

    Returns a list of gradients aligned with ``params`` when given; a
    parameter that the loss does not depend on gets zeros.

    Raises:
        NotScalar: if ``loss`` holds more than one element.
    """
    if loss.data.size != 1:
        raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes or not t.requires_grad:
            continue
        nodes[t._id] = t
        stack.extend(t._parents)
    order = sorted(nodes.values(), key=lambda t: t._id, reverse=True)
    global _sink
    grads = {loss._id: np.ones_like(loss.data)}
    _sink = grads
    try:
        for t in order:
            g = grads.pop(t._id, None)
            if g is None:
                continue
            if t._backward is None:
                if t.grad is None:
                    t.grad = g
                else:
                    t.grad = t.grad + g
            else:
                t._backward(g)
    finally:
        _sink = None
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def zero_grad(params: Sequence[Tensor]):
    for p in params:
        p.grad = None
