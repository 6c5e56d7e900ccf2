"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array. Every differentiable op returns a new
tensor that remembers its parents and a backward rule mapping the output
gradient to one gradient per parent. :meth:`Tensor.backward` walks the recorded
graph in reverse topological order, accumulates gradients into ``.grad`` and
then releases the graph.

Broadcasting is deliberately narrow: an operand may broadcast *into* the other
operand's exact shape (bias over rows, a scalar affine, a shared table over a
batch) but the result shape may never grow beyond the larger operand.
Batched matmul accepts a leading batch on the left operand with either a
shared 2-D right operand or an identically batched one.
"""

import math

import numpy as np

from .exceptions import ContractViolation, DimensionError

DTYPE = np.float64


def _as_array(value):
    arr = np.asarray(value, dtype=DTYPE)
    return arr


class Tensor:
    """Dense array with an optional gradient."""

    # make ``ndarray <op> Tensor`` defer to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operator sugar
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

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, *shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


class Parameter(Tensor):
    """Named model weight. ``trainable=False`` freezes it for the optimizer."""

    def __init__(self, data, name, trainable=True):
        super().__init__(data, requires_grad=trainable)
        self.name = name

    @property
    def trainable(self):
        return self.requires_grad

    @trainable.setter
    def trainable(self, value):
        self.requires_grad = bool(value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def tensor(value, requires_grad=False):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=requires_grad)


def _make(data, parents, backward_fn):
    """Build an op output; skips graph recording when nothing needs a gradient."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(data)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary_shape(a, b, op):
    if a.shape == b.shape:
        return a.shape
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        out = None
    if out is None or out not in (a.shape, b.shape):
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")
    return out


def backward(loss):
    """Populate ``.grad`` on every reachable tensor that requires one."""
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order = []
    seen = set()
    stack = [(loss, False)]
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg

    for node in order:
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = tensor(a), tensor(b)
    _binary_shape(a, b, "add")

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), _bw)


def sub(a, b):
    a, b = tensor(a), tensor(b)
    _binary_shape(a, b, "sub")

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), _bw)


def mul(a, b):
    a, b = tensor(a), tensor(b)
    _binary_shape(a, b, "mul")

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), _bw)


def div(a, b):
    a, b = tensor(a), tensor(b)
    _binary_shape(a, b, "div")
    out = a.data / b.data

    def _bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _make(out, (a, b), _bw)


def relu(a):
    a = tensor(a)
    mask = a.data > 0

    def _bw(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), _bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """tanh-approximated GELU, as used by GPT-2."""
    a = tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
    out = 0.5 * x * (1.0 + t)

    def _bw(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _make(out, (a,), _bw)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a):
    a = tensor(a)

    def _bw(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(), (a,), _bw)


def tmean(a):
    a = tensor(a)
    n = a.size

    def _bw(g):
        return (np.full(a.shape, float(g) / n),)

    return _make(a.data.mean(), (a,), _bw)


def reshape(a, *shape):
    a = tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])

    def _bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), _bw)


def transpose(a):
    """Swap the last two axes."""
    a = tensor(a)

    def _bw(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(np.swapaxes(a.data, -1, -2), (a,), _bw)


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(a, index):
    a = tensor(a)
    basic = _is_basic_index(index)

    def _bw(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    out = a.data[index]
    return _make(out.copy() if basic else out, (a,), _bw)


def concat(tensors, axis=-2):
    """Concatenate along ``axis`` (rows by default); all other dims must match."""
    tensors = [tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            x != y for i, (x, y) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise DimensionError(
                f"concat: shapes {[tt.shape for tt in tensors]} differ off axis {axis}"
            )
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), _bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b, exact_rows=False):
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either a 2-D matrix shared
    across the batch or has exactly ``a``'s batch axes. With ``exact_rows``
    and a shared ``b`` the product is evaluated with a fixed per-row
    summation order, so every output row is bitwise independent of how many
    rows are computed together (BLAS kernels do not guarantee this).
    """
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ for {a.shape} and {b.shape}")

    def _bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if shared:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    if exact_rows and shared:
        data = np.einsum("...k,kn->...n", a.data, b.data)
    else:
        data = a.data @ b.data
    return _make(data, (a, b), _bw)


def linear(x, w, b=None, exact_rows=False):
    """``x @ w + b`` with the bias broadcast over every leading axis."""
    x, w = tensor(x), tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input width {x.shape} does not match weights {w.shape}")
    if b is not None and tensor(b).shape != (w.shape[1],):
        raise DimensionError(f"linear: bias shape {tensor(b).shape} != ({w.shape[1]},)")
    if x.ndim == 1:
        out = matmul(reshape(x, 1, -1), w, exact_rows)
        out = reshape(out, w.shape[1])
    else:
        out = matmul(x, w, exact_rows)
    return out if b is None else add(out, b)


def softmax_rows(a, mask=None):
    """Numerically stable softmax over the last axis.

    ``mask`` is an optional boolean array (broadcastable to ``a``); False
    entries get zero weight. Every row must keep at least one entry.
    """
    a = tensor(a)
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), _bw)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Standardize over the last axis, then apply ``gamma * x_hat + beta``."""
    a, gamma, beta = tensor(a), tensor(gamma), tensor(beta)
    n = a.shape[-1]
    if n < 2:
        raise DimensionError(f"layer_norm needs a last dimension >= 2, got {a.shape}")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}, {beta.shape} vs width {n}")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def _bw(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        ga = None
        if a.requires_grad:
            dxhat = g * gamma.data
            ga = inv / n * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        return ga, ggamma, gbeta

    return _make(out, (a, gamma, beta), _bw)


def mse_loss(pred, target):
    """Mean of squared differences over all entries."""
    pred, target = tensor(pred), tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def _bw(g):
        gp = 2.0 * float(g) * diff / n
        return gp, -gp

    return _make(np.mean(diff**2), (pred, target), _bw)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers keyed by parameter name."""

    def __init__(self):
        self.m = {}
        self.v = {}


def adam_step(params, state, t, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place, for trainable parameters only."""
    if t < 1:
        raise ContractViolation(f"adam step index must be >= 1, got {t}")
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in params:
        if not p.trainable:
            continue
        if p.grad is None:
            raise ContractViolation(f"trainable parameter {p.name!r} has no gradient")
        g = p.grad
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[p.name] = m
        state.v[p.name] = v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        adam_step(self.params, self.state, self.t, self.lr, self.beta1, self.beta2, self.eps)
