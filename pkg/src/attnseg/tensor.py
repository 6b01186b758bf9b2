"""numpy-backed tensors with reverse-mode automatic differentiation.

The design is intentionally small.  A ``Tensor`` wraps a single ndarray.
Every operation returns a fresh tensor (inputs are never mutated) and, while
gradients are enabled, records a backward closure plus references to the
tensors it was derived from.  ``Tensor.backward`` walks that graph once in
reverse topological order, so the graph is rebuilt from scratch on every
forward pass.

Every operation also checks its result for NaN/inf and raises
:class:`~attnseg.errors.NumericsError` on the spot; a silent non-finite value
is treated as a bug, not a state.  The check can be suspended with
:func:`finite_checks` when an overflow is expected and handled by the caller.

Models train in float32; gradient verification (:func:`grad_check`) requires
float64 parameters so that central differences with ``h = 1e-5`` are
meaningful.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import NumericsError, ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "finite_checks",
    "matmul",
    "softmax",
    "log_softmax",
    "sigmoid",
    "log_sigmoid",
    "gelu",
    "layer_norm",
    "grad_check",
    "truncated_normal",
]

_GRAD_ENABLED = True
_FINITE_CHECKS = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextmanager
def finite_checks(enabled):
    """Force the per-operation NaN/inf guard on or off inside the block."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


class Tensor:
    """An ndarray plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
            raise NumericsError("non-finite values passed to Tensor()")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._prev = ()
        self._op = "leaf"

    # ---- basic introspection -------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data)

    def detach(self):
        """A constant view of the same values, cut off from the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._backward = None
        out._prev = ()
        out._op = "detach"
        return out

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # ---- backward engine -------------------------------------------------

    def backward(self, grad=None, free_graph=True):
        """Accumulate gradients of ``self`` into every ancestor's ``.grad``.

        ``grad`` defaults to 1 and is only optional for scalars.  With
        ``free_graph`` the closures and parent links are dropped as they are
        consumed, which releases the forward activations.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without an explicit gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(
                    f"gradient shape {grad.shape} does not match tensor shape {self.shape}"
                )

        # Iterative topological sort; graphs can be deeper than the default
        # recursion limit.
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = grad.copy()
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node)
            if free_graph:
                node._backward = None
                node._prev = ()

    # ---- operators ---------------------------------------------------------

    def __add__(self, other):
        return _add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return _sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return _sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return _mul(self, _as_tensor(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, _as_tensor(other, self))

    def __rtruediv__(self, other):
        return _div(_as_tensor(other, self), self)

    def __neg__(self):
        return _mul(self, _as_tensor(-1.0, self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return _pow(self, exponent)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    # ---- shape and reduction methods ----------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return _mean(self, axis, keepdims)

    def exp(self):
        return _exp(self)

    def log(self):
        return _log(self)

    def sigmoid(self):
        return sigmoid(self)


class Parameter(Tensor):
    """A trainable leaf tensor with a unique dotted name."""

    __slots__ = ("name",)

    def __init__(self, data, name, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        if not name:
            raise ValueError("Parameter needs a non-empty name")
        self.name = str(name)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.data.dtype})"


# ---- graph construction helpers -------------------------------------------


def _as_tensor(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data, op, parents, backward):
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    else:
        out.requires_grad = False
        out._prev = ()
        out._backward = None
    return out


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    np.add(t.grad, g, out=t.grad, casting="same_kind")


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ---- arithmetic ------------------------------------------------------------


def _add(a, b):
    def _bw(out):
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, "add", (a, b), _bw)


def _sub(a, b):
    def _bw(out):
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, "sub", (a, b), _bw)


def _mul(a, b):
    def _bw(out):
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, "mul", (a, b), _bw)


def _div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data

    def _bw(out):
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, "div", (a, b), _bw)


def _pow(a, exponent):
    c = float(exponent)
    with np.errstate(invalid="ignore", divide="ignore"):
        data = a.data**c

    def _bw(out):
        if not a.requires_grad:
            return
        if c == 0.0:
            return  # derivative of a constant
        with np.errstate(invalid="ignore", divide="ignore"):
            local = c * a.data ** (c - 1.0)
        _accumulate(a, out.grad * local)

    return _make(data, "pow", (a,), _bw)


def matmul(a, b):
    """Matrix product with leading batch dimensions broadcast numpy-style."""
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul expects two Tensors")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-d operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} @ {b.shape}") from exc

    def _bw(out):
        g = out.grad
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(data, "matmul", (a, b), _bw)


# ---- shape ops --------------------------------------------------------------


def _reshape(a, shape):
    data = a.data.reshape(shape)

    def _bw(out):
        if a.requires_grad:
            _accumulate(a, out.grad.reshape(a.data.shape))

    return _make(data, "reshape", (a,), _bw)


def _transpose(a, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"transpose axes {axes} do not permute shape {a.shape}")
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def _bw(out):
        if a.requires_grad:
            _accumulate(a, np.transpose(out.grad, inverse))

    return _make(data, "transpose", (a,), _bw)


def _getitem(a, idx):
    data = a.data[idx]

    def _bw(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            _accumulate(a, g)

    return _make(data, "getitem", (a,), _bw)


# ---- reductions --------------------------------------------------------------


def _sum(a, axis, keepdims):
    axes = _normalize_axes(axis, a.data.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def _bw(out):
        if not a.requires_grad:
            return
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _make(data, "sum", (a,), _bw)


def _mean(a, axis, keepdims):
    axes = _normalize_axes(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def _bw(out):
        if not a.requires_grad:
            return
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g / count, a.data.shape))

    return _make(data, "mean", (a,), _bw)


# ---- pointwise nonlinearities -------------------------------------------------


def _exp(a):
    with np.errstate(over="ignore"):
        data = np.exp(a.data)

    def _bw(out):
        if a.requires_grad:
            _accumulate(a, out.grad * out.data)

    return _make(data, "exp", (a,), _bw)


def _log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def _bw(out):
        if a.requires_grad:
            _accumulate(a, out.grad / a.data)

    return _make(data, "log", (a,), _bw)


def sigmoid(a):
    """Logistic function, computed on the numerically safe side of 0."""
    x = a.data
    z = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def _bw(out):
        if a.requires_grad:
            _accumulate(a, out.grad * out.data * (1.0 - out.data))

    return _make(data, "sigmoid", (a,), _bw)


def log_sigmoid(a):
    """log(sigmoid(x)) via the softplus identity; safe for large |x|."""
    x = a.data
    data = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def _bw(out):
        if a.requires_grad:
            z = np.exp(-np.abs(x))
            sig_neg = np.where(x >= 0, z / (1.0 + z), 1.0 / (1.0 + z))  # sigmoid(-x)
            _accumulate(a, out.grad * sig_neg)

    return _make(data, "log_sigmoid", (a,), _bw)


def softmax(a, axis=-1):
    """Softmax along ``axis`` with the max subtracted before exponentiation,
    so uniform and extreme inputs are both safe."""
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def _bw(out):
        if a.requires_grad:
            y = out.data
            inner = (out.grad * y).sum(axis=axis, keepdims=True)
            _accumulate(a, y * (out.grad - inner))

    return _make(data, "softmax", (a,), _bw)


def log_softmax(a, axis=-1):
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def _bw(out):
        if a.requires_grad:
            soft = np.exp(out.data)
            _accumulate(a, out.grad - soft * out.grad.sum(axis=axis, keepdims=True))

    return _make(data, "log_softmax", (a,), _bw)


_GELU_C0 = math.sqrt(2.0 / math.pi)
_GELU_C1 = 0.044715


def gelu(a):
    """Gaussian error linear unit, tanh approximation."""
    x = a.data
    # x * x * x, not x**3: np.power on arrays with negative entries falls off
    # the fast path and costs ~100x more.
    inner = _GELU_C0 * (x + _GELU_C1 * (x * x * x))
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def _bw(out):
        if a.requires_grad:
            d_inner = _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * x * x)
            local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
            _accumulate(a, out.grad * local)

    return _make(data, "gelu", (a,), _bw)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then scale and
    shift per channel."""
    if gamma.data.shape != x.data.shape[-1:] or beta.data.shape != x.data.shape[-1:]:
        raise ShapeError(
            f"layer_norm scale/shift shapes {gamma.shape}/{beta.shape} "
            f"do not match channels of {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gamma.data + beta.data
    channels = x.data.shape[-1]

    def _bw(out):
        g = out.grad
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).reshape(-1, channels).sum(axis=0))
        if beta.requires_grad:
            _accumulate(beta, g.reshape(-1, channels).sum(axis=0))
        if x.requires_grad:
            gg = g * gamma.data
            m1 = gg.mean(axis=-1, keepdims=True)
            m2 = (gg * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, (gg - m1 - xhat * m2) * inv)

    return _make(data, "layer_norm", (x, gamma, beta), _bw)


# ---- verification ------------------------------------------------------------


def grad_check(f, params, h=1e-5, samples_per_param=None, rng=None):
    """Compare tape gradients of the scalar ``f()`` against central
    finite differences.

    ``f`` is re-evaluated with each sampled parameter entry nudged by ``+h`` and ``-h``;
    the difference quotient is compared with the gradient recorded by one
    backward pass.  Returns the worst relative error, where the relative
    error uses ``max(|a|, |b|, 1)`` as denominator so that near-zero
    gradients are judged on absolute error.

    ``samples_per_param`` bounds the number of entries probed per parameter
    (all entries when ``None``); every parameter is always visited.  Requires
    float64 parameters, otherwise ``h`` drowns in rounding noise.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError(f"grad_check needs float64 parameters, {getattr(p, 'name', '?')} is {p.data.dtype}")
        p.grad = None
    loss = f()
    if loss.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {loss.shape}")
    loss.backward()
    tape = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for p, g in zip(params, tape):
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            n = flat.size
            if samples_per_param is None or samples_per_param >= n:
                indices = range(n)
            else:
                indices = rng.choice(n, size=samples_per_param, replace=False)
            for i in indices:
                original = flat[i]
                flat[i] = original + h
                f_plus = float(f().data)
                flat[i] = original - h
                f_minus = float(f().data)
                flat[i] = original
                fd = (f_plus - f_minus) / (2.0 * h)
                err = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1.0)
                if err > worst:
                    worst = err
    return worst


def truncated_normal(rng, shape, std=0.02, dtype=np.float32):
    """Normal(0, std) samples clipped to two standard deviations."""
    values = rng.normal(0.0, std, size=shape)
    return np.clip(values, -2.0 * std, 2.0 * std).astype(dtype)
