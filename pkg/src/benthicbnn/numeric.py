"""Minimal reverse-mode autodiff on numpy arrays.

Only the operations needed by the convolutional autoencoder and the
Bayes-by-Backprop network are provided: dense and same-padded 2-D
convolution layers, a handful of elementwise functions, softmax
cross-entropy, mean squared error and an adaptive-moment optimiser.

Every op records a closure that maps the output gradient to the input
gradients; :func:`backward` walks the recorded graph in reverse
topological order.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, TrainingError, UsageError

__all__ = [
    "Tensor",
    "RandomStream",
    "OptimizerState",
    "as_tensor",
    "backward",
    "dense_forward",
    "conv2d_forward",
    "relu",
    "softplus",
    "log",
    "logaddexp",
    "exp",
    "square",
    "reshape",
    "tsum",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "mse",
    "optimizer_step",
    "he_normal",
]


class RandomStream:
    """Seeded random source identified by ``(seed, label)``.

    Distinct labels under the same seed give independent streams; the
    label is hashed with CRC32 so that the mapping is stable across runs
    and Python processes. Attribute access falls through to the wrapped
    :class:`numpy.random.Generator`.
    """

    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed)
        self.label = label
        key = zlib.crc32(label.encode("utf-8"))
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, key])
        self.generator = np.random.default_rng(ss)

    def child(self, label: str) -> "RandomStream":
        return RandomStream(self.seed, f"{self.label}/{label}")

    def __getattr__(self, name):
        return getattr(self.generator, name)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, label={self.label!r})"


class Tensor:
    """A float64 array that may take part in a recorded computation."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward", "_is_result")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.array(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        self._is_result = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def backward(self):
        return backward(self)

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._is_result = True
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor, params=None):
    """Back-propagate from a scalar ``loss``.

    Sets ``.grad`` on every leaf tensor that requires gradients and
    returns the list of gradients for ``params`` (zeros for parameters the
    loss does not depend on). The recorded graph is released afterwards,
    so a second call on the same loss raises :class:`UsageError`.
    """
    if not isinstance(loss, Tensor) or not loss._is_result:
        raise UsageError("backward() needs the output of a recorded forward pass")
    if loss.value.size != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")

    if params is not None:
        for p in params:
            p.grad = None

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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
        node._parents = ()
        node._backward = None
    loss._is_result = False

    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]


# elementwise and reduction ops ---------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _result(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / bv, av.shape),
                              _unbroadcast(-g * out / bv, bv.shape)))


def square(a):
    a = as_tensor(a)
    av = a.value
    return _result(av * av, (a,), lambda g: (2.0 * av * g,))


def log(a):
    a = as_tensor(a)
    av = a.value
    return _result(np.log(av), (a,), lambda g: (g / av,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _result(out, (a,), lambda g: (g * out,))


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    return _result(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def softplus(a):
    """ln(1 + e^x), evaluated without overflow."""
    a = as_tensor(a)
    av = a.value
    out = np.logaddexp(0.0, av)
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))
    return _result(out, (a,), lambda g: (g * sig,))


def logaddexp(a, b):
    """Elementwise ln(e^a + e^b)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = np.logaddexp(av, bv)
    wa = np.exp(av - out)
    wb = np.exp(bv - out)
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g * wa, av.shape), _unbroadcast(g * wb, bv.shape)))


def tsum(a, axis=None):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.asarray(a.value.sum(axis=axis)), (a,), bw)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _result(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


# layers --------------------------------------------------------------------

def dense_forward(x, weights, bias):
    """``x @ weights + bias`` for ``x`` of shape (batch, in)."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.value.ndim != 2 or weights.value.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(f"dense input {x.shape} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"bias {bias.shape} does not match weights {weights.shape}")
    xv, wv = x.value, weights.value
    out = xv @ wv + bias.value

    def bw(g):
        return (g @ wv.T if x.requires_grad else None,
                xv.T @ g if weights.requires_grad else None,
                g.sum(axis=0))

    return _result(out, (x, weights, bias), bw)


def _im2col(xv, k):
    b, c, h, w = xv.shape
    p = k // 2
    padded = np.pad(xv, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(padded, (k, k), axis=(2, 3))  # b, c, h, w, k, k
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k)


def conv2d_forward(x, kernels, bias):
    """Stride-1, zero-padded ("same") cross-correlation.

    ``x`` is (batch, ch_in, H, W), ``kernels`` is (ch_out, ch_in, k, k)
    with odd ``k``. Output is (batch, ch_out, H, W).
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.value.ndim != 4 or kernels.value.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernels, got {x.shape} and {kernels.shape}")
    b, c, h, w = x.shape
    o, ci, k, k2 = kernels.shape
    if ci != c:
        raise DimensionError(f"input has {c} channels but kernels {kernels.shape} expect {ci}")
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"kernel must be square with odd size, got {kernels.shape}")
    if bias.shape != (o,):
        raise DimensionError(f"bias {bias.shape} does not match {o} output channels")
    cols = _im2col(x.value, k)
    kmat = kernels.value.reshape(o, c * k * k)
    out = (cols @ kmat.T + bias.value).reshape(b, h, w, o).transpose(0, 3, 1, 2)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b * h * w, o)
        gk = (gmat.T @ cols).reshape(kernels.shape) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            p = k // 2
            gcols = (gmat @ kmat).reshape(b, h, w, c, k, k)
            gpad = np.zeros((b, c, h + 2 * p, w + 2 * p))
            for i in range(k):
                for j in range(k):
                    gpad[:, :, i:i + h, j:j + w] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gpad[:, :, p:p + h, p:p + w]
        return gx, gk, gmat.sum(axis=0)

    return _result(np.ascontiguousarray(out), (x, kernels, bias), bw)


# probabilities and losses --------------------------------------------------

def softmax(logits):
    """Row-wise softmax over the last axis with max-subtraction."""
    v = logits.value if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    logits = as_tensor(logits)
    v = logits.value
    z = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    probs = np.exp(out)
    return _result(out, (logits,),
                   lambda g: (g - probs * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits, labels, reduction="sum"):
    """Categorical negative log-likelihood of integer ``labels``."""
    labels = np.asarray(labels, dtype=np.int64)
    logits = as_tensor(logits)
    if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} do not align")
    v = logits.value
    z = v - v.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    nll = lse - z[rows, labels]
    scale = 1.0 if reduction == "sum" else 1.0 / len(labels)

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g * scale),)

    return _result(np.asarray(nll.sum() * scale), (logits,), bw)


def mse(pred, target):
    """Mean squared error over every element."""
    pred = as_tensor(pred)
    t = target.value if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise DimensionError(f"prediction {pred.shape} and target {t.shape} differ")
    diff = pred.value - t
    n = diff.size
    return _result(np.asarray((diff * diff).sum() / n), (pred,), lambda g: (g * 2.0 * diff / n,))


# initialisation and optimisation --------------------------------------------

def he_normal(shape, fan_in, stream, name=None) -> Tensor:
    """Fan-in scaled Gaussian initialisation (std = sqrt(2 / fan_in))."""
    return Tensor(stream.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True, name=name)


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs):
        state = cls(**kwargs)
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
        return state


def optimizer_step(params, grads, state: OptimizerState):
    """One adaptive-moment (Adam) update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, gradients and optimizer state differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise DimensionError(f"gradient {np.shape(g)} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {p.name or p.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
