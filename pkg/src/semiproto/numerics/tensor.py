"""Dense float64 tensors with tape-style reverse-mode differentiation.

Each differentiable op records a :class:`Node` on its output when any input
requires a gradient. :func:`backward` orders the recorded nodes
topologically, walks them once in reverse and frees them afterwards.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from semiproto import kernels
from semiproto.errors import ConfigurationError, ContractError, NumericError

_local = threading.local()
_op_ids = itertools.count(1)


def is_grad_enabled():
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Node:
    __slots__ = ("op_id", "kind", "inputs", "backward_fn")

    def __init__(self, op_id, kind, inputs, backward_fn):
        self.op_id = op_id
        self.kind = kind
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.node = None
        self.name = name

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
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic sugar; all of it routes through the primitives below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

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

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(kind, out, inputs, backward_fn):
    """Wrap ``out`` as a Tensor, check finiteness and record the node."""
    op_id = next(_op_ids)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite output from op '{kind}' (op id {op_id})", op_id=op_id)
    result = Tensor(out)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result.node = Node(op_id, kind, inputs, backward_fn)
    return result


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConfigurationError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _record("div", out, (a, b), bw)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0  # subgradient at 0 is 0

    def bw(g):
        return (g * mask,)

    return _record("relu", np.where(mask, x.data, 0.0), (x,), bw)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _record("tanh", out, (x,), bw)


def _sigmoid(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    x = as_tensor(x)
    out = _sigmoid(x.data)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", out, (x,), bw)


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)

    def bw(g):
        return (g * out,)

    return _record("exp", out, (x,), bw)


def log(x):
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)

    def bw(g):
        return (g / x.data,)

    return _record("log", out, (x,), bw)


def square(x):
    x = as_tensor(x)

    def bw(g):
        return (2.0 * g * x.data,)

    return _record("square", x.data * x.data, (x,), bw)


# ----------------------------------------------------------------- reductions


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def bw(g):
        return (np.array(_expand_reduced(g, x.shape, axis, keepdims)),)

    return _record("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    if count == 0:
        raise ConfigurationError(f"mean over an empty axis of shape {x.shape}")

    def bw(g):
        return (np.array(_expand_reduced(g, x.shape, axis, keepdims)) / count,)

    return _record("mean", np.mean(x.data, axis=axis, keepdims=keepdims), (x,), bw)


def _extreme(kind, x, axis, keepdims):
    x = as_tensor(x)
    if axis is None:
        raise ConfigurationError(f"{kind} requires an explicit axis")
    pick = np.argmax if kind == "max" else np.argmin
    idx = np.expand_dims(pick(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, idx, gk, axis=axis)
        return (gx,)

    return _record(kind, out, (x,), bw)


def max_(x, axis, keepdims=False):
    return _extreme("max", x, axis, keepdims)


def min_(x, axis, keepdims=False):
    return _extreme("min", x, axis, keepdims)


# --------------------------------------------------------------------- shape


def broadcast_to(x, shape):
    x = as_tensor(x)
    try:
        out = np.array(np.broadcast_to(x.data, shape))
    except ValueError:
        raise ConfigurationError(f"broadcast: cannot broadcast {x.shape} to {tuple(shape)}") from None

    def bw(g):
        return (_unbroadcast(g, x.shape),)

    return _record("broadcast", out, (x,), bw)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ConfigurationError(f"reshape: cannot reshape {x.shape} to {shape}") from None

    def bw(g):
        return (g.reshape(x.shape),)

    return _record("reshape", out, (x,), bw)


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ConfigurationError(f"transpose expects a matrix, got shape {x.shape}")

    def bw(g):
        return (g.T,)

    return _record("transpose", np.ascontiguousarray(x.data.T), (x,), bw)


def getitem(x, index):
    x = as_tensor(x)
    out = x.data[index]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _record("getitem", np.array(out), (x,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ConfigurationError(f"concat: {err}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", out, tuple(tensors), bw)


def stop_gradient(x):
    """Identity on values; the result never carries gradient back to ``x``."""
    x = as_tensor(x)
    # Recorded so that leaves reached only through here get a zero gradient.
    return _record("stop_gradient", x.data.copy(), (x,), lambda g: (None,))


# -------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", a.data @ b.data, (a, b), bw)


def affine(x, w, b):
    """``x @ w + b`` as one node."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ConfigurationError(f"affine: incompatible shapes {x.shape}, {w.shape}, {b.shape}")

    def bw(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _record("affine", x.data @ w.data + b.data, (x, w, b), bw)


def _contig(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pairwise_sqdist(a, b):
    """Squared Euclidean distance between every row of ``a`` and of ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ConfigurationError(f"pairwise_sqdist: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = _contig(a.data), _contig(b.data)

    def bw(g):
        return kernels.sqdist_backward(_contig(g), ad, bd)

    return _record("pairwise_sqdist", kernels.sqdist(ad, bd), (a, b), bw)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    if x.ndim == 0:
        raise ConfigurationError("log_softmax needs at least one axis")
    if x.shape[axis] == 0:
        raise ConfigurationError("log_softmax over an empty axis")
    moved = np.moveaxis(x.data, axis, -1)
    flat = _contig(moved.reshape(-1, moved.shape[-1]))
    out_flat = kernels.log_softmax(flat) if flat.shape[0] else flat.copy()
    out = np.moveaxis(out_flat.reshape(moved.shape), -1, axis)

    def bw(g):
        gm = _contig(np.moveaxis(g, axis, -1).reshape(-1, moved.shape[-1]))
        gx = kernels.log_softmax_backward(gm, out_flat) if gm.shape[0] else gm
        return (np.moveaxis(gx.reshape(moved.shape), -1, axis),)

    return _record("log_softmax", np.ascontiguousarray(out), (x,), bw)


def conv2d(x, w):
    """3x3 convolution, stride 1, zero padding 1. ``x`` is (B, C, H, W)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3) or w.shape[1] != x.shape[1]:
        raise ConfigurationError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    xd, wd = _contig(x.data), _contig(w.data)

    def bw(g):
        return kernels.conv3x3_backward(_contig(g), xd, wd)

    return _record("conv2d", kernels.conv3x3(xd, wd), (x, w), bw)


def maxpool2(x):
    """2x2 max-pool with stride 2; odd trailing rows/columns are dropped."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ConfigurationError(f"maxpool2 expects (B, C, H, W), got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    out, idx = kernels.maxpool2(_contig(x.data))

    def bw(g):
        return (kernels.maxpool2_backward(_contig(g), idx, h, w),)

    return _record("maxpool2", out, (x,), bw)


OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "affine": affine,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "square": square,
    "sum": sum_,
    "mean": mean,
    "max": max_,
    "min": min_,
    "broadcast": broadcast_to,
    "reshape": reshape,
    "transpose": transpose,
    "getitem": getitem,
    "concat": concat,
    "pairwise_sqdist": pairwise_sqdist,
    "log_softmax": log_softmax,
    "conv2d": conv2d,
    "maxpool2": maxpool2,
    "stop_gradient": stop_gradient,
}


def forward_op(kind, *inputs, **attrs):
    """Apply primitive ``kind`` by name."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown op '{kind}'", key=kind) from None
    return fn(*inputs, **attrs)


# ------------------------------------------------------------------- backward


class Graph:
    """Recorded nodes reachable from an output, in topological order."""

    def __init__(self, output):
        self.output = output
        self.nodes = []  # (tensor, node) pairs, inputs before outputs
        self.leaves = []
        seen = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.nodes.append(t)
                continue
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            if t.node is None:
                self.leaves.append(t)
                continue
            stack.append((t, True))
            for inp in t.node.inputs:
                if id(inp) not in seen and inp.requires_grad:
                    stack.append((inp, False))

    def free(self):
        for t in self.nodes:
            t.node = None
        self.nodes = []


def backward(loss, wrt=None):
    """Back-propagate from a scalar ``loss``.

    Leaf tensors reached by the graph get their ``grad`` set. When ``wrt``
    is given, a list of gradients for those tensors is returned, zeros for
    any the loss does not depend on. The graph is freed afterwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(graph.nodes):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t.node
        for inp, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for leaf in graph.leaves:
        g = grads.get(id(leaf))
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.array(g, dtype=np.float64).reshape(leaf.shape)
    reached = {id(leaf) for leaf in graph.leaves}
    graph.free()
    if wrt is None:
        return None
    out = []
    for t in wrt:
        if id(t) not in reached:
            t.grad = np.zeros_like(t.data)
        out.append(t.grad)
    return out
