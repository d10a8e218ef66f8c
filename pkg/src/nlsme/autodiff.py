"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every operation on a :class:`Tensor` that requires gradients is recorded as a
node carrying its operands and a backward rule.  Backward rules are written in
terms of the same differentiable operations, so calling :func:`grad` with
``create_graph=True`` produces gradients that can be differentiated again
(double backprop).  Without ``create_graph`` the rules run with recording
switched off and the returned tensors are constants.

Node ids come from a global counter, so every operand has a smaller id than
the node that consumes it.  Sorting reachable nodes by descending id is a
valid reverse topological order.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

SQRT_EPS = 1e-8

_ids = itertools.count()
_mode = threading.local()


class AutodiffError(Exception):
    """Base class for errors raised by the tape."""


class ShapeError(AutodiffError, ValueError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        joined = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class NonFiniteError(AutodiffError, FloatingPointError):
    def __init__(self, op):
        self.op = op
        super().__init__(f"{op}: produced a non-finite value")


def is_recording():
    return getattr(_mode, "recording", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate operations without recording them."""
    prev = is_recording()
    _mode.recording = False
    try:
        yield
    finally:
        _mode.recording = prev


@contextlib.contextmanager
def _recording(flag):
    prev = is_recording()
    _mode.recording = flag
    try:
        yield
    finally:
        _mode.recording = prev


class Tensor:
    """A float64 array with an optional node in the differentiation graph."""

    __slots__ = ("data", "requires_grad", "parents", "backward", "op", "id", "__weakref__")

    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.backward = None
        self.op = "leaf"
        self.id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self.backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag}, op={self.op})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: subtract(self, other)
    __rsub__ = lambda self, other: subtract(other, self)
    __mul__ = lambda self, other: multiply(self, other)
    __rmul__ = lambda self, other: multiply(other, self)
    __truediv__ = lambda self, other: divide(self, other)
    __rtruediv__ = lambda self, other: divide(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)
    __getitem__ = lambda self, index: getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.id = next(_ids)
    out.op = op
    if is_recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward = backward
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward = None
    return out


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- shape plumbing -----------------------------------------------------------


def sum_to(x, shape):
    """Reduce ``x`` by summation down to a broadcast-compatible ``shape``."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    if lead < 0:
        raise ShapeError("sum_to", x.shape, shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and x.shape[lead + i] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True) if axes else x.data
    if lead:
        data = data.reshape(shape)
    if data.shape != shape:
        raise ShapeError("sum_to", x.shape, shape)
    in_shape = x.shape
    return _make(data, (x,), lambda g: (broadcast_to(g, in_shape),), "sum_to")


def broadcast_to(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", x.shape, shape) from None
    in_shape = x.shape
    return _make(data, (x,), lambda g: (sum_to(g, in_shape),), "broadcast_to")


def reshape(x, shape):
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    in_shape = x.shape
    return _make(data, (x,), lambda g: (reshape(g, in_shape),), "reshape")


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape)
    return _make(x.data.T, (x,), lambda g: (transpose(g),), "transpose")


def _is_basic(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(x, index):
    """Slice or gather; the adjoint scatters back into zeros."""
    x = as_tensor(x)
    try:
        data = x.data[index]
    except IndexError:
        raise ShapeError("getitem", x.shape) from None
    if not _is_basic(index):
        data = np.array(data)
    in_shape = x.shape
    return _make(data, (x,), lambda g: (scatter(g, in_shape, index),), "getitem")


def scatter(x, shape, index):
    x = as_tensor(x)
    data = np.zeros(shape)
    if _is_basic(index):
        data[index] = x.data
    else:
        np.add.at(data, index, x.data)
    return _make(data, (x,), lambda g: (getitem(g, index),), "scatter")


def concat(parts):
    """Concatenate 1-D tensors."""
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        if p.ndim != 1:
            raise ShapeError("concat", *(q.shape for q in parts))
    data = np.concatenate([p.data for p in parts])
    bounds = np.cumsum([0] + [p.size for p in parts])

    def backward(g):
        return tuple(getitem(g, slice(int(lo), int(hi))) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(data, tuple(parts), backward, "concat")


# -- arithmetic ---------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)), "add")


def subtract(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _make(
        a.data - b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(scale(g, -1.0), sb)), "subtract"
    )


def scale(x, c):
    """Multiply by a fixed python scalar."""
    x = as_tensor(x)
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (scale(g, c),), "scale")


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("multiply", a, b)
    sa, sb = a.shape, b.shape
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (sum_to(multiply(g, b), sa), sum_to(multiply(g, a), sb)),
        "multiply",
    )


def divide(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("divide", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = divide(g, b)
        gb = scale(multiply(ga, divide(a, b)), -1.0)
        return sum_to(ga, sa), sum_to(gb, sb)

    return _make(a.data / b.data, (a, b), backward, "divide")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
        "matmul",
    )


def dot(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError("dot", a.shape, b.shape)
    return _make(
        np.dot(a.data, b.data),
        (a, b),
        lambda g: (multiply(g, b), multiply(g, a)),
        "dot",
    )


# -- elementwise nonlinearities -----------------------------------------------


def relu(x):
    x = as_tensor(x)
    mask = Tensor((x.data > 0).astype(np.float64))
    return _make(x.data * mask.data, (x,), lambda g: (multiply(g, mask),), "relu")


def tanh(x):
    x = as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        return (multiply(g, subtract(1.0, multiply(out, out))),)

    out = _make(data, (x,), backward, "tanh")
    return out


def exp(x):
    x = as_tensor(x)
    out = _make(np.exp(x.data), (x,), lambda g: (multiply(g, out),), "exp")
    return out


def sqrt_eps(x, eps=SQRT_EPS):
    """sqrt(x + eps); smooth at x = 0 for eps > 0."""
    x = as_tensor(x)
    shifted = x.data + eps
    if np.any(shifted < 0):
        raise NonFiniteError("sqrt")
    out = _make(np.sqrt(shifted), (x,), lambda g: (divide(g, scale(out, 2.0)),), "sqrt")
    return out


# -- reductions ---------------------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    in_shape = x.shape
    if axis is None:
        kept = (1,) * x.ndim
    else:
        axes = {a % x.ndim for a in np.atleast_1d(axis)}
        kept = tuple(1 if i in axes else n for i, n in enumerate(in_shape))

    def backward(g):
        if not keepdims:
            g = reshape(g, kept)
        return (broadcast_to(g, in_shape),)

    data = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)
    return _make(data, (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def l2norm(x):
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError("l2norm", x.shape)
    out = _make(np.sqrt(np.dot(x.data, x.data)), (x,), lambda g: (multiply(divide(g, out), x),), "l2norm")
    return out


# -- classification -----------------------------------------------------------


def log_softmax(x):
    """Row-wise log-softmax of a (batch, classes) tensor."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("log_softmax", x.shape)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def backward(g):
        probs = exp(out)
        return (subtract(g, multiply(probs, tsum(g, axis=1, keepdims=True))),)

    out = _make(data, (x,), backward, "log_softmax")
    return out


def nll_loss(logp, labels):
    """Mean negative log-likelihood of integer ``labels`` under row log-probs."""
    logp = as_tensor(logp)
    labels = np.asarray(labels, dtype=np.intp)
    if logp.ndim != 2 or labels.shape != (logp.shape[0],):
        raise ShapeError("nll_loss", logp.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= logp.shape[1]):
        raise ShapeError("nll_loss", logp.shape, labels.shape)
    weights = np.zeros(logp.shape)
    weights[np.arange(labels.size), labels] = -1.0 / labels.size
    weights = Tensor(weights)
    return _make(
        np.sum(weights.data * logp.data),
        (logp,),
        lambda g: (multiply(g, weights),),
        "nll_loss",
    )


def cross_entropy(logits, labels):
    return nll_loss(log_softmax(logits), labels)


_OPS = {
    "add": add,
    "subtract": subtract,
    "scale": scale,
    "multiply": multiply,
    "divide": divide,
    "matmul": matmul,
    "relu": relu,
    "tanh": tanh,
    "exp": exp,
    "sum": tsum,
    "mean": mean,
    "dot": dot,
    "l2norm": l2norm,
    "sqrt": sqrt_eps,
    "log_softmax": log_softmax,
    "nll_loss": nll_loss,
    "cross_entropy": cross_entropy,
    "getitem": getitem,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
}


def record(op_kind, *operands, **kwargs):
    """Apply the operation named ``op_kind`` and record it on the graph."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise AutodiffError(f"unknown op {op_kind!r}") from None
    return fn(*operands, **kwargs)


# -- differentiation ----------------------------------------------------------


def _reachable(root):
    seen = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in seen or not node.requires_grad:
            continue
        seen[node.id] = node
        stack.extend(node.parents)
    return sorted(seen.values(), key=lambda n: n.id, reverse=True)


def grad(scalar, leaves, create_graph=False, allow_unused=False):
    """Gradients of a scalar tensor with respect to each of ``leaves``.

    With ``create_graph`` the results are themselves recorded and can be fed
    back into :func:`grad`.  Leaves the scalar does not depend on raise
    unless ``allow_unused`` is set, in which case they get zero gradients.
    """
    if not isinstance(scalar, Tensor) or scalar.shape != ():
        shape = getattr(scalar, "shape", None)
        raise ShapeError("grad", shape if shape is not None else ())
    single = isinstance(leaves, Tensor)
    if single:
        leaves = [leaves]
    for leaf in leaves:
        if not leaf.requires_grad:
            raise AutodiffError("grad: leaf does not require grad")
    if not scalar.requires_grad:
        order = []
    else:
        order = _reachable(scalar)
    grads = {}
    wanted = {leaf.id for leaf in leaves}
    with _recording(create_graph):
        if order:
            grads[scalar.id] = Tensor(np.ones(()))
        for node in order:
            if node.backward is None:
                continue
            g = grads.get(node.id) if node.id in wanted else grads.pop(node.id, None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.id)
                grads[parent.id] = pg if prev is None else add(prev, pg)
    out = []
    for leaf in leaves:
        g = grads.get(leaf.id)
        if g is None:
            if not allow_unused:
                raise AutodiffError("grad: leaf not in graph of the scalar")
            g = Tensor(np.zeros(leaf.shape))
        elif g.shape != leaf.shape:
            raise ShapeError("grad", g.shape, leaf.shape)
        out.append(g)
    return out[0] if single else out


def hvp(f, w, v):
    """Hessian-vector product of scalar function ``f`` at ``w`` along ``v``."""
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if w.shape != v.shape:
        raise ShapeError("hvp", w.shape, v.shape)
    leaf = Tensor(w, requires_grad=True)
    g = grad(f(leaf), leaf, create_graph=True)
    return grad(dot(reshape(g, (-1,)), Tensor(v.reshape(-1))), leaf, allow_unused=True).data


def graph_nbytes(root):
    """Bytes held by the arrays of every node reachable from ``root``."""
    return int(sum(n.data.nbytes for n in _reachable(root)))
