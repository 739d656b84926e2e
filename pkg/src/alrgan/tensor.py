"""Minimal dense tensor engine with reverse-mode automatic differentiation.

Everything is float64. A :class:`Tensor` produced by an operation keeps
references to its input tensors plus a backward closure, so the computation
graph itself is the tape; :func:`backward` walks it exactly once in reverse
topological order and accumulates gradients into every ``requires_grad``
tensor it reaches.

Subgradient conventions (fixed, deterministic):

* ``abs`` at 0 contributes 0 (``sign(0) = 0``);
* ``max``/``min`` route the gradient to the lowest flat index among ties;
* ``frobenius_norm`` at the zero tensor has gradient 0;
* ``clamp`` passes gradient only strictly inside the interval.

Hot convolution/pool kernels are delegated to :mod:`alrgan.kernels`.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Misuse of the autodiff tape (non-scalar loss, repeated backward...)."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "_op", "_done")

    def __init__(self, data, requires_grad=False, _parents=(), _bwd=None, _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._bwd = _bwd
        self._op = _op
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"

    # Operator sugar; the functions below do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data, rng=None, shape=None) -> Tensor:
    """Trainable leaf. With ``rng`` and ``shape``, uniform +-1/sqrt(fan_in)."""
    if data is None:
        fan_in = shape[0] if len(shape) > 1 else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data, requires_grad=True)


def const(data) -> Tensor:
    return Tensor(data)


def _node(data, parents, bwd, op) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _bwd=bwd, _op=op)


def _acc(t: Tensor, g: np.ndarray) -> None:
    # first consumer copies (g may be shared with sibling paths), later ones add
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every reachable requires_grad tensor with d(loss)/d(t).

    The loss must be scalar. A second backward through the same recorded graph
    is rejected.
    """
    if loss.data.shape != ():
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._done:
        raise GraphError("backward already ran on this tape; rebuild the graph")

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.asarray(1.0)
    for node in reversed(order):
        if node._bwd is None:
            continue  # leaf: reusable across tapes
        if node._done:
            raise GraphError(f"node '{node._op}' already consumed by a backward pass")
        node._done = True
        if node.grad is not None:
            node._bwd(node.grad)


# ------------------------------------------------------------ elementwise


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def bwd(g):
        if a.requires_grad:
            _acc(a, g)
        if b.requires_grad:
            _acc(b, g)

    return _node(a.data + b.data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def bwd(g):
        if a.requires_grad:
            _acc(a, g)
        if b.requires_grad:
            _acc(b, -g)

    return _node(a.data - b.data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def bwd(g):
        if a.requires_grad:
            _acc(a, g * b.data)
        if b.requires_grad:
            _acc(b, g * a.data)

    return _node(a.data * b.data, (a, b), bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")

    def bwd(g):
        if a.requires_grad:
            _acc(a, g / b.data)
        if b.requires_grad:
            _acc(b, -g * a.data / (b.data * b.data))

    return _node(a.data / b.data, (a, b), bwd, "div")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        _acc(a, c * g)

    return _node(c * a.data, (a,), bwd, "scale")


def add_const(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        _acc(a, g)

    return _node(a.data + float(c), (a,), bwd, "add_const")


def mul_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """(R, C) * (C,) broadcast across rows (channel-wise mask product)."""
    if x.data.ndim != 2 or v.data.shape != (x.data.shape[1],):
        raise ShapeError(f"mul_rowvec: shapes {x.data.shape} and {v.data.shape}")

    def bwd(g):
        if x.requires_grad:
            _acc(x, g * v.data)
        if v.requires_grad:
            _acc(v, (g * x.data).sum(axis=0))

    return _node(x.data * v.data, (x, v), bwd, "mul_rowvec")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """(N, M) + (M,) row-broadcast bias."""
    if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_bias: shapes {x.data.shape} and {b.data.shape}")

    def bwd(g):
        if x.requires_grad:
            _acc(x, g)
        if b.requires_grad:
            _acc(b, g.sum(axis=0))

    return _node(x.data + b.data, (x, b), bwd, "add_bias")


# ------------------------------------------------------------ linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape}")

    def bwd(g):
        if a.requires_grad:
            _acc(a, g @ b.data.T)
        if b.requires_grad:
            _acc(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bwd, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: need 2-d, got {a.data.shape}")

    def bwd(g):
        _acc(a, g.T)

    return _node(a.data.T.copy(), (a,), bwd, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        _acc(a, g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), bwd, "reshape")


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad:
                _acc(p, piece)

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, bwd, "concat")


def take_rows(table: Tensor, idx) -> Tensor:
    """Row gather (embedding lookup); scatter-add on backward."""
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        _acc(table, gt)

    return _node(table.data[idx], (table,), bwd, "take_rows")


# ------------------------------------------------------------ reductions


def sum_(a: Tensor) -> Tensor:
    def bwd(g):
        _acc(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(np.asarray(a.data.sum()), (a,), bwd, "sum")


def mean_(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(g):
        _acc(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _node(np.asarray(a.data.mean()), (a,), bwd, "mean")


def _extreme(a: Tensor, which: str) -> Tensor:
    flat = a.data.ravel()
    i = int(np.argmax(flat) if which == "max" else np.argmin(flat))

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga.ravel()[i] = g
        _acc(a, ga)

    return _node(np.asarray(flat[i]), (a,), bwd, which)


def max_(a: Tensor) -> Tensor:
    """Global max; ties give the subgradient to the lowest flat index."""
    return _extreme(a, "max")


def min_(a: Tensor) -> Tensor:
    return _extreme(a, "min")


def max_axis0(a: Tensor) -> Tensor:
    """Column-wise max of a 2-d tensor; lowest-index tie-break per column."""
    if a.data.ndim != 2:
        raise ShapeError(f"max_axis0: need 2-d, got {a.data.shape}")
    rows = np.argmax(a.data, axis=0)
    cols = np.arange(a.data.shape[1])

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[rows, cols] = g
        _acc(a, ga)

    return _node(a.data[rows, cols], (a,), bwd, "max_axis0")


def abs_(a: Tensor) -> Tensor:
    def bwd(g):
        _acc(a, g * np.sign(a.data))

    return _node(np.abs(a.data), (a,), bwd, "abs")


def l1_norm(a: Tensor) -> Tensor:
    def bwd(g):
        _acc(a, g * np.sign(a.data))

    return _node(np.asarray(np.abs(a.data).sum()), (a,), bwd, "l1_norm")


def frobenius_norm(a: Tensor) -> Tensor:
    nrm = float(np.sqrt((a.data * a.data).sum()))

    def bwd(g):
        # subgradient 0 at the zero tensor
        _acc(a, g * (a.data / nrm) if nrm > 0.0 else np.zeros_like(a.data))

    return _node(np.asarray(nrm), (a,), bwd, "frobenius_norm")


# ------------------------------------------------------------ nonlinearities


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    pos = a.data >= 0

    def bwd(g):
        _acc(a, g * np.where(pos, 1.0, slope))

    return _node(np.where(pos, a.data, slope * a.data), (a,), bwd, "leaky_relu")


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bwd(g):
        _acc(a, g * y * (1.0 - y))

    return _node(y, (a,), bwd, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bwd(g):
        _acc(a, g * (1.0 - y * y))

    return _node(y, (a,), bwd, "tanh")


def softplus(a: Tensor) -> Tensor:
    """ln(1 + e^x), evaluated as max(x,0) + log1p(e^-|x|) to avoid overflow."""
    y = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def bwd(g):
        _acc(a, g * 0.5 * (1.0 + np.tanh(0.5 * a.data)))

    return _node(y, (a,), bwd, "softplus")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def bwd(g):
        _acc(a, g * 0.5 / y)

    return _node(y, (a,), bwd, "sqrt")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def bwd(g):
        _acc(a, g * y)

    return _node(y, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    def bwd(g):
        _acc(a, g / a.data)

    return _node(np.log(a.data), (a,), bwd, "log")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)

    def bwd(g):
        _acc(a, g * inside)

    return _node(np.clip(a.data, lo, hi), (a,), bwd, "clamp")


def softmax_axis(a: Tensor, axis: int) -> Tensor:
    """Max-subtracted softmax; slices along ``axis`` sum to 1."""
    if not -a.data.ndim <= axis < a.data.ndim:
        raise IndexError(f"softmax_axis: axis {axis} out of range for {a.data.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _acc(a, y * (g - dot))

    return _node(y, (a,), bwd, "softmax_axis")


# ------------------------------------------------------------ spatial ops


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 stride-1 zero-same-pad convolution: (C,H,W),(F,C,3,3),(F,)->(F,H,W)."""
    if x.data.ndim != 3 or w.data.ndim != 4 or w.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"conv3x3: shapes {x.data.shape} and {w.data.shape}")
    y = kernels.conv3x3_fwd(x.data, w.data, b.data)

    def bwd(g):
        gx, gw, gb = kernels.conv3x3_bwd(x.data, w.data, g)
        if x.requires_grad:
            _acc(x, gx)
        if w.requires_grad:
            _acc(w, gw)
        if b.requires_grad:
            _acc(b, gb)

    return _node(y, (x, w, b), bwd, "conv3x3")


def meanpool2(x: Tensor) -> Tensor:
    if x.data.ndim != 3 or x.data.shape[1] % 2 or x.data.shape[2] % 2:
        raise ShapeError(f"meanpool2: bad shape {x.data.shape}")

    def bwd(g):
        _acc(x, kernels.meanpool2_bwd(g))

    return _node(kernels.meanpool2_fwd(x.data), (x,), bwd, "meanpool2")


def upsample2(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeError(f"upsample2: bad shape {x.data.shape}")

    def bwd(g):
        _acc(x, kernels.upsample2_bwd(g))

    return _node(kernels.upsample2_fwd(x.data), (x,), bwd, "upsample2")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for (N, K) inputs."""
    return add_bias(matmul(x, w), b)


# ------------------------------------------------------------ verification


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between the tape gradient of f and central differences.

    f must map ``x`` to a scalar Tensor through recorded operations. The
    per-coordinate error is |ad - fd| / max(1, |ad|, |fd|), so it degrades to
    an absolute comparison for small gradients.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not x.requires_grad:
        raise GraphError("grad_check needs a requires_grad tensor")

    y = f(x)
    if y.data.shape != ():
        raise GraphError(f"grad_check needs a scalar-valued f, got {y.data.shape}")
    x.grad = None
    backward(y)
    ad = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    fd = np.zeros_like(x.data)
    flat = x.data.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        with no_grad():
            fp = float(f(x).data)
        flat[i] = orig - eps
        with no_grad():
            fm = float(f(x).data)
        flat[i] = orig
        fd.ravel()[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(ad), np.abs(fd)))
    return float((np.abs(ad - fd) / denom).max())
