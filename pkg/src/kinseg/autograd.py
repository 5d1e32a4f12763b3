"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` records every operation applied to tensors that descend from
one of its variables. Tapes are cheap and meant to be rebuilt for every
evaluation of the objective.

    tape = Tape()
    x = tape.variable([1.0, 2.0])
    loss = (x * x).sum()
    (gx,) = tape.grad(loss, [x])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import kernels

SIGMOID_CLAMP = 30.0


class ShapeError(ValueError):
    """Operands have incompatible shapes for an operation."""


class GradientCheckError(RuntimeError):
    """A function evaluated to a non-finite value during a finite-difference check."""


@dataclass
class Node:
    kind: str
    parents: tuple
    inputs: tuple
    output: np.ndarray
    saved: Any = None
    attrs: dict = field(default_factory=dict)


class Tensor:
    """A float64 array, optionally bound to a node on a :class:`Tape`."""

    __slots__ = ("value", "node", "tape")
    __array_priority__ = 1000

    def __init__(self, value, node=None, tape=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.node = node
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        tag = "const" if self.node is None else f"node={self.node}"
        return f"Tensor({self.value!r}, {tag})"

    def numpy(self):
        return self.value

    # arithmetic
    def __add__(self, other):
        return record("add", self, other)

    def __radd__(self, other):
        return record("add", other, self)

    def __sub__(self, other):
        return record("sub", self, other)

    def __rsub__(self, other):
        return record("sub", other, self)

    def __mul__(self, other):
        return record("mul", self, other)

    def __rmul__(self, other):
        return record("mul", other, self)

    def __truediv__(self, other):
        return record("div", self, other)

    def __rtruediv__(self, other):
        return record("div", other, self)

    def __matmul__(self, other):
        return record("matmul", self, other)

    def __rmatmul__(self, other):
        return record("matmul", other, self)

    def __neg__(self):
        return record("neg", self)

    def __pow__(self, exponent):
        return record("power", self, exponent=float(exponent))

    def __getitem__(self, index):
        return record("getitem", self, index=index)

    # reductions and reshaping
    def sum(self, axis=None, keepdims=False):
        return record("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return record("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return record("reshape", self, shape=tuple(shape))

    @property
    def T(self):
        return record("transpose", self, axes=None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A tensor that is never tracked (gradients stop here)."""
    return Tensor(x.value if isinstance(x, Tensor) else x)


# ---------------------------------------------------------------------------
# forward / vector-Jacobian rules


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_check(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _binary(kind, fn):
    def forward(vals, attrs):
        a, b = vals
        _broadcast_check(kind, a, b)
        return fn(a, b), None
    return forward


def _add_vjp(g, vals, out, saved, attrs):
    a, b = vals
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_vjp(g, vals, out, saved, attrs):
    a, b = vals
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_vjp(g, vals, out, saved, attrs):
    a, b = vals
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _div_vjp(g, vals, out, saved, attrs):
    a, b = vals
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def _matmul_forward(vals, attrs):
    a, b = vals
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if ka != kb:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    try:
        return np.matmul(a, b), None
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None


def _matmul_vjp(g, vals, out, saved, attrs):
    a, b = vals
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = g
    if a.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    if b.ndim == 1:
        g2 = np.expand_dims(g2, -1)
    ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
    gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
    if a.ndim == 1:
        ga = ga.reshape(ga.shape[:-2] + (ga.shape[-1],))
    if b.ndim == 1:
        gb = gb.reshape(gb.shape[:-2] + (gb.shape[-2],))
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _unary(fn, dfn):
    """dfn(x, out, g) -> input gradient."""
    def forward(vals, attrs):
        return fn(vals[0]), None

    def vjp(g, vals, out, saved, attrs):
        return (dfn(vals[0], out, g),)
    return forward, vjp


def _sigmoid(x):
    x = np.clip(x, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    return 1.0 / (1.0 + np.exp(-x))


def _tanh(x):
    return np.tanh(np.clip(x, -SIGMOID_CLAMP, SIGMOID_CLAMP))


def _power_forward(vals, attrs):
    return np.power(vals[0], attrs["exponent"]), None


def _power_vjp(g, vals, out, saved, attrs):
    p = attrs["exponent"]
    return (g * p * np.power(vals[0], p - 1.0),)


def _clamp_forward(kind):
    def forward(vals, attrs):
        c = attrs["bound"]
        fn = np.minimum if kind == "min_const" else np.maximum
        return fn(vals[0], c), None
    return forward


def _min_const_vjp(g, vals, out, saved, attrs):
    return (g * (vals[0] <= attrs["bound"]),)


def _max_const_vjp(g, vals, out, saved, attrs):
    return (g * (vals[0] >= attrs["bound"]),)


def _reduce_forward(fn):
    def forward(vals, attrs):
        return np.asarray(fn(vals[0], axis=attrs["axis"], keepdims=attrs["keepdims"])), None
    return forward


def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def _sum_vjp(g, vals, out, saved, attrs):
    x = vals[0]
    return (np.array(_expand_reduced(g, x.shape, attrs["axis"], attrs["keepdims"])),)


def _mean_vjp(g, vals, out, saved, attrs):
    x = vals[0]
    count = x.size / max(out.size, 1)
    return (np.array(_expand_reduced(g, x.shape, attrs["axis"], attrs["keepdims"])) / count,)


def _concat_forward(vals, attrs):
    axis = attrs["axis"]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[v.shape for v in vals]} on axis {axis}") from None
    return out, None


def _concat_vjp(g, vals, out, saved, attrs):
    axis = attrs["axis"]
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tuple(np.split(g, splits, axis=axis))


def _stack_forward(vals, attrs):
    try:
        return np.stack(vals, axis=attrs["axis"]), None
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[v.shape for v in vals]}") from None


def _stack_vjp(g, vals, out, saved, attrs):
    axis = attrs["axis"]
    return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))


def _reshape_forward(vals, attrs):
    try:
        return vals[0].reshape(attrs["shape"]), None
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {vals[0].shape} to {attrs['shape']}") from None


def _reshape_vjp(g, vals, out, saved, attrs):
    return (g.reshape(vals[0].shape),)


def _broadcast_forward(vals, attrs):
    try:
        return np.array(np.broadcast_to(vals[0], attrs["shape"])), None
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {vals[0].shape} to {attrs['shape']}") from None


def _broadcast_vjp(g, vals, out, saved, attrs):
    return (_unbroadcast(g, vals[0].shape),)


def _transpose_forward(vals, attrs):
    return np.transpose(vals[0], attrs["axes"]), None


def _transpose_vjp(g, vals, out, saved, attrs):
    axes = attrs["axes"]
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


def _getitem_forward(vals, attrs):
    try:
        return np.array(vals[0][attrs["index"]]), None
    except IndexError as exc:
        raise ShapeError(f"getitem: {exc} (shape {vals[0].shape})") from None


def _getitem_vjp(g, vals, out, saved, attrs):
    gx = np.zeros_like(vals[0])
    np.add.at(gx, attrs["index"], g)
    return (gx,)


def _silhouette_forward(vals, attrs):
    a, b, r = vals
    n = a.shape[0]
    if a.shape != (n, 2) or b.shape != (n, 2) or r.shape != (n,):
        raise ShapeError(f"silhouette: expected (S,2),(S,2),(S,), got {a.shape}, {b.shape}, {r.shape}")
    return kernels.silhouette_forward(np.ascontiguousarray(a), np.ascontiguousarray(b),
                                      np.ascontiguousarray(r), float(attrs["tau"]),
                                      int(attrs["height"]), int(attrs["width"])), None


def _silhouette_vjp(g, vals, out, saved, attrs):
    a, b, r = vals
    return kernels.silhouette_backward(np.ascontiguousarray(a), np.ascontiguousarray(b),
                                       np.ascontiguousarray(r), float(attrs["tau"]),
                                       np.ascontiguousarray(g))


def _correlate_forward(vals, attrs):
    x = vals[0]
    if x.ndim != 2:
        raise ShapeError(f"correlate: expected a 2-D image, got shape {x.shape}")
    return kernels.correlate_edge(x, attrs["kernel"], attrs["axis"]), None


def _correlate_vjp(g, vals, out, saved, attrs):
    return (kernels.correlate_edge_adjoint(g, attrs["kernel"], attrs["axis"]),)


def _max_filter_forward(vals, attrs):
    x = vals[0]
    if x.ndim != 2:
        raise ShapeError(f"max_filter: expected a 2-D image, got shape {x.shape}")
    out, arg = kernels.max_filter_disc(x, attrs["radius"])
    return out, arg


def _max_filter_vjp(g, vals, out, saved, attrs):
    x = vals[0]
    return (kernels.scatter_add(g, saved, x.size).reshape(x.shape),)


@dataclass(frozen=True)
class OpRule:
    forward: Callable
    vjp: Callable


OPS: dict[str, OpRule] = {
    "add": OpRule(_binary("add", np.add), _add_vjp),
    "sub": OpRule(_binary("sub", np.subtract), _sub_vjp),
    "mul": OpRule(_binary("mul", np.multiply), _mul_vjp),
    "div": OpRule(_binary("div", np.divide), _div_vjp),
    "matmul": OpRule(_matmul_forward, _matmul_vjp),
    "sum": OpRule(_reduce_forward(np.sum), _sum_vjp),
    "mean": OpRule(_reduce_forward(np.mean), _mean_vjp),
    "sigmoid": OpRule(*_unary(_sigmoid, lambda x, y, g: g * y * (1.0 - y))),
    "tanh": OpRule(*_unary(_tanh, lambda x, y, g: g * (1.0 - y * y))),
    "relu": OpRule(*_unary(lambda x: np.maximum(x, 0.0), lambda x, y, g: g * (x > 0))),
    "sin": OpRule(*_unary(np.sin, lambda x, y, g: g * np.cos(x))),
    "cos": OpRule(*_unary(np.cos, lambda x, y, g: -g * np.sin(x))),
    "exp": OpRule(*_unary(np.exp, lambda x, y, g: g * y)),
    "log": OpRule(*_unary(np.log, lambda x, y, g: g / x)),
    "neg": OpRule(*_unary(np.negative, lambda x, y, g: -g)),
    "square": OpRule(*_unary(np.square, lambda x, y, g: 2.0 * g * x)),
    "sqrt": OpRule(*_unary(np.sqrt, lambda x, y, g: 0.5 * g / y)),
    "power": OpRule(_power_forward, _power_vjp),
    "min_const": OpRule(_clamp_forward("min_const"), _min_const_vjp),
    "max_const": OpRule(_clamp_forward("max_const"), _max_const_vjp),
    "concat": OpRule(_concat_forward, _concat_vjp),
    "stack": OpRule(_stack_forward, _stack_vjp),
    "reshape": OpRule(_reshape_forward, _reshape_vjp),
    "broadcast": OpRule(_broadcast_forward, _broadcast_vjp),
    "transpose": OpRule(_transpose_forward, _transpose_vjp),
    "getitem": OpRule(_getitem_forward, _getitem_vjp),
    "silhouette": OpRule(_silhouette_forward, _silhouette_vjp),
    "correlate": OpRule(_correlate_forward, _correlate_vjp),
    "max_filter": OpRule(_max_filter_forward, _max_filter_vjp),
}


# ---------------------------------------------------------------------------
# tape


class Tape:
    """Append-only record of operations; node ids are list positions."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.gradients: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.nodes)

    def variable(self, value) -> Tensor:
        value = np.array(value, dtype=np.float64)
        self.nodes.append(Node("leaf", (), (), value))
        return Tensor(value, len(self.nodes) - 1, self)

    def _append(self, kind, parents, inputs, output, saved, attrs):
        self.nodes.append(Node(kind, parents, inputs, output, saved, attrs))
        return len(self.nodes) - 1

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of the scalar ``loss`` for every node that influences it."""
        if loss.value.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        if loss.node is None or loss.tape is not self:
            self.gradients = {}
            return self.gradients
        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.value)}
        for nid in range(loss.node, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.kind == "leaf":
                continue
            rule = OPS[node.kind]
            pgrads = rule.vjp(g, node.inputs, node.output, node.saved, node.attrs)
            for pid, pg in zip(node.parents, pgrads):
                if pid is None or pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = np.array(pg, dtype=np.float64)
        self.gradients = grads
        return grads

    def grad(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        grads = self.backward(loss)
        return [grads[t.node] if t.node in grads and t.tape is self
                else np.zeros_like(t.value) for t in wrt]


def record(kind: str, *inputs, **attrs) -> Tensor:
    """Apply op ``kind`` to ``inputs``, registering it on their tape if any
    input is tracked."""
    rule = OPS.get(kind)
    if rule is None:
        raise ValueError(f"unknown op kind {kind!r}")
    tensors = [as_tensor(x) for x in inputs]
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError(f"{kind}: operands belong to different tapes")
            tape = t.tape
    vals = tuple(t.value for t in tensors)
    out, saved = rule.forward(vals, attrs)
    out = np.asarray(out, dtype=np.float64)
    if tape is None:
        return Tensor(out)
    parents = tuple(t.node if t.tape is tape else None for t in tensors)
    nid = tape._append(kind, parents, vals, out, saved, attrs)
    return Tensor(out, nid, tape)


# ---------------------------------------------------------------------------
# functional surface


def add(a, b):
    return record("add", a, b)


def sub(a, b):
    return record("sub", a, b)


def mul(a, b):
    return record("mul", a, b)


def div(a, b):
    return record("div", a, b)


def matmul(a, b):
    return record("matmul", a, b)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    return record("sum", x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return record("mean", x, axis=axis, keepdims=keepdims)


def sigmoid(x):
    return record("sigmoid", x)


def tanh(x):
    return record("tanh", x)


def relu(x):
    return record("relu", x)


def sin(x):
    return record("sin", x)


def cos(x):
    return record("cos", x)


def exp(x):
    return record("exp", x)


def log(x):
    return record("log", x)


def square(x):
    return record("square", x)


def sqrt(x):
    return record("sqrt", x)


def power(x, exponent):
    return record("power", x, exponent=float(exponent))


def minimum(x, bound: float):
    """Elementwise min with a constant."""
    return record("min_const", x, bound=float(bound))


def maximum(x, bound: float):
    """Elementwise max with a constant."""
    return record("max_const", x, bound=float(bound))


def clip(x, lo: float, hi: float):
    return minimum(maximum(x, lo), hi)


def concat(xs, axis=0):
    return record("concat", *xs, axis=axis)


def stack(xs, axis=0):
    return record("stack", *xs, axis=axis)


def reshape(x, shape):
    return record("reshape", x, shape=tuple(shape))


def broadcast_to(x, shape):
    return record("broadcast", x, shape=tuple(shape))


def transpose(x, axes=None):
    return record("transpose", x, axes=None if axes is None else tuple(axes))


def correlate(x, kernel, axis):
    """Correlate a 2-D image with an odd 1-D kernel along ``axis`` (edges replicated)."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 1 or len(kernel) % 2 != 1:
        raise ShapeError(f"correlate: kernel must be 1-D with odd length, got {kernel.shape}")
    return record("correlate", x, kernel=kernel, axis=int(axis))


def max_filter(x, radius: float):
    """Disc max filter; gradients route to the winning pixel."""
    if radius < 0:
        raise ValueError(f"max_filter: radius must be >= 0, got {radius}")
    return record("max_filter", x, radius=float(radius))


def silhouette(a, b, r, tau: float, height: int, width: int):
    """Soft union of projected capsules; see :mod:`kinseg.renderer`."""
    return record("silhouette", a, b, r, tau=float(tau), height=int(height), width=int(width))


# ---------------------------------------------------------------------------
# validation


def finite_diff_check(fn: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` maps a tensor shaped like ``point`` to a scalar tensor. The error per
    coordinate is ``|ad - fd| / (|fd| + 1e-8)``.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    point = np.array(point, dtype=np.float64)
    tape = Tape()
    x = tape.variable(point)
    out = fn(x)
    if not np.all(np.isfinite(out.value)):
        raise GradientCheckError(f"function is non-finite at the base point: {out.value}")
    (ad,) = tape.grad(out, [x])
    ad = ad.ravel()
    worst = 0.0
    flat = point.ravel()
    for i in range(flat.size):
        vals = []
        for sign in (1.0, -1.0):
            p = flat.copy()
            p[i] += sign * eps
            v = float(np.asarray(fn(Tensor(p.reshape(point.shape))).value).reshape(()))
            if not np.isfinite(v):
                raise GradientCheckError(f"non-finite function value at coordinate {i} "
                                         f"(offset {sign * eps:+g}): {v}")
            vals.append(v)
        fd = (vals[0] - vals[1]) / (2.0 * eps)
        worst = max(worst, abs(ad[i] - fd) / (abs(fd) + 1e-8))
    return worst
