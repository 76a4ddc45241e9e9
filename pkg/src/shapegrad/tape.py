"""Reverse-mode automatic differentiation over scalar-field graphs.

A graph is a DAG of :class:`Node` objects. Leaves are either design
parameters (bound at :func:`forward` time to a :class:`DesignVector`) or
constants. Interior nodes hold a forward rule and the matching
vector-Jacobian (and Jacobian-vector) rules. Values are numpy arrays that
follow numpy broadcasting, so a field depending only on ``x`` can stay a
``(1, Nx)`` row until it meets a ``y``-dependent factor.

Typical use::

    dv = DesignVector([0.3, 0.5], names=["x0", "x1"])
    x = constant(grid.x)
    field = apply(nl, x - dv.node("x0")) * apply(nl, dv.node("x1") - x)
    eps = forward(field, dv)
    grad = backward(field, cotangent)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ValidationError

OP_KINDS = (
    "elementwise-unary",
    "elementwise-binary",
    "broadcast",
    "reduce",
    "affine",
    "clamp-min",
    "clamp-max",
    "parameter-leaf",
    "constant-leaf",
)


@dataclass
class DesignVector:
    """Named optimization parameters with optional box bounds."""

    values: np.ndarray
    names: list[str] = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float)).copy()
        n = self.values.size
        if not self.names:
            self.names = [f"v{i}" for i in range(n)]
        self.names = list(self.names)
        if len(self.names) != n:
            raise ValidationError(f"{len(self.names)} names for {n} values")
        if len(set(self.names)) != n:
            raise ValidationError("design variable names must be unique")
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float).copy()
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValidationError("bounds must match the number of values")
        bad = (self.values < self.lower) | (self.values > self.upper)
        if bad.any():
            raise ValidationError(f"values out of bounds: {[self.names[i] for i in np.flatnonzero(bad)]}")

    def __len__(self):
        return self.values.size

    @property
    def n(self) -> int:
        return self.values.size

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown design variable {name!r}") from None

    def node(self, name: str | Sequence[str]) -> "Node":
        """Parameter leaf bound to one name (scalar) or several (vector)."""
        if isinstance(name, str):
            return param(self.index(name), name=name)
        return param([self.index(s) for s in name], name=",".join(name))

    def with_values(self, values) -> "DesignVector":
        return DesignVector(np.asarray(values, float), list(self.names), self.lower, self.upper)

    def clip(self, values) -> np.ndarray:
        return np.clip(values, self.lower, self.upper)


class Node:
    """One vertex of a differentiable graph.

    ``fwd(*parent_values) -> (value, saved)`` computes the node value and any
    data the derivative rules need; ``vjp(g, saved, *parent_values)`` returns
    one cotangent per parent (``None`` for non-differentiable inputs) and
    ``jvp(tangents, saved, *parent_values)`` the output tangent.
    """

    __slots__ = ("kind", "parents", "fwd", "vjp", "jvp", "name", "value", "saved", "index")

    def __init__(self, kind, parents=(), fwd=None, vjp=None, jvp=None, name=None, value=None, index=None):
        if kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {kind!r}")
        self.kind = kind
        self.parents = tuple(parents)
        self.fwd = fwd
        self.vjp = vjp
        self.jvp = jvp
        self.name = name or kind
        self.value = value if kind == "constant-leaf" else None
        self.saved = None
        self.index = index

    def __repr__(self):
        return f"Node({self.name!r}, kind={self.kind!r})"

    # arithmetic sugar -------------------------------------------------
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
        return affine(self, -1.0, 0.0)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# leaves ---------------------------------------------------------------

def constant(value, name: str | None = None) -> Node:
    value = np.asarray(value, dtype=float)
    return Node("constant-leaf", value=value, name=name or "const")


def param(index, name: str | None = None) -> Node:
    """Leaf reading ``params.values[index]`` (int -> scalar, list -> vector)."""
    idx = np.asarray(index, dtype=int) if not isinstance(index, (int, np.integer)) else int(index)
    return Node("parameter-leaf", name=name or f"param[{index}]", index=idx)


# elementwise ----------------------------------------------------------

def unary(x, f: Callable, df: Callable, name: str) -> Node:
    """Elementwise ``f`` with derivative ``df`` evaluated at the input."""
    x = as_node(x)

    def fwd(a):
        return f(a), None

    def vjp(g, saved, a):
        return (g * df(a),)

    def jvp(t, saved, a):
        return t[0] * df(a)

    return Node("elementwise-unary", (x,), fwd, vjp, jvp, name=name)


def sin(x):
    return unary(x, np.sin, np.cos, "sin")


def cos(x):
    return unary(x, np.cos, lambda a: -np.sin(a), "cos")


def exp(x):
    return unary(x, np.exp, np.exp, "exp")


def square(x):
    return unary(x, np.square, lambda a: 2.0 * a, "square")


def apply(nl, x) -> Node:
    """Apply a :class:`~shapegrad.nonlin.Nonlinearity` elementwise."""
    return unary(x, nl, nl.deriv, f"nl:{nl.kind}")


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def fwd(x, y):
        return x + y, None

    def vjp(g, saved, x, y):
        return _unbroadcast(g, np.shape(x)), _unbroadcast(g, np.shape(y))

    def jvp(t, saved, x, y):
        return t[0] + t[1]

    return Node("elementwise-binary", (a, b), fwd, vjp, jvp, name="add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def fwd(x, y):
        return x - y, None

    def vjp(g, saved, x, y):
        return _unbroadcast(g, np.shape(x)), _unbroadcast(-g, np.shape(y))

    def jvp(t, saved, x, y):
        return t[0] - t[1]

    return Node("elementwise-binary", (a, b), fwd, vjp, jvp, name="sub")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def fwd(x, y):
        return x * y, None

    def vjp(g, saved, x, y):
        return _unbroadcast(g * y, np.shape(x)), _unbroadcast(g * x, np.shape(y))

    def jvp(t, saved, x, y):
        return t[0] * y + x * t[1]

    return Node("elementwise-binary", (a, b), fwd, vjp, jvp, name="mul")


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def fwd(x, y):
        return x / y, None

    def vjp(g, saved, x, y):
        return _unbroadcast(g / y, np.shape(x)), _unbroadcast(-g * x / (y * y), np.shape(y))

    def jvp(t, saved, x, y):
        return t[0] / y - x * t[1] / (y * y)

    return Node("elementwise-binary", (a, b), fwd, vjp, jvp, name="div")


def hypot(dx, dy) -> Node:
    """Euclidean norm with a zero (sub)gradient at the origin."""
    dx, dy = as_node(dx), as_node(dy)

    def fwd(x, y):
        r = np.hypot(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 0.0)
        return r, inv

    def vjp(g, inv, x, y):
        return _unbroadcast(g * x * inv, np.shape(x)), _unbroadcast(g * y * inv, np.shape(y))

    def jvp(t, inv, x, y):
        return (t[0] * x + t[1] * y) * inv

    return Node("elementwise-binary", (dx, dy), fwd, vjp, jvp, name="hypot")


def atan2(dy, dx) -> Node:
    """Full-quadrant angle in (-pi, pi]; zero (sub)gradient at the origin."""
    dy, dx = as_node(dy), as_node(dx)

    def fwd(y, x):
        r2 = x * x + y * y
        inv = np.where(r2 > 0, 1.0 / np.where(r2 > 0, r2, 1.0), 0.0)
        return np.arctan2(y, x), inv

    def vjp(g, inv, y, x):
        return _unbroadcast(g * x * inv, np.shape(y)), _unbroadcast(-g * y * inv, np.shape(x))

    def jvp(t, inv, y, x):
        return (t[0] * x - t[1] * y) * inv

    return Node("elementwise-binary", (dy, dx), fwd, vjp, jvp, name="atan2")


# affine / clamps ------------------------------------------------------

def affine(x, scale: float, offset: float = 0.0) -> Node:
    """``scale * x + offset`` with constant coefficients."""
    x = as_node(x)
    scale = float(scale)
    offset = float(offset)

    def fwd(a):
        return scale * a + offset, None

    def vjp(g, saved, a):
        return (scale * g,)

    def jvp(t, saved, a):
        return scale * t[0]

    return Node("affine", (x,), fwd, vjp, jvp, name="affine")


def clamp_max(x, upper: float) -> Node:
    """``min(x, upper)``; at ``x == upper`` the unclamped slope 1 is used."""
    x = as_node(x)
    upper = float(upper)

    def fwd(a):
        mask = a <= upper
        return np.where(mask, a, upper), mask

    def vjp(g, mask, a):
        return (np.where(mask, g, 0.0),)

    def jvp(t, mask, a):
        return np.where(mask, t[0], 0.0)

    return Node("clamp-max", (x,), fwd, vjp, jvp, name="clamp-max")


def clamp_min(x, lower: float) -> Node:
    """``max(x, lower)``; at ``x == lower`` the unclamped slope 1 is used."""
    x = as_node(x)
    lower = float(lower)

    def fwd(a):
        mask = a >= lower
        return np.where(mask, a, lower), mask

    def vjp(g, mask, a):
        return (np.where(mask, g, 0.0),)

    def jvp(t, mask, a):
        return np.where(mask, t[0], 0.0)

    return Node("clamp-min", (x,), fwd, vjp, jvp, name="clamp-min")


# broadcast / reduce ---------------------------------------------------

def linear(x, matrix, shape=None) -> Node:
    """Apply a fixed (dense or sparse) matrix to the flattened input.

    Covers broadcasting maps such as the topology ``B`` matrix and basis
    expansions such as a sine series evaluated on a coordinate row.
    """
    x = as_node(x)
    out_shape = (matrix.shape[0],) if shape is None else tuple(shape)
    mt = matrix.T

    def fwd(a):
        return np.asarray(matrix @ np.ravel(a)).reshape(out_shape), None

    def vjp(g, saved, a):
        return (np.asarray(mt @ np.ravel(g)).reshape(np.shape(a)),)

    def jvp(t, saved, a):
        return np.asarray(matrix @ np.ravel(np.broadcast_to(t[0], np.shape(a)))).reshape(out_shape)

    return Node("broadcast", (x,), fwd, vjp, jvp, name="linear")


def broadcast_to(x, shape) -> Node:
    x = as_node(x)
    shape = tuple(shape)

    def fwd(a):
        return np.broadcast_to(a, shape).copy(), None

    def vjp(g, saved, a):
        return (_unbroadcast(g, np.shape(a)),)

    def jvp(t, saved, a):
        return np.broadcast_to(t[0], shape).copy()

    return Node("broadcast", (x,), fwd, vjp, jvp, name="broadcast")


def stack(nodes: Sequence) -> Node:
    """Gather scalar nodes into a 1-D vector."""
    nodes = [as_node(n) for n in nodes]

    def fwd(*vals):
        return np.array([float(v) for v in vals]), None

    def vjp(g, saved, *vals):
        return tuple(g[i] for i in range(len(vals)))

    def jvp(t, saved, *vals):
        return np.array([float(v) for v in t])

    return Node("broadcast", nodes, fwd, vjp, jvp, name="stack")


def reduce_sum(x) -> Node:
    x = as_node(x)

    def fwd(a):
        return np.sum(a), None

    def vjp(g, saved, a):
        return (np.full(np.shape(a), g),)

    def jvp(t, saved, a):
        return np.sum(t[0])

    return Node("reduce", (x,), fwd, vjp, jvp, name="sum")


def add_n(nodes: Sequence) -> Node:
    """Sum of several (broadcast-compatible) nodes."""
    nodes = [as_node(n) for n in nodes]
    if len(nodes) == 1:
        return nodes[0]

    def fwd(*vals):
        out = vals[0]
        for v in vals[1:]:
            out = out + v
        return out, None

    def vjp(g, saved, *vals):
        return tuple(_unbroadcast(g, np.shape(v)) for v in vals)

    def jvp(t, saved, *vals):
        out = t[0]
        for ti in t[1:]:
            out = out + ti
        return out

    return Node("reduce", nodes, fwd, vjp, jvp, name="add_n")


def mul_n(nodes: Sequence) -> Node:
    """Product of several nodes (used by Poly2D and the product intersection)."""
    nodes = [as_node(n) for n in nodes]
    if len(nodes) == 1:
        return nodes[0]

    def fwd(*vals):
        out = vals[0]
        for v in vals[1:]:
            out = out * v
        return out, None

    def _others(vals, skip):
        out = np.ones(())
        for i, v in enumerate(vals):
            if i != skip:
                out = out * v
        return out

    def vjp(g, saved, *vals):
        return tuple(_unbroadcast(g * _others(vals, i), np.shape(v)) for i, v in enumerate(vals))

    def jvp(t, saved, *vals):
        out = 0.0
        for i in range(len(vals)):
            out = out + t[i] * _others(vals, i)
        return out

    return Node("reduce", nodes, fwd, vjp, jvp, name="mul_n")


# graph traversal ------------------------------------------------------

def topological_order(root: Node) -> list[Node]:
    """Parents-before-children order; deterministic for a given graph."""
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
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def _param_values(params) -> np.ndarray:
    if isinstance(params, DesignVector):
        return params.values
    return np.atleast_1d(np.asarray(params, dtype=float))


def forward(root: Node, params) -> np.ndarray:
    """Evaluate the graph, caching every intermediate for :func:`backward`."""
    values = _param_values(params)
    for node in topological_order(root):
        if node.kind == "constant-leaf":
            continue
        if node.kind == "parameter-leaf":
            idx = node.index
            if np.any(np.asarray(idx) >= values.size) or np.any(np.asarray(idx) < 0):
                raise ConfigError(f"parameter leaf {node.name!r} is not bound (index {idx}, n={values.size})")
            node.value = np.asarray(values[idx], dtype=float)
            continue
        with np.errstate(all="ignore"):
            node.value, node.saved = node.fwd(*(p.value for p in node.parents))
        if not np.all(np.isfinite(node.value)):
            raise NumericError(f"non-finite value produced by node {node.name!r}")
    return root.value


def _n_params(order, params) -> int:
    if params is not None:
        return _param_values(params).size
    n = 0
    for node in order:
        if node.kind == "parameter-leaf":
            n = max(n, int(np.max(node.index)) + 1)
    return n


def backward(root: Node, cotangent, n_params: int | None = None) -> np.ndarray:
    """Vector-Jacobian product of the root field with ``cotangent``.

    Returns a length-``n`` real vector, ``n`` taken from ``n_params`` or the
    largest bound parameter index.
    """
    if root.value is None and root.kind != "constant-leaf":
        raise ContractError("backward called before forward (or after clear)")
    cot = np.asarray(cotangent, dtype=float)
    if cot.shape != np.shape(root.value):
        raise ContractError(f"cotangent shape {cot.shape} != root shape {np.shape(root.value)}")
    order = topological_order(root)
    n = n_params if n_params is not None else _n_params(order, None)
    grad = np.zeros(n)
    grads = {id(root): cot}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.kind == "parameter-leaf":
            if np.ndim(node.index) == 0:
                grad[node.index] += float(np.sum(g))
            else:
                np.add.at(grad, node.index, g)
            continue
        if node.kind == "constant-leaf":
            continue
        if node.value is None:
            raise ContractError(f"node {node.name!r} has no cached forward value")
        pg = node.vjp(g, node.saved, *(p.value for p in node.parents))
        for p, gp in zip(node.parents, pg):
            if gp is None or p.kind == "constant-leaf":
                continue
            key = id(p)
            grads[key] = gp if key not in grads else grads[key] + gp
    return grad


def jvp(root: Node, tangent) -> np.ndarray:
    """Forward-mode directional derivative of the root field along ``tangent``.

    Uses the activations cached by the last :func:`forward`. Only needed to
    materialize Jacobian columns for diagnostics; gradients use
    :func:`backward`.
    """
    if root.value is None and root.kind != "constant-leaf":
        raise ContractError("jvp called before forward (or after clear)")
    t = np.atleast_1d(np.asarray(tangent, dtype=float))
    tans = {}
    for node in topological_order(root):
        if node.kind == "constant-leaf":
            tans[id(node)] = np.zeros(())
        elif node.kind == "parameter-leaf":
            tans[id(node)] = np.asarray(t[node.index], dtype=float)
        else:
            tans[id(node)] = node.jvp([tans[id(p)] for p in node.parents], node.saved,
                                      *(p.value for p in node.parents))
    return np.broadcast_to(tans[id(root)], np.shape(root.value)).copy()


def clear(root: Node) -> None:
    """Release cached activations; the graph stays reusable."""
    for node in topological_order(root):
        if node.kind != "constant-leaf":
            node.value = None
        node.saved = None
