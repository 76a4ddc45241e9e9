"""Smooth, differentiable shape primitives built as tape graphs.

Every primitive is a composition of a step function ``sigma_k`` (see
:mod:`shapegrad.nonlin`) with a signed, parameterized distance-like
coordinate. Geometric parameters are plain floats (constants) or tape
nodes, typically ``DesignVector.node(name)``.

A :class:`ShapeExpr` remembers how it was built so the same shape can be
re-evaluated on another grid (supersampling, staggered sample points) or on
transformed coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tape as T
from .errors import ConfigError, ValidationError
from .grid import GridSpec
from .nonlin import Nonlinearity
from .tape import Node


@dataclass
class Coords:
    """Sample coordinates as tape nodes (rows/columns until transformed)."""

    x: Node
    y: Node

    @classmethod
    def of(cls, grid: GridSpec) -> "Coords":
        return cls(T.constant(grid.x, "x"), T.constant(grid.y, "y"))


@dataclass
class ShapeExpr:
    kind: str
    grid: GridSpec
    builder: Callable[[Coords], Node]
    nl: Nonlinearity | None = None
    node: Node = field(init=False)
    root: Node = field(init=False)

    def __post_init__(self):
        self.node = self.builder(Coords.of(self.grid))
        self.root = T.broadcast_to(self.node, self.grid.shape)

    def on(self, grid: GridSpec) -> "ShapeExpr":
        """The same shape sampled on another grid."""
        return ShapeExpr(self.kind, grid, self.builder, self.nl)

    def evaluate(self, params) -> np.ndarray:
        return T.forward(self.root, params)


def _value(v) -> float | None:
    """Float value of a constant parameter, ``None`` for graph nodes."""
    if isinstance(v, T.Node):
        return float(v.value) if v.kind == "constant-leaf" and np.ndim(v.value) == 0 else None
    return float(v)


# 1-D building blocks (operate on coordinate nodes) ----------------------

def step1d(r, r0, nl: Nonlinearity) -> Node:
    return T.apply(nl, T.sub(r, r0))


def rect1d(r, r0, r1, nl: Nonlinearity) -> Node:
    return T.mul(T.apply(nl, T.sub(r, r0)), T.apply(nl, T.sub(r1, r)))


def rectnd(coords: Sequence, lows: Sequence, highs: Sequence, nls) -> Node:
    """Product of :func:`rect1d` factors, one per axis."""
    if isinstance(nls, Nonlinearity):
        nls = [nls] * len(coords)
    if not (len(coords) == len(lows) == len(highs) == len(nls)):
        raise ConfigError("RectdD needs one (low, high, nl) per coordinate axis")
    return T.mul_n([rect1d(c, lo, hi, nl) for c, lo, hi, nl in zip(coords, lows, highs, nls)])


def fourier_radius(theta, r0, cos_coeffs, sin_coeffs) -> Node:
    """``R0 + sum_n c_n cos(n theta + pi) + s_n sin(n theta + pi)``."""
    terms = [T.as_node(r0)]
    for n, (c, s) in enumerate(zip(cos_coeffs, sin_coeffs), start=1):
        phase = T.affine(theta, float(n), np.pi)
        terms.append(T.mul(c, T.cos(phase)))
        terms.append(T.mul(s, T.sin(phase)))
    return T.add_n(terms)


# primitives ---------------------------------------------------------

def step1d_shape(grid: GridSpec, x0, nl: Nonlinearity, axis: str = "x") -> ShapeExpr:
    return ShapeExpr("step1d", grid, lambda c: step1d(c.x if axis == "x" else c.y, x0, nl), nl)


def rect1d_shape(grid: GridSpec, x0, x1, nl: Nonlinearity, axis: str = "x") -> ShapeExpr:
    return ShapeExpr("rect1d", grid, lambda c: rect1d(c.x if axis == "x" else c.y, x0, x1, nl), nl)


def rect2d(grid: GridSpec, x0, y0, x1, y1, nl: Nonlinearity, nl_y: Nonlinearity | None = None) -> ShapeExpr:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]``.

    ``nl_y`` allows a different step function along ``y``.
    """
    nl_y = nl if nl_y is None else nl_y
    return ShapeExpr("rect2d", grid, lambda c: T.mul(rect1d(c.x, x0, x1, nl), rect1d(c.y, y0, y1, nl_y)), nl)


def step2d(grid: GridSpec, normal, x0, y0, nl: Nonlinearity) -> ShapeExpr:
    """Half-plane ``n . (p - p0) >= 0`` smoothed by ``nl``; ``normal`` is a unit vector."""
    nx, ny = normal
    vx, vy = _value(nx), _value(ny)
    if vx is not None and vy is not None and abs(np.hypot(vx, vy) - 1.0) > 1e-9:
        raise ValidationError(f"Step2D normal must be unit length, got |n|={np.hypot(vx, vy)}")

    def build(c):
        return T.apply(nl, T.add(T.mul(nx, T.sub(c.x, x0)), T.mul(ny, T.sub(c.y, y0))))

    return ShapeExpr("step2d", grid, build, nl)


def check_convex_ccw(vertices) -> None:
    """Raise unless the vertex list is a strictly convex counter-clockwise polygon."""
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
        raise ValidationError("Poly2D needs at least 3 (x, y) vertices")
    d1 = np.roll(v, -1, axis=0) - v
    d2 = np.roll(v, -2, axis=0) - np.roll(v, -1, axis=0)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(cross <= 0):
        raise ValidationError("Poly2D vertices must be convex and in counter-clockwise order")


def poly2d(grid: GridSpec, vertices: Sequence, nl: Nonlinearity) -> ShapeExpr:
    """Convex polygon as the product of one half-plane step per edge."""
    verts = [(vx, vy) for vx, vy in vertices]
    values = [(_value(a), _value(b)) for a, b in verts]
    if all(a is not None and b is not None for a, b in values):
        check_convex_ccw(values)
    elif len(verts) < 3:
        raise ValidationError("Poly2D needs at least 3 vertices")

    def build(c):
        factors = []
        n = len(verts)
        for i in range(n):
            (xa, ya), (xb, yb) = verts[i], verts[(i + 1) % n]
            ex, ey = T.sub(xb, xa), T.sub(yb, ya)
            length = T.hypot(ex, ey)
            # inward unit normal of a CCW edge is (-ey, ex) / |e|
            dist = T.div(T.sub(T.mul(ex, T.sub(c.y, ya)), T.mul(ey, T.sub(c.x, xa))), length)
            factors.append(T.apply(nl, dist))
        return T.mul_n(factors)

    return ShapeExpr("poly2d", grid, build, nl)


def circ2d(grid: GridSpec, radius, x0, y0, nl: Nonlinearity) -> ShapeExpr:
    rv = _value(radius)
    if rv is not None and rv <= 0:
        raise ValidationError("Circ2D radius must be positive")
    return ShapeExpr("circ2d", grid, lambda c: T.apply(nl, T.sub(radius, T.hypot(T.sub(c.x, x0), T.sub(c.y, y0)))), nl)


def polar2d(grid: GridSpec, radius, delta, x0, y0, alpha: int, nl: Nonlinearity) -> ShapeExpr:
    """Star-convex ``R (1 + delta cos(alpha theta))``; ``alpha`` is a fixed integer."""
    rv, dv = _value(radius), _value(delta)
    if rv is not None and dv is not None and (rv <= 0 or rv * (1 - abs(dv)) <= 0):
        raise ValidationError("Polar2D radius R(1 + delta cos(alpha theta)) must stay positive")
    if int(alpha) != alpha:
        raise ValidationError("Polar2D alpha must be an integer")
    alpha = int(alpha)

    def build(c):
        dx, dy = T.sub(c.x, x0), T.sub(c.y, y0)
        theta = T.atan2(dy, dx)
        rb = T.mul(radius, T.affine(T.mul(delta, T.cos(T.affine(theta, float(alpha)))), 1.0, 1.0))
        return T.apply(nl, T.sub(rb, T.hypot(dx, dy)))

    return ShapeExpr("polar2d", grid, build, nl)


def general_cartesian(grid: GridSpec, boundary: Callable[[Node], Node], nl: Nonlinearity, sign: int = 1) -> ShapeExpr:
    """``sigma_k(sign * (f(x) - y))``; ``boundary`` maps the x-coordinate node to ``f``."""
    if sign not in (1, -1):
        raise ValidationError("sign must be +1 or -1")

    def build(c):
        return T.apply(nl, T.affine(T.sub(boundary(c.x), c.y), float(sign)))

    return ShapeExpr("general_cartesian", grid, build, nl)


def general_polar(grid: GridSpec, radius: Callable[[Node], Node], x0, y0, nl: Nonlinearity, sign: int = 1) -> ShapeExpr:
    """``sigma_k(sign * (R(theta) - r))`` around the center ``(x0, y0)``."""
    if sign not in (1, -1):
        raise ValidationError("sign must be +1 or -1")

    def build(c):
        dx, dy = T.sub(c.x, x0), T.sub(c.y, y0)
        return T.apply(nl, T.affine(T.sub(radius(T.atan2(dy, dx)), T.hypot(dx, dy)), float(sign)))

    return ShapeExpr("general_polar", grid, build, nl)


# parameter families ---------------------------------------------------

@dataclass
class FourierPolarParams:
    """Scatterer outline ``R0 + sum c_n cos(n theta + pi) + s_n sin(n theta + pi)``."""

    r0: float
    cos_coeffs: Sequence[float] = ()
    sin_coeffs: Sequence[float] = ()
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.cos_coeffs = [float(c) for c in self.cos_coeffs]
        self.sin_coeffs = [float(s) for s in self.sin_coeffs]
        order = max(len(self.cos_coeffs), len(self.sin_coeffs))
        self.cos_coeffs += [0.0] * (order - len(self.cos_coeffs))
        self.sin_coeffs += [0.0] * (order - len(self.sin_coeffs))

    @property
    def order(self) -> int:
        return len(self.cos_coeffs)

    def names(self, prefix: str = "") -> list[str]:
        return ([f"{prefix}r0"] + [f"{prefix}c{n}" for n in range(1, self.order + 1)]
                + [f"{prefix}s{n}" for n in range(1, self.order + 1)])

    def values(self) -> list[float]:
        return [self.r0, *self.cos_coeffs, *self.sin_coeffs]

    def radius(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, float(self.r0))
        for n, (c, s) in enumerate(zip(self.cos_coeffs, self.sin_coeffs), start=1):
            out = out + c * np.cos(n * theta + np.pi) + s * np.sin(n * theta + np.pi)
        return out

    def validate(self, samples: int = 720) -> None:
        theta = np.linspace(-np.pi, np.pi, samples, endpoint=False)
        rmin = self.radius(theta).min()
        if rmin <= 0:
            raise ValidationError(f"Fourier-polar radius must stay positive (min {rmin:.4g})")

    def polygon(self, n_vertices: int = 1000) -> np.ndarray:
        """Counter-clockwise outline sampled uniformly in angle."""
        theta = np.linspace(-np.pi, np.pi, n_vertices, endpoint=False)
        r = self.radius(theta)
        return np.column_stack([self.center[0] + r * np.cos(theta), self.center[1] + r * np.sin(theta)])


def _bind(name: str, value: float, dv):
    if dv is not None and name in dv.names:
        return dv.node(name)
    return value


def fourier_polar(grid: GridSpec, fp: FourierPolarParams, nl: Nonlinearity, dv=None, prefix: str = "") -> ShapeExpr:
    """Fourier-series scatterer; coefficients named ``{prefix}r0``, ``{prefix}c1``, ... in ``dv`` become design variables."""
    if dv is not None:
        current = [float(dv.values[dv.index(n)]) if n in dv.names else v
                   for n, v in zip(fp.names(prefix), fp.values())]
        k = fp.order
        FourierPolarParams(current[0], current[1:1 + k], current[1 + k:], fp.center).validate()
    else:
        fp.validate()
    k = fp.order
    names = fp.names(prefix)
    r0 = _bind(names[0], fp.r0, dv)
    cs = [_bind(nm, v, dv) for nm, v in zip(names[1:1 + k], fp.cos_coeffs)]
    ss = [_bind(nm, v, dv) for nm, v in zip(names[1 + k:], fp.sin_coeffs)]
    x0 = _bind(f"{prefix}x0", fp.center[0], dv)
    y0 = _bind(f"{prefix}y0", fp.center[1], dv)
    shape = general_polar(grid, lambda th: fourier_radius(th, r0, cs, ss), x0, y0, nl)
    shape.kind = "fourier_polar"
    return shape


@dataclass
class BoundaryFunctionParams:
    """Linear taper edge perturbed by an enveloped sine series.

    ``f(x) = w_in/2 + (w_out - w_in)/2 (x - x0)/L + env(x) sum_i v_i sin(i pi (x - x0)/L)``
    with ``env(x) = 0.1 + 0.45 (1 - cos(2 pi (x - x0)/L))``, valid on ``[x0, x0 + L]``.
    """

    w_in: float
    w_out: float
    length: float
    x0: float
    coeffs: Sequence[float] = ()

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.length <= 0:
            raise ValidationError("taper length must be positive")

    @property
    def n(self) -> int:
        return self.coeffs.size

    def envelope(self, x) -> np.ndarray:
        u = (np.asarray(x, float) - self.x0) / self.length
        return 0.1 + 0.45 * (1.0 - np.cos(2.0 * np.pi * u))

    def basis(self, x) -> np.ndarray:
        """``(len(x), n)`` matrix mapping coefficients to the boundary offset."""
        x = np.asarray(x, float).ravel()
        u = (x - self.x0) / self.length
        i = np.arange(1, self.n + 1)
        return self.envelope(x)[:, None] * np.sin(np.pi * np.outer(u, i))

    def baseline(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return self.w_in / 2 + (self.w_out - self.w_in) / 2 * (x - self.x0) / self.length

    def __call__(self, x, coeffs=None) -> np.ndarray:
        c = self.coeffs if coeffs is None else np.asarray(coeffs, float)
        x = np.asarray(x, float)
        return self.baseline(x) + (self.basis(x) @ c).reshape(x.shape)

    def node(self, x_node: Node, coeffs: Node) -> Node:
        """Graph for ``f`` on the coordinate row ``x_node`` (shape ``(1, nx)``)."""
        x = np.asarray(x_node.value if x_node.kind == "constant-leaf" else None)
        if x_node.kind != "constant-leaf":
            raise ConfigError("the taper boundary is evaluated on untransformed x coordinates")
        series = T.linear(coeffs, self.basis(x), shape=x.shape)
        return T.add(T.constant(self.baseline(x)), series)


def taper_boundary(grid: GridSpec, bp: BoundaryFunctionParams, coeffs: Node, nl: Nonlinearity, sign: int = 1) -> ShapeExpr:
    """One taper side: ``sigma_k(sign (f(x) - y))``; ``f`` is evaluated once per column."""
    shape = general_cartesian(grid, lambda xn: bp.node(xn, coeffs), nl, sign)
    shape.kind = "taper_boundary"
    return shape


# transforms -----------------------------------------------------------

def transform(shape: ShapeExpr, rotation=0.0, aspect=(1.0, 1.0), shift=(0.0, 0.0),
              center=(0.0, 0.0)) -> ShapeExpr:
    """Rotate by ``rotation`` (radians, CCW) and scale by ``aspect`` about ``center``, then shift.

    The shape is evaluated on inverse-mapped coordinates, so any of the
    transform parameters may be graph nodes.
    """
    sx, sy = aspect
    for s in (sx, sy):
        v = _value(s)
        if v is not None and v <= 0:
            raise ValidationError("aspect scale factors must be positive")
    cx, cy = center
    tx, ty = shift
    rv = _value(rotation)

    def mapped(c: Coords) -> Coords:
        px = T.sub(T.sub(c.x, cx), tx)
        py = T.sub(T.sub(c.y, cy), ty)
        if rv is None or rv != 0.0:
            ct, st = T.cos(T.as_node(rotation)), T.sin(T.as_node(rotation))
            px, py = T.add(T.mul(ct, px), T.mul(st, py)), T.sub(T.mul(ct, py), T.mul(st, px))
        return Coords(T.add(T.div(px, sx), cx), T.add(T.div(py, sy), cy))

    return ShapeExpr(shape.kind, shape.grid, lambda c: shape.builder(mapped(c)), shape.nl)


# dispatcher used by scene configs -----------------------------------------

PRIMITIVES = ("step1d", "rect1d", "rect2d", "step2d", "poly2d", "circ2d", "polar2d", "fourier_polar")


def build_primitive(kind: str, params: dict, nl: Nonlinearity, grid: GridSpec, nl_y: Nonlinearity | None = None,
                    dv=None, prefix: str = "") -> ShapeExpr:
    """Build a primitive from a parameter mapping (values are floats or nodes)."""
    p = dict(params)
    try:
        if kind == "step1d":
            return step1d_shape(grid, p["x0"], nl, p.get("axis", "x"))
        if kind == "rect1d":
            return rect1d_shape(grid, p["x0"], p["x1"], nl, p.get("axis", "x"))
        if kind == "rect2d":
            return rect2d(grid, p["x0"], p["y0"], p["x1"], p["y1"], nl, nl_y)
        if kind == "step2d":
            return step2d(grid, (p["nx"], p["ny"]), p["x0"], p["y0"], nl)
        if kind == "poly2d":
            return poly2d(grid, list(zip(p["xs"], p["ys"])), nl)
        if kind == "circ2d":
            return circ2d(grid, p["r"], p["x0"], p["y0"], nl)
        if kind == "polar2d":
            return polar2d(grid, p["r"], p["delta"], p["x0"], p["y0"], p.get("alpha", 4), nl)
        if kind == "fourier_polar":
            fp = FourierPolarParams(p["r0"], p.get("c", ()), p.get("s", ()), (p.get("x0", 0.0), p.get("y0", 0.0)))
            return fourier_polar(grid, fp, nl, dv=dv, prefix=prefix)
    except KeyError as exc:
        raise ConfigError(f"{kind}: missing parameter {exc.args[0]!r}") from None
    raise ConfigError(f"unknown shape kind {kind!r}")
