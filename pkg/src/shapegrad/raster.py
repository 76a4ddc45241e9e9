"""Rasterization of shape fields and the exact area-overlap oracle.

``exact_average`` computes, per grid cell, the exact fraction of the cell
covered by a polygon (via a clipped boundary integral that is exact for
straight edges) or a circle (closed-form circular-segment areas).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import tape as T
from .errors import ContractError, ValidationError
from .grid import GridSpec, MaterialGrid
from .shapes import ShapeExpr

SPARSE_DROP = 1e-12


def _to_material(values, grid, materials, bounds=None) -> MaterialGrid:
    if materials is not None:
        eb, es = materials
        values = eb + (es - eb) * np.asarray(values, float)
        bounds = (eb, es)
    return MaterialGrid(values, grid, bounds if bounds is not None else (0.0, 1.0))


def _values(shape: ShapeExpr, params, grid: GridSpec) -> np.ndarray:
    s = shape if grid is None or grid is shape.grid or (grid.same_as(shape.grid)) else shape.on(grid)
    return np.array(s.evaluate(params), dtype=float)


def rasterize_oneshot(shape: ShapeExpr, params, grid: GridSpec | None = None, materials=None,
                      bounds=None) -> MaterialGrid:
    """Shape field sampled once per cell (at the cell's sample point)."""
    grid = shape.grid if grid is None else grid
    return _to_material(_values(shape, params, grid), grid, materials, bounds)


def block_mean(a: np.ndarray, q: int) -> np.ndarray:
    ny, nx = a.shape[0] // q, a.shape[1] // q
    return a.reshape(ny, q, nx, q).mean(axis=(1, 3))


def rasterize_supersampled(shape: ShapeExpr, params, q: int, grid: GridSpec | None = None,
                           materials=None, bounds=None) -> MaterialGrid:
    """Mean of the shape field over a uniform ``q x q`` subgrid of every cell."""
    if q < 1:
        raise ValidationError("q must be >= 1")
    grid = shape.grid if grid is None else grid
    if q == 1:
        return rasterize_oneshot(shape, params, grid, materials, bounds)
    fine = grid.refined(q)
    fine = GridSpec(fine.x0 + grid.offset[0] * grid.dx, fine.y0 + grid.offset[1] * grid.dy,
                    fine.dx, fine.dy, fine.nx, fine.ny)
    return _to_material(block_mean(_values(shape, params, fine), q), grid, materials, bounds)


# exact oracle -------------------------------------------------------------

@dataclass
class ExactShape:
    """Ground-truth geometry: a simple polygon or a circle."""

    kind: str
    vertices: np.ndarray | None = None
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0

    def __post_init__(self):
        if self.kind == "polygon":
            v = np.asarray(self.vertices, dtype=float)
            if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
                raise ValidationError("polygon needs at least 3 (x, y) vertices")
            if not np.all(np.isfinite(v)):
                raise ValidationError("polygon vertices must be finite")
            if polygon_signed_area(v) < 0:
                v = v[::-1]
            self.vertices = v
        elif self.kind == "circle":
            if not self.radius > 0:
                raise ValidationError("circle radius must be positive")
        else:
            raise ValidationError(f"unknown exact shape kind {self.kind!r}")

    @classmethod
    def polygon(cls, vertices, check: bool = True) -> "ExactShape":
        shape = cls("polygon", vertices)
        if check:
            check_simple(shape.vertices)
        return shape

    @classmethod
    def circle(cls, x0: float, y0: float, r: float) -> "ExactShape":
        return cls("circle", center=(float(x0), float(y0)), radius=float(r))

    @classmethod
    def rectangle(cls, x0, y0, x1, y1) -> "ExactShape":
        return cls.polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


@dataclass
class ExactScene:
    """Non-overlapping exact shapes painted over a background value."""

    background: float
    parts: list = field(default_factory=list)

    def add(self, shape: ExactShape, value: float) -> "ExactScene":
        self.parts.append((shape, float(value)))
        return self


def polygon_signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def check_simple(v: np.ndarray) -> None:
    """Raise if any two non-adjacent edges touch or cross."""
    n = len(v)
    a, b = v, np.roll(v, -1, axis=0)
    if np.any(np.all(a == b, axis=1)):
        raise ValidationError("polygon has repeated consecutive vertices")
    if n < 4:
        return

    def orient(p, q, r):
        return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                       - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    def on_seg(p, q, r):
        # r on segment pq, given collinear
        return ((np.minimum(p[..., 0], q[..., 0]) <= r[..., 0]) & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]))
                & (np.minimum(p[..., 1], q[..., 1]) <= r[..., 1]) & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1])))

    # chunk over i to bound memory for large vertex counts
    idx = np.arange(n)
    for start in range(0, n, 256):
        i = idx[start:start + 256, None]
        j = idx[None, :]
        mask = (j > i + 1) & ~((i == 0) & (j == n - 1))
        if not mask.any():
            continue
        ii, jj = np.broadcast_arrays(i, j)
        ii, jj = ii[mask], jj[mask]
        p1, q1, p2, q2 = a[ii], b[ii], a[jj], b[jj]
        o1, o2 = orient(p1, q1, p2), orient(p1, q1, q2)
        o3, o4 = orient(p2, q2, p1), orient(p2, q2, q1)
        hit = (o1 * o2 < 0) & (o3 * o4 < 0)
        hit |= (o1 == 0) & on_seg(p1, q1, p2)
        hit |= (o2 == 0) & on_seg(p1, q1, q2)
        hit |= (o3 == 0) & on_seg(p2, q2, p1)
        hit |= (o4 == 0) & on_seg(p2, q2, q1)
        if hit.any():
            k = int(np.flatnonzero(hit)[0])
            raise ValidationError(f"polygon is self-intersecting (edges {ii[k]} and {jj[k]})")


def polygon_cell_area(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Exact area of a CCW simple polygon inside every cell, ``(ny, nx)``.

    Uses ``area = sum_e sign(e) int (clamp(x_e(y), xl, xh) - xl) dy`` over each
    cell's ``y`` span; the integrand is piecewise linear in ``y`` so the
    trapezoid rule over its breakpoints is exact.
    """
    xe, ye = grid.x_edges, grid.y_edges
    xl, xh = xe[:-1], xe[1:]
    out = np.zeros(grid.shape)
    a, b = v, np.roll(v, -1, axis=0)
    for (xa, ya), (xb, yb) in zip(a, b):
        if ya == yb:
            continue
        sign = 1.0 if yb > ya else -1.0
        y_lo, y_hi = min(ya, yb), max(ya, yb)
        j0 = max(int(np.searchsorted(ye, y_lo, side="right")) - 1, 0)
        j1 = min(int(np.searchsorted(ye, y_hi, side="left")), grid.ny)
        if j1 <= j0:
            continue
        rows = np.arange(j0, j1)
        y0 = np.maximum(ye[rows], y_lo)[:, None]
        y1 = np.minimum(ye[rows + 1], y_hi)[:, None]
        keep = (y1 > y0).ravel()
        if not keep.any():
            continue
        rows, y0, y1 = rows[keep], y0[keep], y1[keep]
        slope = (xb - xa) / (yb - ya)

        def xat(y):
            return xa + slope * (y - ya)

        if slope != 0.0:
            b1 = np.clip(ya + (xl[None, :] - xa) / slope, y0, y1)
            b2 = np.clip(ya + (xh[None, :] - xa) / slope, y0, y1)
            lo_b, hi_b = np.minimum(b1, b2), np.maximum(b1, b2)
        else:
            lo_b = hi_b = np.broadcast_to(y0, (len(rows), grid.nx))
        pts = (np.broadcast_to(y0, lo_b.shape), lo_b, hi_b, np.broadcast_to(y1, lo_b.shape))
        g = [np.clip(xat(p), xl[None, :], xh[None, :]) - xl[None, :] for p in pts]
        area = sum(0.5 * (g[k] + g[k + 1]) * (pts[k + 1] - pts[k]) for k in range(3))
        np.add.at(out, rows, sign * area)
    return out


def _segment_primitive(u, r):
    u = np.clip(u, -r, r)
    return 0.5 * (u * np.sqrt(np.maximum(r * r - u * u, 0.0)) + r * r * np.arcsin(u / r))


def _half_area(y, r):
    """Area of the disk (centered at 0) with ``Y >= y``."""
    yc = np.clip(y, -r, r)
    return r * r * np.arccos(yc / r) - yc * np.sqrt(np.maximum(r * r - yc * yc, 0.0))


def _quadrant_area(x, y, r):
    """Area of the disk with ``X >= x`` and ``Y >= y``."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    out = np.empty(x.shape)
    ny_ = y < 0
    # reflect y < 0:  C(x, y) = H(x) - C(x, -y)
    yy = np.abs(y)
    nx_ = x < 0
    xx = np.abs(x)
    xm = np.sqrt(np.maximum(r * r - yy * yy, 0.0))
    inside = xx < xm
    base = np.where(inside, _segment_primitive(xm, r) - _segment_primitive(xx, r) - yy * (xm - xx), 0.0)
    # C(x, |y|) with x possibly negative: H(|y|) - C(|x|, |y|)
    c_pos_y = np.where(nx_, _half_area(yy, r) - base, base)
    out = np.where(ny_, _half_area(x, r) - c_pos_y, c_pos_y)
    return out


def circle_cell_area(center, r: float, grid: GridSpec) -> np.ndarray:
    """Exact disk area inside every cell via inclusion-exclusion of quadrant areas."""
    x = (grid.x_edges - center[0])[None, :]
    y = (grid.y_edges - center[1])[:, None]
    c = _quadrant_area(x, y, r)
    return c[:-1, :-1] - c[:-1, 1:] - c[1:, :-1] + c[1:, 1:]


def coverage(shape: ExactShape, grid: GridSpec) -> np.ndarray:
    """Covered fraction of every cell, in [0, 1]."""
    if shape.kind == "polygon":
        area = polygon_cell_area(shape.vertices, grid)
    else:
        area = circle_cell_area(shape.center, shape.radius, grid)
    return np.clip(area / (grid.dx * grid.dy), 0.0, 1.0)


def exact_average(shape, grid: GridSpec, materials=(0.0, 1.0)) -> MaterialGrid:
    """Exact per-cell overlap fraction, scaled to ``materials = (eps_b, eps_s)``.

    ``shape`` may also be an :class:`ExactScene`, whose values are used directly.
    """
    if isinstance(shape, ExactScene):
        vals = np.full(grid.shape, float(shape.background))
        total = np.zeros(grid.shape)
        for part, value in shape.parts:
            a = coverage(part, grid)
            total += a
            vals += (value - shape.background) * a
        if total.max() > 1 + 1e-9:
            raise ValidationError("exact scene parts overlap")
        levels = [shape.background] + [v for _, v in shape.parts]
        return MaterialGrid(vals, grid, (min(levels), max(levels)))
    return _to_material(coverage(shape, grid), grid, materials)


# Jacobians ----------------------------------------------------------------

def _sparse_column(d: np.ndarray, drop: float):
    idx = np.flatnonzero(np.abs(d) >= drop)
    return idx, d[idx]


def fd_material_jacobian(rasterize: Callable[[np.ndarray], np.ndarray], params: T.DesignVector,
                         h: float = 1e-6, drop: float = SPARSE_DROP) -> sp.csc_matrix:
    """Forward-difference material Jacobian (``m x n``) from ``n + 1`` rasterizations.

    ``rasterize`` maps a parameter vector to a material array.
    """
    if not h > 0:
        raise ValidationError("finite-difference step must be positive")
    v = np.asarray(params.values, float)
    base = np.asarray(rasterize(v), float).ravel()
    rows, cols, data = [], [], []
    for i in range(v.size):
        vp = v.copy()
        vp[i] += h
        d = (np.asarray(rasterize(vp), float).ravel() - base) / h
        idx, val = _sparse_column(d, drop)
        rows.append(idx)
        cols.append(np.full(idx.size, i))
        data.append(val)
    return sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(base.size, v.size))


def oneshot_rasterizer(shape: ShapeExpr) -> Callable[[np.ndarray], np.ndarray]:
    return lambda v: shape.evaluate(v)


def exact_rasterizer(build: Callable[[np.ndarray], object], grid: GridSpec, materials=(0.0, 1.0)):
    """``build(v)`` returns an :class:`ExactShape` or :class:`ExactScene`."""
    return lambda v: exact_average(build(v), grid, materials).values


def ad_material_jacobian(shape: ShapeExpr, params, columns: Sequence[int] | None = None,
                         drop: float = SPARSE_DROP) -> sp.csc_matrix:
    """Columns of the shape Jacobian from forward-mode tangents of the tape graph."""
    v = np.asarray(getattr(params, "values", params), float)
    base = shape.evaluate(v)
    cols = range(v.size) if columns is None else columns
    rows_, cols_, data = [], [], []
    for out_col, i in enumerate(cols):
        t = np.zeros(v.size)
        t[i] = 1.0
        idx, val = _sparse_column(T.jvp(shape.root, t).ravel(), drop)
        rows_.append(idx)
        cols_.append(np.full(idx.size, out_col))
        data.append(val)
    return sp.csc_matrix((np.concatenate(data), (np.concatenate(rows_), np.concatenate(cols_))),
                         shape=(base.size, len(cols)))


def jacobian_fit(ad_jac, fd_jac) -> tuple[float, float]:
    """Least-squares slope of ``ad`` against ``fd`` through the origin, and the residual RMSE.

    Both are taken over the union of the two sparsity patterns.
    """
    a = sp.csr_matrix(ad_jac)
    f = sp.csr_matrix(fd_jac)
    if a.shape != f.shape:
        raise ContractError(f"Jacobian shapes differ: {a.shape} vs {f.shape}")
    pattern = (abs(a) + abs(f)).tocoo()
    if pattern.nnz == 0:
        raise ValidationError("both Jacobians are empty")
    r, c = pattern.row, pattern.col
    av = np.asarray(a[r, c]).ravel()
    fv = np.asarray(f[r, c]).ravel()
    denom = float(fv @ fv)
    if denom == 0:
        raise ValidationError("finite-difference Jacobian is identically zero")
    slope = float(av @ fv) / denom
    rmse = float(np.sqrt(np.mean((av - slope * fv) ** 2)))
    return slope, rmse


def mse_report(approx: MaterialGrid, truth: MaterialGrid) -> tuple[float, MaterialGrid]:
    """Mean squared per-cell error and the signed error map ``approx - truth``."""
    approx.check_same_grid(truth)
    err = approx.values - truth.values
    span = max(float(np.abs(err).max()), 1e-300)
    return float(np.mean(err ** 2)), MaterialGrid(err, approx.grid, (-span, span))
