import numpy as np
import pytest

from shapegrad import shapes as S
from shapegrad import tape as T
from shapegrad.errors import ConfigError, ValidationError
from shapegrad.grid import GridSpec
from shapegrad.nonlin import Nonlinearity
from shapegrad.raster import ExactShape, exact_average


def lin(grid):
    return Nonlinearity("linear", 1.0 / grid.dx)


def test_rect1d_linear_is_exact_overlap(unit_grid):
    g = unit_grid
    v = S.rect1d_shape(g, -0.3123, 0.4711, lin(g)).evaluate([])
    # overlap of [x_i, x_i + dx] with [-0.3123, 0.4711], per cell width
    lo, hi = g.x_edges[:-1], g.x_edges[1:]
    ov = np.clip(np.minimum(hi, 0.4711) - np.maximum(lo, -0.3123), 0, None) / g.dx
    assert np.allclose(v[0], ov, atol=1e-14)
    assert np.allclose(v, v[0])


def test_rect2d_per_axis_nonlinearity(unit_grid):
    g = unit_grid
    s = S.rect2d(g, -0.5, -0.5, 0.5, 0.5, lin(g), nl_y=Nonlinearity("sigmoid", 40.0))
    v = s.evaluate([])
    assert v.shape == g.shape
    row = v[g.ny // 2]
    assert row.max() == pytest.approx(1.0, abs=1e-6)
    col = v[:, g.nx // 2]
    assert 0 < col.min() < 1e-6  # sigmoid tails never reach 0


def test_step2d_requires_unit_normal(unit_grid):
    with pytest.raises(ValidationError):
        S.step2d(unit_grid, (1.0, 1.0), 0, 0, lin(unit_grid))
    s = S.step2d(unit_grid, (np.sqrt(0.5), np.sqrt(0.5)), 0.0, 0.0, lin(unit_grid))
    v = s.evaluate([])
    assert v[-1, -1] == 1.0 and v[0, 0] == 0.0


def test_poly2d_rejects_clockwise_and_reflex(unit_grid):
    nl = lin(unit_grid)
    with pytest.raises(ValidationError):
        S.poly2d(unit_grid, [(0, 0), (0, 1), (1, 0)], nl)
    with pytest.raises(ValidationError):
        S.poly2d(unit_grid, [(0, 0), (1, 0), (0.2, 0.2), (0, 1)], nl)


def test_poly2d_area_converges_to_polygon_area():
    g = GridSpec.from_extent(-1, 1, -1, 1, 0.01)
    verts = [(-0.6, -0.4), (0.5, -0.5), (0.7, 0.3), (-0.2, 0.6)]
    v = S.poly2d(g, verts, Nonlinearity("linear", 100.0)).evaluate([])
    exact = exact_average(ExactShape.polygon(verts), g).values
    assert abs(v.sum() - exact.sum()) * g.dx * g.dy < 2e-4


def test_circle_center_and_outside(unit_grid):
    s = S.circ2d(unit_grid, 0.4, 0.0, 0.0, lin(unit_grid))
    v = s.evaluate([])
    assert v[unit_grid.ny // 2, unit_grid.nx // 2] == 1.0
    assert v[0, 0] == 0.0
    with pytest.raises(ValidationError):
        S.circ2d(unit_grid, -0.1, 0, 0, lin(unit_grid))


def test_polar2d_validation(unit_grid):
    nl = lin(unit_grid)
    with pytest.raises(ValidationError):
        S.polar2d(unit_grid, 0.5, 1.2, 0, 0, 4, nl)
    with pytest.raises(ValidationError):
        S.polar2d(unit_grid, 0.5, 0.2, 0, 0, 2.5, nl)


def test_polar2d_reduces_to_circle(unit_grid):
    nl = Nonlinearity("sin", 30.0)
    a = S.polar2d(unit_grid, 0.45, 0.0, 0.1, -0.1, 4, nl).evaluate([])
    b = S.circ2d(unit_grid, 0.45, 0.1, -0.1, nl).evaluate([])
    assert np.allclose(a, b, atol=1e-14)


def test_fourier_radius_and_polygon():
    fp = S.FourierPolarParams(0.5, [0.1], [0.05], (0.2, -0.1))
    # cos(theta + pi) = -cos(theta): radius at theta=0 is r0 - c1
    assert fp.radius(0.0) == pytest.approx(0.4)
    assert fp.radius(np.pi / 2) == pytest.approx(0.45)
    poly = fp.polygon(8)
    assert poly.shape == (8, 2)
    with pytest.raises(ValidationError):
        S.FourierPolarParams(0.1, [0.2]).validate()


def test_fourier_polar_binds_named_parameters(unit_grid):
    fp = S.FourierPolarParams(0.4, [0.02, 0.01], [0.0, 0.03])
    dv = T.DesignVector([0.4, 0.02], ["p_r0", "p_c1"])
    s = S.fourier_polar(unit_grid, fp, Nonlinearity("erf", 20.0), dv=dv, prefix="p_")
    v1 = s.evaluate(dv.values)
    v2 = s.evaluate([0.45, 0.02])
    assert v2.sum() > v1.sum()


def test_boundary_function_basis():
    bp = S.BoundaryFunctionParams(0.5, 10.5, 23.0, 1.0, np.zeros(3))
    x = np.array([1.0, 12.5, 24.0])
    assert np.allclose(bp(x), [0.25, 2.75, 5.25])
    assert np.allclose(bp.envelope(x), [0.1, 1.0, 0.1])
    B = bp.basis(x)
    assert B.shape == (3, 3)
    assert np.allclose(B[[0, 2]], 0.0, atol=1e-15)  # sines vanish at both ends
    with pytest.raises(ValidationError):
        S.BoundaryFunctionParams(1, 2, 0.0, 0)


def test_transform_rotation_quarter_turn(unit_grid):
    nl = lin(unit_grid)
    r = S.rect2d(unit_grid, -0.5, -0.1, 0.5, 0.1, nl)
    rot = S.transform(r, rotation=np.pi / 2).evaluate([])
    tall = S.rect2d(unit_grid, -0.1, -0.5, 0.1, 0.5, nl).evaluate([])
    assert np.allclose(rot, tall, atol=1e-12)
    with pytest.raises(ValidationError):
        S.transform(r, aspect=(0.0, 1.0))


def test_transform_shift_and_aspect(unit_grid):
    nl = lin(unit_grid)
    c = S.circ2d(unit_grid, 0.2, 0.0, 0.0, nl)
    moved = S.transform(c, shift=(0.3, 0.0)).evaluate([])
    assert np.allclose(moved, S.circ2d(unit_grid, 0.2, 0.3, 0.0, nl).evaluate([]), atol=1e-12)
    wide = S.transform(c, aspect=(2.0, 1.0)).evaluate([])
    assert wide.sum() == pytest.approx(2 * c.evaluate([]).sum(), rel=0.02)


def test_shape_reevaluates_on_other_grids(unit_grid):
    s = S.circ2d(unit_grid, 0.5, 0, 0, lin(unit_grid))
    fine = s.on(unit_grid.refined(2)).evaluate([])
    assert fine.shape == (2 * unit_grid.ny, 2 * unit_grid.nx)


def test_build_primitive_errors(unit_grid):
    nl = lin(unit_grid)
    with pytest.raises(ConfigError, match="hexagon"):
        S.build_primitive("hexagon", {}, nl, unit_grid)
    with pytest.raises(ConfigError, match="x1"):
        S.build_primitive("rect2d", {"x0": 0, "y0": 0, "y1": 1}, nl, unit_grid)


@pytest.mark.parametrize("kind", S.PRIMITIVES)
def test_every_primitive_stays_in_unit_interval(kind, unit_grid):
    params = {"step1d": {"x0": 0.1}, "rect1d": {"x0": -0.2, "x1": 0.3},
              "rect2d": {"x0": -0.2, "y0": -0.3, "x1": 0.3, "y1": 0.2},
              "step2d": {"nx": 0.6, "ny": 0.8, "x0": 0, "y0": 0},
              "poly2d": {"xs": [-0.5, 0.5, 0.0], "ys": [-0.4, -0.4, 0.5]},
              "circ2d": {"r": 0.4, "x0": 0, "y0": 0},
              "polar2d": {"r": 0.4, "delta": 0.2, "x0": 0, "y0": 0, "alpha": 5},
              "fourier_polar": {"r0": 0.4, "c": [0.02], "s": [0.01]}}[kind]
    for nlk in ("sigmoid", "quadratic"):
        v = S.build_primitive(kind, params, Nonlinearity(nlk, 20.0), unit_grid).evaluate([])
        assert v.min() >= 0 and v.max() <= 1
