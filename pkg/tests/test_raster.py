import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from shapegrad import raster as R
from shapegrad import shapes as S
from shapegrad import tape as T
from shapegrad.errors import ContractError, ValidationError
from shapegrad.grid import GridSpec, MaterialGrid
from shapegrad.nonlin import Nonlinearity


def rect_overlap(grid, x0, y0, x1, y1):
    ox = np.clip(np.minimum(grid.x_edges[1:], x1) - np.maximum(grid.x_edges[:-1], x0), 0, None) / grid.dx
    oy = np.clip(np.minimum(grid.y_edges[1:], y1) - np.maximum(grid.y_edges[:-1], y0), 0, None) / grid.dy
    return oy[:, None] * ox[None, :]


@given(st.floats(-0.9, 0.0), st.floats(-0.9, 0.0), st.floats(0.01, 0.9), st.floats(0.01, 0.9))
@settings(max_examples=50, deadline=None)
def test_polygon_oracle_on_rectangles(x0, y0, w, h):
    g = GridSpec.from_extent(-1, 1, -1, 1, 0.1)
    got = R.exact_average(R.ExactShape.rectangle(x0, y0, x0 + w, y0 + h), g).values
    assert np.allclose(got, rect_overlap(g, x0, y0, x0 + w, y0 + h), atol=1e-13)


def test_polygon_oracle_triangle_total_area():
    g = GridSpec.from_extent(0, 1, 0, 1, 0.07)
    tri = np.array([[0.05, 0.1], [0.9, 0.2], [0.3, 0.85]])
    got = R.exact_average(R.ExactShape.polygon(tri), g).values
    assert got.sum() * g.dx * g.dy == pytest.approx(abs(R.polygon_signed_area(tri)), rel=1e-13)
    # a cell entirely inside, one entirely outside
    assert got[5, 5] == pytest.approx(1.0)
    assert got[-1, -1] == 0.0


def test_polygon_orientation_does_not_matter():
    g = GridSpec.from_extent(0, 1, 0, 1, 0.1)
    tri = np.array([[0.05, 0.1], [0.9, 0.2], [0.3, 0.85]])
    a = R.exact_average(R.ExactShape.polygon(tri), g).values
    b = R.exact_average(R.ExactShape.polygon(tri[::-1]), g).values
    assert np.allclose(a, b, atol=1e-15)


def test_non_simple_polygon_rejected():
    bowtie = [[0, 0], [1, 1], [1, 0], [0, 1]]
    with pytest.raises(ValidationError):
        R.ExactShape.polygon(bowtie)


def test_circle_oracle_total_area_and_polygon_agreement():
    g = GridSpec.from_extent(-1, 1, -1, 1, 0.08)
    c = R.exact_average(R.ExactShape.circle(0.013, -0.21, 0.53), g).values
    assert c.sum() * g.dx * g.dy == pytest.approx(np.pi * 0.53 ** 2, rel=1e-12)
    th = np.linspace(0, 2 * np.pi, 4000, endpoint=False)
    poly = np.column_stack([0.013 + 0.53 * np.cos(th), -0.21 + 0.53 * np.sin(th)])
    p = R.exact_average(R.ExactShape.polygon(poly), g).values
    assert np.abs(c - p).max() < 5e-6


def test_circle_clipped_by_domain():
    g = GridSpec.from_extent(0, 1, 0, 1, 0.1)
    c = R.exact_average(R.ExactShape.circle(0.0, 0.0, 0.5), g).values
    assert c.sum() * 0.01 == pytest.approx(np.pi * 0.25 / 4, rel=1e-12)


def test_exact_scene_overlap_detected():
    g = GridSpec.from_extent(0, 1, 0, 1, 0.1)
    sc = R.ExactScene(1.0).add(R.ExactShape.rectangle(0.1, 0.1, 0.5, 0.5), 4.0)
    sc.add(R.ExactShape.rectangle(0.4, 0.4, 0.8, 0.8), 4.0)
    with pytest.raises(ValidationError):
        R.exact_average(sc, g)


def test_exact_scene_values():
    g = GridSpec.from_extent(0, 1, 0, 1, 0.1)
    sc = R.ExactScene(1.0).add(R.ExactShape.rectangle(0.0, 0.0, 0.5, 1.0), 4.0)
    m = R.exact_average(sc, g)
    assert np.allclose(m.values[:, :5], 4.0) and np.allclose(m.values[:, 5:], 1.0)
    assert m.bounds == (1.0, 4.0)


def test_supersampling_converges_to_exact():
    g = GridSpec.from_extent(-1, 1, -1, 1, 0.08)
    truth = R.exact_average(R.ExactShape.circle(0.0, -0.5, 0.5), g)
    s = S.circ2d(g, 0.5, 0.0, -0.5, Nonlinearity("linear", 1e6))
    errs = [R.mse_report(R.rasterize_supersampled(s, [], q), truth)[0] for q in (1, 4, 16)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-5


def test_block_mean():
    a = np.arange(16.0).reshape(4, 4)
    assert np.allclose(R.block_mean(a, 2), [[2.5, 4.5], [10.5, 12.5]])


def test_fd_jacobian_of_rect_edge_is_inverse_cell_width():
    g = GridSpec.from_extent(-1, 1, -1, 1, 0.1)
    dv = T.DesignVector([0.33], ["x1"])
    J = R.fd_material_jacobian(lambda v: R.exact_average(R.ExactShape.rectangle(-0.5, -0.5, v[0], 0.5), g).values,
                               dv, h=1e-7)
    col = J.toarray().reshape(g.shape)
    i = int((0.33 - g.x0) / g.dx)
    assert np.allclose(col[5:15, i], 1 / g.dx, rtol=1e-5)
    assert np.count_nonzero(np.abs(col) > 1e-6) == 10


def test_ad_jacobian_matches_fd_of_same_raster(unit_grid):
    dv = T.DesignVector([0.4, 0.05], ["r", "x0"])
    nl = Nonlinearity("erf", 30.0)
    s = S.circ2d(unit_grid, dv.node("r"), dv.node("x0"), 0.0, nl)
    ad = R.ad_material_jacobian(s, dv).toarray()
    fd = R.fd_material_jacobian(R.oneshot_rasterizer(s), dv, h=1e-7).toarray()
    assert np.allclose(ad, fd, atol=1e-5 * np.abs(ad).max())


def test_jacobian_fit_trivial_cases(rng):
    a = sp.random(50, 3, density=0.2, random_state=1, format="csc")
    assert R.jacobian_fit(a, a) == pytest.approx((1.0, 0.0))
    slope, rmse = R.jacobian_fit(2.5 * a, a)
    assert slope == pytest.approx(2.5) and rmse == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValidationError):
        R.jacobian_fit(sp.csc_matrix((5, 1)), sp.csc_matrix((5, 1)))
    with pytest.raises(ContractError):
        R.jacobian_fit(a, a[:10])


def test_mse_report(unit_grid):
    a = MaterialGrid(np.full(unit_grid.shape, 0.3), unit_grid)
    assert R.mse_report(a, a)[0] == 0.0
    b = MaterialGrid(np.full(unit_grid.shape, 0.5), unit_grid)
    mse, err = R.mse_report(b, a)
    assert mse == pytest.approx(0.04)
    assert np.allclose(err.values, 0.2)
    with pytest.raises(ContractError):
        R.mse_report(a, MaterialGrid(0.0, GridSpec.from_extent(0, 1, 0, 1, 0.5)))


def test_sub_cell_rectangle_is_not_exact():
    # both edges inside one cell: the product of two linear steps overestimates the overlap
    g = GridSpec.from_extent(0.0, 1.0, 0.0, 1.0, 0.1)
    nl = Nonlinearity("linear", 10.0)
    got = R.rasterize_oneshot(S.rect2d(g, 0.12, 0.2, 0.16, 0.8, nl), []).values
    want = R.exact_average(R.ExactShape.rectangle(0.12, 0.2, 0.16, 0.8), g).values
    assert np.abs(got - want).max() > 0.05
