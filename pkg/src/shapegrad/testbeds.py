"""Built-in optimization scenes: a waveguide taper and a blazed grating coupler.

Each testbed owns a grid, a differentiable material graph (one-shot
rasterization), an exact-overlap rasterizer of the same geometry, a source
and a normalized objective. :meth:`Testbed.evaluate` runs one forward and one
adjoint solve and assembles the gradient along one of three paths:

``prop1-ad``      fields on the one-shot grid, gradient by tape backward
``prop2-ad``      fields on the exact grid, gradient by tape backward
``fd-baseline``   fields on the exact grid, gradient from a finite-difference
                  material Jacobian (``n + 1`` exact rasterizations)
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import adjoint as ADJ
from . import fdfd as F
from . import tape as T
from .boolean import scale_to_materials, subtract_nodes, union, union_nodes
from .errors import ConfigError
from .grid import GridSpec
from .nonlin import Nonlinearity
from .raster import ExactScene, ExactShape, exact_average, fd_material_jacobian
from .shapes import BoundaryFunctionParams, ShapeExpr, rect1d, rect1d_shape, rect2d, step1d

MODES = ("prop1-ad", "prop2-ad", "fd-baseline")


@dataclass
class Evaluation:
    f: float
    grad: np.ndarray | None
    eps: np.ndarray
    timings: dict
    flags: dict = field(default_factory=dict)


class Testbed:
    grid: GridSpec
    omega: float
    pml: F.PML
    params: T.DesignVector
    eps_b: float
    eps_s: float
    fd_step: float = 1e-6

    # subclasses provide: ad_shape (ShapeExpr of eps), exact_eps(v), source, objective

    def oneshot_eps(self, v) -> np.ndarray:
        return self.ad_shape.evaluate(np.asarray(v, float))

    def simulate(self, eps: np.ndarray):
        prob = F.HelmholtzProblem(eps, self.grid, self.omega, self.source, self.pml)
        sol = F.solve_forward(prob)
        return prob, sol

    def efficiency(self, v, exact: bool = False) -> float:
        eps = self.exact_eps(v) if exact else self.oneshot_eps(v)
        _, sol = self.simulate(eps)
        return F.evaluate_objective(sol, self.objective)[0]

    def evaluate(self, v, mode: str = "prop1-ad", want_grad: bool = True) -> Evaluation:
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
        v = np.asarray(v, dtype=float)
        t0 = time.perf_counter()
        eps = self.oneshot_eps(v) if mode == "prop1-ad" else self.exact_eps(v)
        t1 = time.perf_counter()
        prob, sol = self.simulate(eps)
        f, dfdE = F.evaluate_objective(sol, self.objective)
        grad = None
        t2 = t3 = time.perf_counter()
        if want_grad:
            adj = F.solve_adjoint(prob, dfdE)
            e_prod = F.field_product(sol, adj)
            t2 = time.perf_counter()
            grad = self.assemble_gradient(v, e_prod, mode)
            t3 = time.perf_counter()
        flags = {"solve_grid": "oneshot" if mode == "prop1-ad" else "exact",
                 "gradient_path": "fd" if mode == "fd-baseline" else "ad"}
        return Evaluation(f, grad, eps, {"t_raster": t1 - t0, "t_solve": t2 - t1, "t_grad": t3 - t2}, flags)

    def assemble_gradient(self, v, e_prod, mode: str) -> np.ndarray:
        if mode == "fd-baseline":
            dv = self.params.with_values(v) if _inside(self.params, v) else T.DesignVector(v, self.params.names)
            jac = fd_material_jacobian(self.exact_eps, dv, self.fd_step)
            return ADJ.gradient_fd(ADJ.GradientRequest(None, v, e_prod, self.omega), jac)
        if mode == "prop2-ad":
            # the tape graph is used only for the gradient here
            self.ad_shape.evaluate(v)
        return ADJ.gradient_ad(ADJ.GradientRequest(self.ad_shape, v, e_prod, self.omega))


def _inside(dv: T.DesignVector, v) -> bool:
    return bool(np.all(v >= dv.lower) and np.all(v <= dv.upper))


# taper ---------------------------------------------------------------------

@dataclass
class TaperConfig:
    w_in: float = 0.5
    w_out: float = 10.5
    length: float = 23.0
    x0: float = 1.0
    wavelength: float = 1.31
    n_core: float = 3.167
    n_clad: float = 1.444
    dx: float = 0.04
    x_max: float = 25.0
    y_half: float = 6.4
    n_coeffs: int = 100
    coeff_bound: float = 2.0
    pml_cells: int = 10
    boundary_vertices: int | None = None


class TaperTestbed(Testbed):
    """Symmetric taper from a narrow input guide to a wide output guide.

    Design variables are the sine coefficients of the edge function; the
    objective is the power in the output guide's fundamental mode relative to
    the power launched in the input guide.
    """

    def __init__(self, cfg: TaperConfig | None = None, coeffs=None):
        cfg = cfg or TaperConfig()
        self.cfg = cfg
        self.grid = GridSpec.from_extent(0.0, cfg.x_max, -cfg.y_half, cfg.y_half, cfg.dx)
        self.omega = 2 * np.pi / cfg.wavelength
        self.pml = F.PML(cfg.pml_cells)
        self.eps_b, self.eps_s = cfg.n_clad ** 2, cfg.n_core ** 2
        n = cfg.n_coeffs
        values = np.zeros(n) if coeffs is None else np.asarray(coeffs, float)
        self.params = T.DesignVector(values, [f"v{i}" for i in range(1, n + 1)],
                                     np.full(n, -cfg.coeff_bound), np.full(n, cfg.coeff_bound))
        self.boundary = BoundaryFunctionParams(cfg.w_in, cfg.w_out, cfg.length, cfg.x0, np.zeros(n))
        self.nl = Nonlinearity("linear", 1.0 / cfg.dx)
        self.ad_shape = self._build_graph()

        self.source_column = self.pml.ncells + 2
        self.monitor_column = self.grid.nx - self.pml.ncells - 6
        self.source = F.mode_source(self.oneshot_eps(values), self.grid, self.omega, self.source_column)
        self.objective = F.mode_objective(self._guide_eps(cfg.w_out), self.grid, self.omega,
                                          self.monitor_column, pml=self.pml)
        self.objective = self.objective.with_reference(self._reference_power())

    def _build_graph(self) -> ShapeExpr:
        cfg, g, nl = self.cfg, self.grid, self.nl
        far = cfg.x_max + 10.0
        coeffs = T.param(list(range(self.params.n)), name="v")
        inp = rect2d(g, -10.0, -cfg.w_in / 2, cfg.x0, cfg.w_in / 2, nl)
        out = rect2d(g, cfg.x0 + cfg.length, -cfg.w_out / 2, far, cfg.w_out / 2, nl)
        body_x = rect1d_shape(g, cfg.x0, cfg.x0 + cfg.length, nl)

        def body(c):
            fx = self.boundary.node(c.x, coeffs)
            return T.mul_n([body_x.builder(c), T.apply(nl, T.sub(fx, c.y)), T.apply(nl, T.add(fx, c.y))])

        taper = ShapeExpr("taper_body", g, body, nl)
        return scale_to_materials(union([inp, out, taper]), self.eps_b, self.eps_s)

    def _guide_eps(self, width: float) -> np.ndarray:
        eps = np.full(self.grid.shape, self.eps_b)
        yc = self.grid.yc
        frac = np.clip((width / 2 - np.abs(yc)) / self.grid.dy + 0.5, 0, 1)
        return eps + (self.eps_s - self.eps_b) * frac[:, None]

    def _reference_power(self) -> float:
        ref = self._guide_eps(self.cfg.w_in)
        mon = F.mode_objective(ref, self.grid, self.omega, self.monitor_column, pml=self.pml)
        _, sol = self.simulate(ref)
        return F.coupled_power(sol, mon)

    def outline(self, v) -> np.ndarray:
        """Counter-clockwise polygon of the whole device (input guide, taper, output guide)."""
        cfg = self.cfg
        nv = cfg.boundary_vertices or int(round(cfg.length / self.grid.dx)) + 1
        xs = np.linspace(cfg.x0, cfg.x0 + cfg.length, nv)
        f = self.boundary(xs, v)
        left, right = -1.0, cfg.x_max + 1.0
        lower = np.column_stack([xs, -f])
        upper = np.column_stack([xs[::-1], f[::-1]])
        pts = [(left, -cfg.w_in / 2)] + [tuple(p) for p in lower] + [(right, -cfg.w_out / 2), (right, cfg.w_out / 2)]
        pts += [tuple(p) for p in upper] + [(left, cfg.w_in / 2)]
        return np.array(pts)

    def exact_eps(self, v) -> np.ndarray:
        shape = ExactShape("polygon", self.outline(np.asarray(v, float)))
        return exact_average(shape, self.grid, (self.eps_b, self.eps_s)).values

    def kink_margin(self, v, i: int) -> float:
        """Distance in ``v_i`` to the nearest kink of the one-shot material field."""
        cfg, g = self.cfg, self.grid
        cols = (g.xc > cfg.x0) & (g.xc < cfg.x0 + cfg.length)
        x = g.xc[cols]
        f = self.boundary(x, v)
        b = np.abs(self.boundary.basis(x)[:, i])
        ye = g.y_edges
        # breakpoints of sigma(f - y_c) and sigma(f + y_c) sit at f = +-(cell faces)
        k = np.searchsorted(ye, f)
        gap = np.minimum(np.abs(f - ye[np.clip(k - 1, 0, ye.size - 1)]), np.abs(f - ye[np.clip(k, 0, ye.size - 1)]))
        with np.errstate(divide="ignore"):
            dist = np.where(b > 0, gap / b, np.inf)
        return float(dist.min())


# grating -------------------------------------------------------------------

@dataclass
class GratingConfig:
    n_gratings: int = 10
    wavelength: float = 1.55
    n_si: float = 3.4757
    n_ox: float = 1.444
    dx: float = 0.04
    wg_thickness: float = 0.22
    period: float = 0.62
    deep_width: float = 0.12
    shallow_width: float = 0.12
    deep_depth: float = 0.12
    shallow_depth: float = 0.065
    box: float = 2.013
    x_first: float | None = None
    length: float | None = None
    y_min: float = -3.2
    y_max: float = 2.8
    mfd: float = 10.4
    theta: float = 8.0
    pml_cells: int = 10

    def domain_length(self) -> float:
        return self.length if self.length is not None else max(20.0, self.n_gratings * 0.8 + 8.0)


class GratingTestbed(Testbed):
    """Blazed grating coupler in a silicon slab over a buried oxide and substrate.

    Variables (``n = 3 N_g + 4``): first-scatterer position, one period per
    scatterer, deep and shallow etch widths per scatterer, both etch depths
    and the buried-oxide thickness. Each scatterer is a deep etch followed
    directly by a shallow etch.
    """

    def __init__(self, cfg: GratingConfig | None = None):
        cfg = cfg or GratingConfig()
        self.cfg = cfg
        ng = cfg.n_gratings
        L = cfg.domain_length()
        self.grid = GridSpec.from_extent(0.0, L, cfg.y_min, cfg.y_max, cfg.dx)
        self.omega = 2 * np.pi / cfg.wavelength
        self.pml = F.PML(cfg.pml_cells)
        self.eps_b, self.eps_s = cfg.n_ox ** 2, cfg.n_si ** 2
        x_first = cfg.x_first if cfg.x_first is not None else 3.013
        names = (["x_first"] + [f"period{k}" for k in range(ng)] + [f"deep_w{k}" for k in range(ng)]
                 + [f"shallow_w{k}" for k in range(ng)] + ["deep_depth", "shallow_depth", "box"])
        values = np.concatenate([[x_first], np.full(ng, cfg.period), np.full(ng, cfg.deep_width),
                                 np.full(ng, cfg.shallow_width), [cfg.deep_depth, cfg.shallow_depth, cfg.box]])
        lower = np.concatenate([[1.5], np.full(ng, 0.45), np.full(ng, 0.05), np.full(ng, 0.05), [0.05, 0.02, 1.0]])
        upper = np.concatenate([[L - ng * 0.8 - 1.5], np.full(ng, 0.8), np.full(ng, 0.2), np.full(ng, 0.2),
                                [0.2, 0.15, 2.4]])
        self.params = T.DesignVector(values, names, lower, upper)
        self.nl = Nonlinearity("linear", 1.0 / cfg.dx)
        # starts = x_first + cumulative periods (a fixed linear map of v)
        M = np.zeros((ng, self.params.n))
        M[:, 0] = 1.0
        for k in range(ng):
            M[k, 1:1 + k] = 1.0
        self._start_map = M
        self.ad_shape = self._build_graph()

        wg_rows = self.grid.yc > -1.0
        self.source_column = self.pml.ncells + 2
        eps0 = self.oneshot_eps(values)
        self.source = F.mode_source(eps0, self.grid, self.omega, self.source_column, rows=wg_rows)
        self.monitor_row = self.grid.ny - self.pml.ncells - 5
        ng_len = ng * cfg.period
        self.objective = F.gaussian_objective(self.grid, self.omega, self.monitor_row, x_first + ng_len / 2,
                                              cfg.mfd, cfg.theta, cfg.n_ox, self.pml)
        self.objective = self.objective.with_reference(self._reference_power(wg_rows))

    def _build_graph(self) -> ShapeExpr:
        cfg, nl = self.cfg, self.nl
        ng, n = cfg.n_gratings, self.params.n
        top = cfg.wg_thickness
        col_sum = np.ones((1, ng))

        def build(c):
            v = T.param(list(range(n)), name="v")
            x = np.asarray(c.x.value).reshape(1, -1)
            starts = T.linear(v, self._start_map, shape=(ng, 1))
            wd = T.param(list(range(1 + ng, 1 + 2 * ng)), name="deep_w")
            ws = T.param(list(range(1 + 2 * ng, 1 + 3 * ng)), name="shallow_w")
            d_end = T.add(starts, T.linear(wd, np.eye(ng), shape=(ng, 1)))
            s_end = T.add(d_end, T.linear(ws, np.eye(ng), shape=(ng, 1)))
            xn = T.constant(x)
            # (ng, nx) profiles summed into one row each; scatterers never overlap
            deep = T.linear(rect1d(xn, starts, d_end, nl), sp.kron(col_sum, sp.identity(x.size)), shape=(1, x.size))
            shallow = T.linear(rect1d(xn, d_end, s_end, nl), sp.kron(col_sum, sp.identity(x.size)), shape=(1, x.size))
            dd, ds, box = T.param(3 * ng + 1, "deep_depth"), T.param(3 * ng + 2, "shallow_depth"), T.param(3 * ng + 3, "box")
            y = c.y
            wg = rect1d(y, 0.0, top, nl)
            y_deep = step1d(y, T.affine(dd, -1.0, top), nl)
            y_shallow = step1d(y, T.affine(ds, -1.0, top), nl)
            etch = T.add(T.mul(deep, y_deep), T.mul(shallow, y_shallow))
            substrate = step1d(T.affine(y, -1.0), box, nl)
            si = union_nodes([subtract_nodes(wg, etch), substrate])
            return T.affine(si, self.eps_s - self.eps_b, self.eps_b)

        return ShapeExpr("grating", self.grid, build, nl)

    def scatterers(self, v) -> list[tuple[float, float, float]]:
        ng = self.cfg.n_gratings
        v = np.asarray(v, float)
        starts = self._start_map @ v
        wd, ws = v[1 + ng:1 + 2 * ng], v[1 + 2 * ng:1 + 3 * ng]
        return [(s, s + a, s + a + b) for s, a, b in zip(starts, wd, ws)]

    def exact_scene(self, v) -> ExactScene:
        cfg = self.cfg
        ng = cfg.n_gratings
        v = np.asarray(v, float)
        dd, ds, box = v[3 * ng + 1], v[3 * ng + 2], v[3 * ng + 3]
        top = cfg.wg_thickness
        x0, x1 = self.grid.extent[0] - 1.0, self.grid.extent[1] + 1.0
        pts = [(x0, 0.0), (x1, 0.0), (x1, top)]
        for s, m, e in reversed(self.scatterers(v)):
            pts += [(e, top), (e, top - ds), (m, top - ds), (m, top - dd), (s, top - dd), (s, top)]
        pts.append((x0, top))
        scene = ExactScene(self.eps_b)
        scene.add(ExactShape("polygon", np.array(pts)), self.eps_s)
        scene.add(ExactShape.rectangle(x0, self.grid.extent[2] - 1.0, x1, -box), self.eps_s)
        return scene

    def exact_eps(self, v) -> np.ndarray:
        return exact_average(self.exact_scene(v), self.grid).values

    def _reference_power(self, wg_rows) -> float:
        ref = self.slab_eps(self.params.values)
        mon = F.mode_objective(ref, self.grid, self.omega, self.source_column + 8, rows=wg_rows, pml=self.pml)
        _, sol = self.simulate(ref)
        return F.coupled_power(sol, mon)

    def slab_eps(self, v) -> np.ndarray:
        """The same layer stack without any etch."""
        top = self.cfg.wg_thickness
        x0, x1 = self.grid.extent[0] - 1.0, self.grid.extent[1] + 1.0
        scene = ExactScene(self.eps_b)
        scene.add(ExactShape.rectangle(x0, 0.0, x1, top), self.eps_s)
        scene.add(ExactShape.rectangle(x0, self.grid.extent[2] - 1.0, x1, -float(v[-1])), self.eps_s)
        return exact_average(scene, self.grid).values


def grating_n(n_gratings: int) -> int:
    return 3 * n_gratings + 4
