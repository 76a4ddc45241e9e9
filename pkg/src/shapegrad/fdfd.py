"""2-D scalar frequency-domain solver for the out-of-plane field ``Ez``.

Solves ``(lap + w^2 eps) E = -i w J`` (``c = 1``, lengths in the grid unit,
``w = 2 pi / wavelength``) with a stretched-coordinate PML and homogeneous
Dirichlet walls behind it. The assembled operator is multiplied through by
``s_x s_y`` so that it is complex symmetric (``A^T = A``); the adjoint system
therefore reuses the forward factorization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .errors import ContractError, NumericError, ValidationError
from .grid import GridSpec, MaterialGrid

DIRECT_LIMIT = 500_000
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class PML:
    """Quadratically graded absorbing layer on all four sides."""

    ncells: int = 10
    order: float = 2.0
    reflection: float = 1e-6

    def __post_init__(self):
        if self.ncells < 8:
            raise ValidationError("PML needs at least 8 cells")
        if not 0 < self.reflection < 1:
            raise ValidationError("PML reflection target must lie in (0, 1)")

    def sigma(self, depth: np.ndarray, d: float) -> np.ndarray:
        thickness = self.ncells * d
        smax = (self.order + 1) * np.log(1 / self.reflection) / (2 * thickness)
        return smax * np.clip(depth / thickness, 0, 1) ** self.order

    def stretch(self, n: int, d: float, omega: float, faces: bool) -> np.ndarray:
        """``s = 1 + i sigma / w`` at cell centers (``n``) or faces (``n + 1``)."""
        pos = np.arange(n + 1, dtype=float) if faces else np.arange(n) + 0.5
        depth = np.maximum(self.ncells - pos, 0) + np.maximum(pos - (n - self.ncells), 0)
        return 1 + 1j * self.sigma(depth * d, d) / omega


@dataclass
class FieldSolution:
    E: np.ndarray
    omega: float
    grid: GridSpec
    kind: str = "forward"
    residual: float = 0.0


class HelmholtzProblem:
    """One permittivity distribution at one frequency; caches its factorization."""

    def __init__(self, eps, grid: GridSpec, omega: float, source=None, pml: PML | None = None,
                 method: str = "auto"):
        if isinstance(eps, MaterialGrid):
            grid = eps.grid
            eps = eps.values
        self.eps = np.asarray(eps, dtype=float)
        self.grid = grid
        if self.eps.shape != grid.shape:
            raise ContractError(f"eps shape {self.eps.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(self.eps)):
            raise ValidationError("permittivity must be finite")
        if not omega > 0:
            raise ValidationError("frequency must be positive")
        self.omega = float(omega)
        self.pml = pml or PML()
        if min(grid.nx, grid.ny) <= 2 * self.pml.ncells:
            raise ValidationError("grid too small for the PML")
        self.source = None if source is None else np.asarray(source, dtype=complex)
        if method not in ("auto", "direct", "iterative"):
            raise ValidationError(f"unknown solver method {method!r}")
        self.method = method
        self._A = None
        self._lu = None

    @classmethod
    def from_wavelength(cls, eps, grid, wavelength, **kw) -> "HelmholtzProblem":
        return cls(eps, grid, 2 * np.pi / wavelength, **kw)

    # geometry of the stretched operator --------------------------------
    @property
    def scale(self) -> np.ndarray:
        """``s_x s_y`` at every cell (the symmetrizing factor)."""
        g, w = self.grid, self.omega
        return self.pml.stretch(g.ny, g.dy, w, False)[:, None] * self.pml.stretch(g.nx, g.dx, w, False)[None, :]

    def interior(self) -> tuple[slice, slice]:
        n = self.pml.ncells
        return slice(n, self.grid.ny - n), slice(n, self.grid.nx - n)

    @property
    def A(self) -> sp.csc_matrix:
        if self._A is None:
            self._A = assemble(self.eps, self.grid, self.omega, self.pml)
        return self._A

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = np.asarray(rhs, dtype=complex).ravel()
        use_direct = self.method == "direct" or (self.method == "auto" and self.grid.m <= DIRECT_LIMIT)
        if use_direct:
            if self._lu is None:
                self._lu = spla.splu(self.A)
            x = self._lu.solve(b)
        else:
            d = self.A.diagonal()
            M = spla.LinearOperator(self.A.shape, matvec=lambda v: v / d, dtype=complex)
            x, info = spla.gmres(self.A, b, M=M, rtol=RESIDUAL_TOL * 1e-2, restart=200, maxiter=2000)
        nb = np.linalg.norm(b)
        res = np.linalg.norm(self.A @ x - b) / nb if nb > 0 else 0.0
        if not np.all(np.isfinite(x)) or res > RESIDUAL_TOL:
            raise NumericError(f"linear solve failed: relative residual {res:.3e}")
        self.last_residual = float(res)
        return x.reshape(self.grid.shape)


def assemble(eps: np.ndarray, grid: GridSpec, omega: float, pml: PML) -> sp.csc_matrix:
    """Symmetrized 5-point operator ``s_x s_y (lap_s + w^2 eps)``."""
    nx, ny, dx, dy = grid.nx, grid.ny, grid.dx, grid.dy
    sxc = pml.stretch(nx, dx, omega, False)
    sxf = pml.stretch(nx, dx, omega, True)
    syc = pml.stretch(ny, dy, omega, False)
    syf = pml.stretch(ny, dy, omega, True)
    # coupling across x-face i (between cells i-1 and i), per row j
    cx = syc[:, None] / (sxf[None, :] * dx * dx)          # (ny, nx+1)
    cy = sxc[None, :] / (syf[:, None] * dy * dy)          # (ny+1, nx)
    diag = -(cx[:, :-1] + cx[:, 1:]) - (cy[:-1, :] + cy[1:, :])
    diag = diag + omega ** 2 * eps * syc[:, None] * sxc[None, :]
    east = cx[:, 1:].copy()
    east[:, -1] = 0.0                                      # no wrap between rows
    north = cy[1:-1, :]
    m = nx * ny
    A = sp.diags([diag.ravel(), east.ravel()[:-1], east.ravel()[:-1], north.ravel(), north.ravel()],
                 [0, 1, -1, nx, -nx], shape=(m, m), format="csc")
    return A


def solve_forward(p: HelmholtzProblem, source=None) -> FieldSolution:
    J = p.source if source is None else np.asarray(source, dtype=complex)
    if J is None:
        raise ValidationError("forward solve needs a source")
    if J.shape != p.grid.shape:
        raise ContractError(f"source shape {J.shape} does not match grid {p.grid.shape}")
    E = p.solve(-1j * p.omega * p.scale * J)
    return FieldSolution(E, p.omega, p.grid, "forward", p.last_residual)


def solve_adjoint(p: HelmholtzProblem, dfdE: np.ndarray) -> FieldSolution:
    """Adjoint field ``E_adj = -i w s lam`` with ``A lam = df/dE``.

    With this scaling ``df/d eps_j = 2 w Im(E_j E_adj_j)``.
    """
    dfdE = np.asarray(dfdE, dtype=complex)
    if dfdE.shape != p.grid.shape:
        raise ContractError(f"adjoint source shape {dfdE.shape} does not match grid {p.grid.shape}")
    if not np.any(dfdE):
        return FieldSolution(np.zeros(p.grid.shape, complex), p.omega, p.grid, "adjoint", 0.0)
    lam = p.solve(dfdE)
    return FieldSolution(-1j * p.omega * p.scale * lam, p.omega, p.grid, "adjoint", p.last_residual)


def field_product(fwd: FieldSolution, adj: FieldSolution) -> np.ndarray:
    """``Im(E * E_adj)``, the per-cell seed of the material gradient."""
    return np.imag(fwd.E * adj.E)


# modes -------------------------------------------------------------------

def waveguide_mode(eps_slice, omega: float, d: float, order: int = 0) -> tuple[np.ndarray, float]:
    """Guided mode of the 1-D transverse problem ``(D2 + w^2 eps) u = beta^2 u``.

    Returns the profile normalized to ``sum u^2 d = 1`` (positive peak) and
    ``n_eff = beta / w``.
    """
    e = np.asarray(eps_slice, dtype=float).ravel()
    n = e.size
    if n < 3:
        raise ValidationError("mode slice needs at least 3 samples")
    main = -2.0 / d ** 2 + omega ** 2 * e
    off = np.full(n - 1, 1.0 / d ** 2)
    k = n - 1 - order
    vals, vecs = sla.eigh_tridiagonal(main, off, select="i", select_range=(k, k))
    beta2 = float(vals[0])
    if beta2 <= omega ** 2 * max(e[0], e[-1]):
        raise ValidationError("no guided mode in this slice")
    u = vecs[:, 0]
    u = u / np.sqrt(np.sum(u ** 2) * d)
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    return u, float(np.sqrt(beta2) / omega)


def slab_neff(width: float, n_core: float, n_clad: float, wavelength: float) -> float:
    """Fundamental even-mode index of a symmetric slab from its dispersion relation."""
    k0 = 2 * np.pi / wavelength

    def f(ne):
        kc = k0 * np.sqrt(n_core ** 2 - ne ** 2)
        g = k0 * np.sqrt(ne ** 2 - n_clad ** 2)
        return kc * np.sin(kc * width / 2) - g * np.cos(kc * width / 2)

    # the fundamental root lies where kc w / 2 < pi / 2
    lo = max(n_clad, np.sqrt(max(n_core ** 2 - (np.pi / (k0 * width)) ** 2, n_clad ** 2))) + 1e-15
    return brentq(f, lo, n_core - 1e-15, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def phase_step(beta: float, d: float) -> float:
    """Discrete propagation phase per cell for the 3-point second difference."""
    c = 1 - (beta * d) ** 2 / 2
    if c <= -1:
        raise NumericError("grid too coarse for the propagation constant")
    return float(np.arccos(c))


def mode_source(eps: np.ndarray, grid: GridSpec, omega: float, column: int, rows=None) -> np.ndarray:
    """Line current with the local fundamental-mode profile on one column."""
    u = _column_mode(eps, grid, omega, column, rows)[0]
    J = np.zeros(grid.shape, dtype=complex)
    J[:, column] = u / grid.dx
    return J


def _column_mode(eps, grid, omega, column, rows=None):
    rows = slice(None) if rows is None else rows
    u_win, neff = waveguide_mode(np.asarray(eps)[rows, column], omega, grid.dy)
    u = np.zeros(grid.ny)
    u[rows] = u_win
    return u, neff


# objectives ----------------------------------------------------------------

@dataclass
class ObjectiveSpec:
    """Power coupled into a target, normalized by ``p_ref``.

    ``kind="mode"``: forward-propagating fundamental mode through the plane
    between columns ``column`` and ``column + 1``.
    ``kind="gaussian"``: upward Gaussian beam through rows ``row``/``row+1``,
    ``mfd`` (1/e^2 intensity diameter), tilt ``theta`` (degrees from vertical,
    positive toward ``+x``) in a cladding of index ``n_clad``.
    """

    kind: str
    weights: np.ndarray = field(repr=False, default=None)
    gain: float = 1.0
    p_ref: float = 1.0
    column: int | None = None
    row: int | None = None

    def __post_init__(self):
        if self.kind not in ("mode", "gaussian"):
            raise ValidationError(f"unknown objective kind {self.kind!r}")

    def with_reference(self, p_ref: float) -> "ObjectiveSpec":
        if not p_ref > 0:
            raise NumericError("reference power must be positive")
        return ObjectiveSpec(self.kind, self.weights, self.gain, float(p_ref), self.column, self.row)


def mode_objective(eps, grid: GridSpec, omega: float, column: int, rows=None, pml: PML | None = None,
                   p_ref: float = 1.0) -> ObjectiveSpec:
    pml = pml or PML()
    if not pml.ncells <= column < grid.nx - pml.ncells - 1:
        raise ValidationError("mode monitor lies inside the PML")
    u, neff = _column_mode(eps, grid, omega, column, rows)
    phi = phase_step(neff * omega, grid.dx)
    W = np.zeros(grid.shape, dtype=complex)
    denom = 2j * np.sin(phi)
    W[:, column] = -u * grid.dy * np.exp(-1j * phi) / denom
    W[:, column + 1] = u * grid.dy / denom
    gain = np.sin(phi) / (2 * omega * grid.dx)
    return ObjectiveSpec("mode", W, gain, p_ref, column=column)


def gaussian_objective(grid: GridSpec, omega: float, row: int, x_center: float, mfd: float,
                       theta_deg: float, n_clad: float, pml: PML | None = None,
                       p_ref: float = 1.0) -> ObjectiveSpec:
    pml = pml or PML()
    if not pml.ncells <= row < grid.ny - pml.ncells - 1:
        raise ValidationError("Gaussian monitor lies inside the PML")
    w0 = mfd / 2
    kx = omega * n_clad * np.sin(np.radians(theta_deg))
    x = grid.xc
    g = np.exp(-((x - x_center) / w0) ** 2) * np.exp(1j * kx * x)
    norm = np.sum(np.abs(g) ** 2) * grid.dx
    ky2 = omega ** 2 * n_clad ** 2 - (2 / grid.dx * np.sin(kx * grid.dx / 2)) ** 2
    phi = phase_step(np.sqrt(ky2), grid.dy)
    W = np.zeros(grid.shape, dtype=complex)
    W[row, :] = np.conj(g) * grid.dx / norm
    gain = norm * np.sin(phi) / (2 * omega * grid.dy)
    return ObjectiveSpec("gaussian", W, gain, p_ref, row=row)


def evaluate_objective(sol: FieldSolution, spec: ObjectiveSpec) -> tuple[float, np.ndarray]:
    """Efficiency ``gain |sum W E|^2 / p_ref`` and its derivative ``df/dE``."""
    if spec.weights is None or spec.weights.shape != sol.E.shape:
        raise ContractError("objective weights do not match the field grid")
    a = np.sum(spec.weights * sol.E)
    c = spec.gain / spec.p_ref
    return float(c * abs(a) ** 2), c * np.conj(a) * spec.weights


def coupled_power(sol: FieldSolution, spec: ObjectiveSpec) -> float:
    """Unnormalized power carried by the objective's target."""
    a = np.sum(spec.weights * sol.E)
    return float(spec.gain * abs(a) ** 2)


def line_flux_x(sol: FieldSolution, column: int, rows=None) -> float:
    """Net discrete power flux through the plane between ``column`` and ``column + 1``."""
    rows = slice(None) if rows is None else rows
    E = sol.E[rows]
    return float(np.sum(np.imag(np.conj(E[:, column]) * E[:, column + 1])) * sol.grid.dy / (2 * sol.omega * sol.grid.dx))
