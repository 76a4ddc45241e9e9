"""Gradient assembly from adjoint field products.

Both paths compute ``df/dv_i = 2 w sum_j d eps_j/d v_i Im(E_j E_adj_j)``
(minus the analogous ``mu``/``H`` term). The AD path contracts the field
product with the tape graph in one backward pass; the FD path uses an
explicit material Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import tape as T
from .errors import ConfigError, ContractError, ValidationError
from .grid import GridSpec
from .nonlin import Nonlinearity
from .shapes import ShapeExpr


def _as_list(x):
    if x is None:
        return []
    return list(x) if isinstance(x, (list, tuple)) else [x]


@dataclass
class GradientRequest:
    """Field products ``Im(E * E_adj)`` paired with the material graphs they multiply.

    ``eps`` and ``e_prod`` may be lists to pair several staggered material
    grids with their field-component products.
    """

    eps: object
    params: object
    e_prod: object
    omega: float
    mu: object = None
    h_prod: object = None

    def pairs(self, which: str):
        graphs = _as_list(self.eps if which == "e" else self.mu)
        prods = _as_list(self.e_prod if which == "e" else self.h_prod)
        if len(graphs) != len(prods):
            raise ContractError(f"{len(graphs)} {which}-graphs for {len(prods)} field products")
        return list(zip(graphs, prods))

    @property
    def n(self) -> int:
        return np.atleast_1d(getattr(self.params, "values", self.params)).size


def _root(g):
    return g.root if isinstance(g, ShapeExpr) else g


def gradient_ad(req: GradientRequest) -> np.ndarray:
    """``2 w (backward(eps, e_prod) - backward(mu, h_prod))``; needs a prior forward pass."""
    grad = np.zeros(req.n)
    for sign, which in ((1.0, "e"), (-1.0, "h")):
        for graph, prod in req.pairs(which):
            root = _root(graph)
            prod = np.asarray(prod, dtype=float)
            if root.value is None:
                raise ContractError("material graph has not been evaluated at the current parameters")
            if prod.shape != np.shape(root.value):
                raise ContractError(f"field product shape {prod.shape} != material shape {np.shape(root.value)}")
            grad += sign * T.backward(root, prod, req.n)
    return 2.0 * req.omega * grad


def gradient_fd(req: GradientRequest, jac, mu_jac=None) -> np.ndarray:
    """``2 w (J_eps^T e_prod - J_mu^T h_prod)`` with explicit ``m x n`` Jacobians."""
    jacs = _as_list(jac)
    prods = _as_list(req.e_prod)
    if len(jacs) != len(prods):
        raise ContractError("one Jacobian per field product is required")
    grad = np.zeros(req.n)
    terms = [(1.0, j, p) for j, p in zip(jacs, prods)]
    terms += [(-1.0, j, p) for j, p in zip(_as_list(mu_jac), _as_list(req.h_prod))]
    for sign, j, p in terms:
        p = np.asarray(p, dtype=float).ravel()
        if j.shape != (p.size, req.n):
            raise ContractError(f"Jacobian shape {j.shape} does not match ({p.size}, {req.n})")
        grad += sign * np.asarray(j.T @ p).ravel()
    return 2.0 * req.omega * grad


SIGMOID_K1 = Nonlinearity("sigmoid", 1.0)


@dataclass
class TopologyMap:
    """``eps = B (eps_l + d_eps sigma(v))`` with a 0/1 broadcast matrix ``B`` (m x n)."""

    B: object
    eps_l: float
    d_eps: float
    grid: GridSpec
    nl: Nonlinearity | None = SIGMOID_K1

    def __post_init__(self):
        self.B = sp.csr_matrix(self.B)
        if self.B.shape[0] != self.grid.m:
            raise ValidationError(f"B has {self.B.shape[0]} rows for a grid of {self.grid.m} cells")
        data = self.B.data
        if data.size and not np.all((data == 0) | (data == 1)):
            raise ValidationError("B entries must be 0 or 1")
        if np.any(np.diff(self.B.tocsc().indptr) == 0):
            raise ValidationError("every column of B needs a nonzero entry")

    @classmethod
    def identity(cls, grid: GridSpec, eps_l, d_eps, nl=SIGMOID_K1) -> "TopologyMap":
        return cls(sp.identity(grid.m, format="csr"), eps_l, d_eps, grid, nl)

    @classmethod
    def column_replication(cls, grid: GridSpec, eps_l, d_eps, nl=SIGMOID_K1) -> "TopologyMap":
        """One variable per grid column, replicated along ``y``."""
        rows = np.arange(grid.m)
        cols = rows % grid.nx
        B = sp.csr_matrix((np.ones(grid.m), (rows, cols)), shape=(grid.m, grid.nx))
        return cls(B, eps_l, d_eps, grid, nl)

    @property
    def n(self) -> int:
        return self.B.shape[1]


def build_topology_graph(tmap: TopologyMap, v: T.DesignVector | None = None) -> ShapeExpr:
    """``sigma -> affine -> broadcast``; ``tmap.nl = None`` drops the projection."""
    if v is not None and v.n != tmap.n:
        raise ConfigError(f"topology map expects {tmap.n} variables, got {v.n}")

    def build(_coords):
        x = T.param(list(range(tmap.n)), name="v")
        p1 = T.apply(tmap.nl, x) if tmap.nl is not None else x
        p2 = T.affine(p1, float(tmap.d_eps), float(tmap.eps_l))
        return T.linear(p2, tmap.B, shape=tmap.grid.shape)

    return ShapeExpr("topology", tmap.grid, build, tmap.nl)


def topology_gradient(tmap: TopologyMap, v, e_prod, omega: float) -> np.ndarray:
    """Closed form ``2 w d_eps sigma'(v) B^T e_prod`` (``sigma' = sigma(1 - sigma)`` for k=1 sigmoid)."""
    v = np.asarray(getattr(v, "values", v), float)
    d = tmap.nl.deriv(v) if tmap.nl is not None else np.ones_like(v)
    return 2.0 * omega * tmap.d_eps * d * (tmap.B.T @ np.asarray(e_prod, float).ravel())
