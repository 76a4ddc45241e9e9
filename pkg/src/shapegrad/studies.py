"""Smoothing-error and Jacobian-fit sweeps over the nonlinearity family."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ValidationError
from .grid import MaterialGrid
from .nonlin import KINDS, Nonlinearity
from .raster import ad_material_jacobian, jacobian_fit, mse_report, rasterize_oneshot
from .shapes import ShapeExpr
from .tape import DesignVector

ShapeFactory = Callable[[Nonlinearity], ShapeExpr]


def parse_sweep(text: str) -> np.ndarray:
    """``"lo:hi:steps"`` -> geometric sweep of relative ``k`` values (``k dx``)."""
    try:
        lo, hi, steps = text.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
    except ValueError:
        raise ConfigError(f"k sweep must look like lo:hi:steps, got {text!r}") from None
    if not (0 < lo <= hi) or steps < 1:
        raise ConfigError(f"invalid k sweep {text!r}")
    return np.geomspace(lo, hi, steps) if steps > 1 else np.array([lo])


def check_functions(functions: Sequence[str]) -> list[str]:
    bad = [f for f in functions if f not in KINDS]
    if bad:
        raise ConfigError(f"unknown nonlinearities {bad}; expected a subset of {KINDS}")
    return list(functions)


@dataclass
class SweepResult:
    rows: list[dict]
    best: dict  # function -> row at the optimum
    maps: dict  # name -> 2D array

    def column(self, function: str, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["function"] == function])


def mse_study(factory: ShapeFactory, params, truth: MaterialGrid, functions: Sequence[str],
              k_rel: Sequence[float]) -> SweepResult:
    """MSE of the one-shot raster against ``truth`` for every ``(function, k)``.

    ``truth`` holds the exact overlap fraction on the same grid; ``k_rel`` is
    in units of ``1/dx``.
    """
    dx = truth.grid.dx
    rows, best, maps = [], {}, {}
    for kind in check_functions(functions):
        for kr in k_rel:
            shape = factory(Nonlinearity(kind, kr / dx))
            approx = rasterize_oneshot(shape, params, truth.grid)
            mse, err = mse_report(approx, truth)
            row = {"function": kind, "k_rel": float(kr), "k": float(kr / dx), "mse": mse}
            rows.append(row)
            if kind not in best or mse < best[kind]["mse"]:
                best[kind] = row
                maps[f"error_{kind}"] = err.values
    return SweepResult(rows, best, maps)


def fd_column(exact: Callable[[np.ndarray], np.ndarray], params: DesignVector, index: int,
              h: float = 1e-6) -> sp.csc_matrix:
    """Central-difference column of the exact material Jacobian for one parameter."""
    v = np.asarray(params.values, float)
    vp, vm = v.copy(), v.copy()
    vp[index] += h
    vm[index] -= h
    d = (np.asarray(exact(vp), float) - np.asarray(exact(vm), float)).ravel() / (2 * h)
    return sp.csc_matrix(d.reshape(-1, 1))


def jacfit_study(factory: ShapeFactory, params: DesignVector, param: str,
                 exact: Callable[[np.ndarray], np.ndarray], functions: Sequence[str],
                 k_rel: Sequence[float], dx: float, h: float = 1e-6) -> SweepResult:
    """Slope and RMSE of the AD Jacobian column against the exact FD column, per ``(function, k)``.

    The optimum for each function is the sweep point of least RMSE.
    """
    if param not in params.names:
        raise ConfigError(f"unknown design parameter {param!r}; scene declares {list(params.names)}")
    i = params.index(param)
    fd = fd_column(exact, params, i, h)
    if fd.nnz == 0:
        raise ValidationError(f"parameter {param!r} does not move any material")
    shape0 = None
    rows, best, maps = [], {}, {}
    for kind in check_functions(functions):
        for kr in k_rel:
            shape = factory(Nonlinearity(kind, kr / dx))
            shape0 = shape0 or shape
            ad = ad_material_jacobian(shape, params, columns=[i])
            slope, rmse = jacobian_fit(ad, fd)
            row = {"function": kind, "k_rel": float(kr), "k": float(kr / dx), "slope": slope, "rmse": rmse}
            rows.append(row)
            if kind not in best or rmse < best[kind]["rmse"]:
                best[kind] = row
                maps[f"ad_{kind}"] = ad.toarray().reshape(shape.grid.shape)
    maps["fd"] = fd.toarray().reshape(shape0.grid.shape)
    return SweepResult(rows, best, maps)


def interior_minimum(values: Sequence[float]) -> bool:
    i = int(np.argmin(values))
    return 0 < i < len(values) - 1


def strictly_increasing(values: Sequence[float]) -> bool:
    return bool(np.all(np.diff(np.asarray(values, float)) > 0))
