"""Bounded quasi-Newton optimization loop, conversion/refinement and gradient timing."""
from __future__ import annotations

import csv
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import adjoint as ADJ
from . import fdfd as F
from .errors import ConfigError, NumericError, ShapeGradError
from .raster import fd_material_jacobian
from .tape import DesignVector

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("iteration", "f", "grad_norm", "t_raster", "t_solve", "t_grad", "n_evals", "wall")


@dataclass
class StopRules:
    max_iter: int = 100
    gtol: float = 1e-8
    xtol: float = 1e-12
    ftol: float = 0.0


@dataclass
class LBFGSOptions:
    history: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 20
    initial_step: float | None = None


@dataclass
class OptimizationRun:
    mode: str
    params: DesignVector
    history: list = field(default_factory=list)
    status: str = "running"
    error: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def f(self) -> np.ndarray:
        return np.array([h["f"] for h in self.history])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, extrasaction="ignore")
            w.writeheader()
            for row in self.history:
                w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in HISTORY_FIELDS})


@dataclass
class _Point:
    x: np.ndarray
    f: float
    g: np.ndarray
    timings: dict


def _projected_grad(x, g, lo, hi) -> np.ndarray:
    pg = g.copy()
    pg[(x <= lo) & (g > 0)] = 0.0
    pg[(x >= hi) & (g < 0)] = 0.0
    return pg


def _two_loop(g, pairs) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def minimize(fun: Callable[[np.ndarray], tuple[float, np.ndarray, dict]], params: DesignVector,
             stop: StopRules | None = None, opts: LBFGSOptions | None = None,
             callback: Callable | None = None) -> tuple[np.ndarray, list, str]:
    """Projected limited-memory BFGS with a backtracking/expanding line search.

    ``fun(x) -> (f, grad, timings)``. Returns the final point, the per-iteration
    history and the stop reason. Logged values never increase.
    """
    stop = stop or StopRules()
    opts = opts or LBFGSOptions()
    lo, hi = params.lower, params.upper
    x = np.clip(params.values.astype(float), lo, hi)
    n_evals = 0
    t_start = time.perf_counter()

    def call(z) -> _Point:
        nonlocal n_evals
        n_evals += 1
        f, g, t = fun(z)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise NumericError("objective or gradient is not finite")
        return _Point(z, float(f), np.asarray(g, float), dict(t))

    def record(it, p, timings):
        row = {"iteration": it, "f": p.f, "grad_norm": float(np.abs(_projected_grad(p.x, p.g, lo, hi)).max()),
               "n_evals": n_evals, "wall": time.perf_counter() - t_start}
        row.update({k: timings.get(k, 0.0) for k in ("t_raster", "t_solve", "t_grad")})
        history.append(row)
        if callback is not None:
            callback(row, p.x)

    history: list = []
    pairs: deque = deque(maxlen=opts.history)
    cur = call(x)
    record(0, cur, cur.timings)
    reason = "max_iter"
    for it in range(1, stop.max_iter + 1):
        pg = _projected_grad(cur.x, cur.g, lo, hi)
        if np.abs(pg).max() <= stop.gtol:
            reason = "gtol"
            break
        free = pg != 0
        d = _two_loop(np.where(free, cur.g, 0.0), list(pairs))
        d[~free] = 0.0
        if d @ cur.g >= 0:
            pairs.clear()
            d = -np.where(free, cur.g, 0.0)
        if not pairs:
            scale = opts.initial_step if opts.initial_step else 1.0
            d *= scale / max(np.abs(d).max(), 1e-300)
        step, trial, spent = 1.0, None, {}
        best = None
        expanded = False
        for _ in range(opts.max_ls):
            z = np.clip(cur.x + step * d, lo, hi)
            if np.array_equal(z, cur.x):
                break
            cand = call(z)
            for k, val in cand.timings.items():
                spent[k] = spent.get(k, 0.0) + val
            armijo = cand.f <= cur.f + opts.c1 * (cur.g @ (z - cur.x))
            if armijo:
                best = cand
                curvature_ok = cand.g @ d >= opts.c2 * (cur.g @ d)
                if curvature_ok or expanded or np.any((z <= lo) | (z >= hi)) or step >= 8.0:
                    break
                # weak Wolfe curvature failed: the step is too short, try a longer one once
                step *= 2.0
                expanded = True
                continue
            if best is not None:
                break
            step *= 0.5 if step > 1e-3 else 0.1
        trial = best
        if trial is None:
            if pairs:
                pairs.clear()
                continue
            reason = "line_search"
            break
        s, y = trial.x - cur.x, trial.g - cur.g
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            pairs.append((s, y, 1.0 / sy))
        df = cur.f - trial.f
        cur = trial
        record(it, cur, spent)
        if np.abs(s).max() <= stop.xtol:
            reason = "xtol"
            break
        if stop.ftol > 0 and df <= stop.ftol * max(1.0, abs(cur.f)):
            reason = "ftol"
            break
    return cur.x, history, reason


# runs on testbeds ----------------------------------------------------------

def run(testbed, mode: str = "prop1-ad", stop: StopRules | None = None, opts: LBFGSOptions | None = None,
        params: DesignVector | None = None, callback=None) -> OptimizationRun:
    """Maximize the testbed efficiency (minimize ``-f``) in one of the three modes.

    A solver failure ends the run with ``status="failed"`` and the partial history kept.
    """
    params = params or testbed.params
    result = OptimizationRun(mode, params)

    def fun(v):
        ev = testbed.evaluate(v, mode)
        result.extra.setdefault("flags", ev.flags)
        return -ev.f, -ev.grad, ev.timings

    def cb(row, x):
        result.history.append(row)
        result.params = params.with_values(x)
        if callback is not None:
            callback(row, x)

    try:
        x, _, reason = minimize(fun, params, stop, opts, cb)
        result.params = params.with_values(x)
        result.status = reason
    except ShapeGradError as exc:
        result.status = "failed"
        result.error = str(exc)
        log.error("optimization stopped: %s", exc)
    for row in result.history:
        row["f"] = -row["f"]
    return result


def efficiency_db(f: float) -> float:
    """Insertion loss ``-10 log10(f)``."""
    return float(-10 * np.log10(max(f, 1e-300)))


def convert_and_refine(run_: OptimizationRun, testbed, stop: StopRules | None = None,
                       opts: LBFGSOptions | None = None) -> OptimizationRun:
    """Re-rasterize the final design exactly, log the conversion penalty, refine with FD gradients."""
    if run_.mode != "prop1-ad":
        raise ConfigError("conversion starts from a prop1-ad run")
    v = run_.params.values
    f_before = testbed.efficiency(v, exact=False)
    f_after = testbed.efficiency(v, exact=True)
    refined = run(testbed, "fd-baseline", stop or StopRules(max_iter=5), opts, params=run_.params)
    refined.extra.update({
        "f_oneshot": f_before, "f_converted": f_after,
        "penalty": f_before - f_after, "penalty_db": efficiency_db(f_after) - efficiency_db(f_before),
    })
    return refined


# gradient timing -------------------------------------------------------------

def _median_iqr(ts):
    q1, med, q3 = np.percentile(ts, [25, 50, 75])
    return float(med), float(q3 - q1)


def bench_gradient_scaling(make_testbed: Callable[[int], object], n_list, repeats: int = 10,
                           h: float = 1e-6) -> list[dict]:
    """Gradient-assembly time of the FD and AD paths for each design size.

    ``make_testbed(n)`` returns a testbed with ``n`` variables. Field
    products come from one forward/adjoint solve per testbed; the timed part
    is rasterization plus gradient assembly, with solves excluded.
    """
    rows = []
    for n in n_list:
        tb = make_testbed(n)
        v = tb.params.values
        eps = tb.exact_eps(v)
        prob, sol = tb.simulate(eps)
        _, dfdE = F.evaluate_objective(sol, tb.objective)
        e_prod = F.field_product(sol, F.solve_adjoint(prob, dfdE))

        def fd_path():
            jac = fd_material_jacobian(tb.exact_eps, tb.params, h)
            return ADJ.gradient_fd(ADJ.GradientRequest(None, v, e_prod, tb.omega), jac)

        def ad_path():
            tb.ad_shape.evaluate(v)
            return ADJ.gradient_ad(ADJ.GradientRequest(tb.ad_shape, v, e_prod, tb.omega))

        t_fd, t_ad = [], []
        fd_path(), ad_path()  # warm caches
        for _ in range(repeats):
            t0 = time.perf_counter()
            g_fd = fd_path()
            t1 = time.perf_counter()
            g_ad = ad_path()
            t2 = time.perf_counter()
            t_fd.append(t1 - t0)
            t_ad.append(t2 - t1)
        fd_med, fd_iqr = _median_iqr(t_fd)
        ad_med, ad_iqr = _median_iqr(t_ad)
        cos = float(g_fd @ g_ad / (np.linalg.norm(g_fd) * np.linalg.norm(g_ad) + 1e-300))
        rows.append({"n": int(tb.params.n), "t_fd": fd_med, "t_fd_iqr": fd_iqr, "t_ad": ad_med,
                     "t_ad_iqr": ad_iqr, "ratio": fd_med / ad_med, "cosine": cos})
        log.info("bench n=%d  t_fd=%.4g s  t_ad=%.4g s", tb.params.n, fd_med, ad_med)
    return rows


def loglog_slope(n, t) -> float:
    return float(np.polyfit(np.log(np.asarray(n, float)), np.log(np.asarray(t, float)), 1)[0])
