import numpy as np
import pytest

from shapegrad import optimize as OPT
from shapegrad.errors import NumericError
from shapegrad.tape import DesignVector


def quadratic(A, b):
    def fun(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b, {"t_raster": 0.0, "t_solve": 0.0, "t_grad": 0.0}
    return fun


def test_unconstrained_quadratic_converges(rng):
    M = rng.normal(size=(8, 8))
    A = M @ M.T + 8 * np.eye(8)
    b = rng.normal(size=8)
    x, hist, reason = OPT.minimize(quadratic(A, b), DesignVector(np.zeros(8)), OPT.StopRules(max_iter=200, gtol=1e-10))
    assert np.allclose(x, np.linalg.solve(A, b), atol=1e-8)
    assert reason == "gtol"
    f = [h["f"] for h in hist]
    assert np.all(np.diff(f) <= 0)


def test_bound_constrained_solution_is_projected(rng):
    A = np.diag([1.0, 2.0, 3.0])
    b = np.array([5.0, -4.0, 0.3])
    dv = DesignVector(np.zeros(3), lower=[-1, -1, -1], upper=[1, 1, 1])
    x, _, _ = OPT.minimize(quadratic(A, b), dv, OPT.StopRules(max_iter=100, gtol=1e-12))
    assert np.allclose(x, [1.0, -1.0, 0.1], atol=1e-9)


def test_rosenbrock_descends_monotonically():
    def fun(x):
        f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
        g = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
        return f, g, {}
    x, hist, _ = OPT.minimize(fun, DesignVector([-1.2, 1.0]), OPT.StopRules(max_iter=200, gtol=1e-9))
    assert np.allclose(x, [1, 1], atol=1e-5)
    assert np.all(np.diff([h["f"] for h in hist]) <= 0)


def test_history_fields_and_callback(rng):
    seen = []
    A, b = np.eye(3), np.ones(3)
    OPT.minimize(quadratic(A, b), DesignVector(np.zeros(3)), OPT.StopRules(max_iter=3), callback=lambda r, x: seen.append(r))
    assert seen and set(OPT.HISTORY_FIELDS) <= set(seen[0])


def test_non_finite_objective_raises():
    with pytest.raises(NumericError):
        OPT.minimize(lambda x: (np.nan, np.zeros(1), {}), DesignVector([0.0]))


class ToyTestbed:
    """Quadratic stand-in exposing the testbed interface used by ``run``."""

    def __init__(self, fail_after=None):
        self.params = DesignVector([0.2, -0.3], ["a", "b"], [-1, -1], [1, 1])
        self.calls = 0
        self.fail_after = fail_after

    def evaluate(self, v, mode, want_grad=True):
        from shapegrad.testbeds import Evaluation
        self.calls += 1
        if self.fail_after is not None and self.calls > self.fail_after:
            raise NumericError("solver diverged")
        f = 1.0 - np.sum((v - 0.5) ** 2)
        return Evaluation(f, -2 * (v - 0.5), None, {"t_raster": 0.0, "t_solve": 0.0, "t_grad": 0.0},
                          {"solve_grid": "oneshot", "gradient_path": "ad"})


def test_run_maximizes_efficiency_and_is_reproducible():
    r1 = OPT.run(ToyTestbed(), "prop1-ad", OPT.StopRules(max_iter=20))
    r2 = OPT.run(ToyTestbed(), "prop1-ad", OPT.StopRules(max_iter=20))
    assert r1.f[-1] == pytest.approx(1.0)
    assert np.all(np.diff(r1.f) >= 0)
    assert np.array_equal(r1.f, r2.f)


def test_run_keeps_partial_history_on_failure():
    r = OPT.run(ToyTestbed(fail_after=2), "prop1-ad", OPT.StopRules(max_iter=20))
    assert r.status == "failed" and "diverged" in r.error
    assert len(r.history) >= 1


def test_write_csv(tmp_path):
    r = OPT.run(ToyTestbed(), "prop1-ad", OPT.StopRules(max_iter=3))
    r.write_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == ",".join(OPT.HISTORY_FIELDS)
    assert len(lines) == len(r.history) + 1


def test_helpers():
    assert OPT.efficiency_db(0.1) == pytest.approx(10.0)
    n = np.array([10, 20, 40, 80])
    assert OPT.loglog_slope(n, 3 * n ** 1.5) == pytest.approx(1.5)
