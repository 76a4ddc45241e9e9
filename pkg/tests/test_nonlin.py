import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapegrad.errors import ValidationError
from shapegrad.nonlin import KINDS, Nonlinearity

# peak slope sigma_k'(0) per unit k
PEAK = {"sigmoid": 0.25, "erf": 1 / np.sqrt(np.pi), "sin": 0.5, "linear": 1.0, "quadratic": 2 * np.sqrt(0.5)}
# half-width of the transition region in units of 1/k (inf: never exactly 0/1)
SUPPORT = {"sigmoid": np.inf, "erf": np.inf, "sin": np.pi / 2, "linear": 0.5, "quadratic": np.sqrt(0.5)}


@pytest.mark.parametrize("kind", KINDS)
@given(x=st.floats(-50, 50), k=st.floats(0.1, 100))
@settings(max_examples=60, deadline=None)
def test_point_symmetry_and_range(kind, x, k):
    nl = Nonlinearity(kind, k)
    a, b = float(nl(x)), float(nl(-x))
    assert 0.0 <= a <= 1.0
    assert a + b == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_monotone_and_centered(kind):
    nl = Nonlinearity(kind, 3.0)
    x = np.linspace(-5, 5, 2001)
    assert np.all(np.diff(nl(x)) >= -1e-15)
    assert float(nl(0.0)) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("kind", KINDS)
def test_derivative_matches_central_differences(kind):
    nl = Nonlinearity(kind, 2.5)
    x = np.linspace(-1.3, 1.3, 97) + 1e-3
    fd = (nl(x + 1e-7) - nl(x - 1e-7)) / 2e-7
    assert np.allclose(nl.deriv(x), fd, atol=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_peak_slope(kind):
    assert Nonlinearity(kind, 4.0).peak_slope == pytest.approx(4.0 * PEAK[kind], rel=1e-12)


@pytest.mark.parametrize("kind", ["sin", "linear", "quadratic"])
def test_compact_transition(kind):
    k = 2.0
    nl = Nonlinearity(kind, k)
    edge = SUPPORT[kind] / k
    assert float(nl(edge)) == 1.0 and float(nl(-edge)) == 0.0
    assert float(nl.deriv(edge + 1e-9)) == 0.0


def test_breakpoint_uses_interior_branch():
    nl = Nonlinearity("linear", 2.0)
    assert float(nl.deriv(0.25)) == 2.0
    assert float(nl.deriv(-0.25)) == 2.0


def test_relative_constructor():
    nl = Nonlinearity.relative("erf", 2.0, 0.04)
    assert nl.k == pytest.approx(50.0)


@pytest.mark.parametrize("bad", [("tanh", 1.0), ("linear", 0.0), ("linear", -1.0), ("sin", np.inf)])
def test_invalid(bad):
    with pytest.raises(ValidationError):
        Nonlinearity(*bad)
