"""[0, 1]-bounded monotone step functions used by every shape primitive."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf as _erf

from .errors import ValidationError

KINDS = ("sigmoid", "erf", "sin", "linear", "quadratic")

_SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True)
class Nonlinearity:
    """``sigma_k(x) = sigma(k x)`` for one of :data:`KINDS`.

    ``k`` is an inverse length in the grid's length unit; the usual choice is
    ``k = k_r / dx`` (see :meth:`relative`).
    """

    kind: str
    k: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown nonlinearity {self.kind!r}; expected one of {KINDS}")
        if not (np.isfinite(self.k) and self.k > 0):
            raise ValidationError(f"k must be positive and finite, got {self.k}")

    @classmethod
    def relative(cls, kind: str, k_r: float, dx: float) -> "Nonlinearity":
        return cls(kind, k_r / dx)

    def __call__(self, x):
        return evaluate(self, x)

    def deriv(self, x):
        return derivative(self, x)

    @property
    def peak_slope(self) -> float:
        return float(derivative(self, 0.0))


def evaluate(nl: Nonlinearity, x):
    u = nl.k * np.asarray(x, dtype=float)
    kind = nl.kind
    if kind == "sigmoid":
        # split by sign to avoid overflow in exp
        e = np.exp(-np.abs(u))
        return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    if kind == "erf":
        return 0.5 * (1.0 + _erf(u))
    if kind == "sin":
        return 0.5 * (1.0 + np.sin(np.clip(u, -np.pi / 2, np.pi / 2)))
    if kind == "linear":
        return np.clip(u + 0.5, 0.0, 1.0)
    # quadratic
    uc = np.clip(u, -_SQRT_HALF, _SQRT_HALF)
    return np.where(uc < 0, (_SQRT_HALF + uc) ** 2, 1.0 - (_SQRT_HALF - uc) ** 2)


def derivative(nl: Nonlinearity, x):
    """d sigma_k / dx; breakpoints take the interior-branch value."""
    k = nl.k
    u = k * np.asarray(x, dtype=float)
    kind = nl.kind
    if kind == "sigmoid":
        s = evaluate(nl, x)
        return k * s * (1.0 - s)
    if kind == "erf":
        return k * np.exp(-u * u) / np.sqrt(np.pi)
    if kind == "sin":
        return np.where(np.abs(u) <= np.pi / 2, 0.5 * k * np.cos(u), 0.0)
    if kind == "linear":
        return np.where(np.abs(u) <= 0.5, k, 0.0)
    inside = np.abs(u) <= _SQRT_HALF
    return np.where(inside, 2.0 * k * (_SQRT_HALF - np.abs(u)), 0.0)
