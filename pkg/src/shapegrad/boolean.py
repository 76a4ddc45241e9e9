"""Differentiable Boolean composition of [0, 1] shape fields."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tape as T
from .errors import ConfigError, ContractError, ValidationError
from .nonlin import Nonlinearity
from .shapes import ShapeExpr

UNION_VARIANTS = ("clamp", "smooth", "recursive")
INTERSECTION_VARIANTS = ("clamp", "smooth", "product")


def _check(shapes: Sequence[ShapeExpr]) -> list[ShapeExpr]:
    shapes = list(shapes)
    if not shapes:
        raise ConfigError("Boolean operations need at least one shape")
    g = shapes[0].grid
    for s in shapes[1:]:
        if not s.grid.same_as(g):
            raise ContractError("Boolean operands live on different grids")
    return shapes


def _combine(kind: str, shapes: list[ShapeExpr], op) -> ShapeExpr:
    builders = [s.builder for s in shapes]
    return ShapeExpr(kind, shapes[0].grid, lambda c: op([b(c) for b in builders]), shapes[0].nl)


def _smooth_nl(nl: Nonlinearity | None) -> Nonlinearity:
    if nl is None:
        raise ConfigError("smooth Boolean variants need a nonlinearity")
    return nl


# node-level operations ----------------------------------------------------

def union_nodes(nodes: Sequence, variant: str = "clamp", nl: Nonlinearity | None = None) -> T.Node:
    nodes = list(nodes)
    if variant == "clamp":
        return nodes[0] if len(nodes) == 1 else T.clamp_max(T.add_n(nodes), 1.0)
    if variant == "smooth":
        return T.apply(_smooth_nl(nl), T.affine(T.add_n(nodes), 1.0, -0.5))
    if variant == "recursive":
        acc = nodes[0]
        for s in nodes[1:]:
            # s + (1 - s) acc
            acc = T.add(s, T.mul(T.affine(s, -1.0, 1.0), acc))
        return acc
    raise ConfigError(f"unknown union variant {variant!r}; expected one of {UNION_VARIANTS}")


def intersection_nodes(nodes: Sequence, variant: str = "clamp", nl: Nonlinearity | None = None) -> T.Node:
    nodes = list(nodes)
    n = len(nodes)
    if variant == "clamp":
        return nodes[0] if n == 1 else T.affine(T.clamp_min(T.add_n(nodes), n - 1.0), 1.0, -(n - 1.0))
    if variant == "smooth":
        return T.apply(_smooth_nl(nl), T.affine(T.add_n(nodes), 1.0, -(n - 0.5)))
    if variant == "product":
        return T.mul_n(nodes)
    raise ConfigError(f"unknown intersection variant {variant!r}; expected one of {INTERSECTION_VARIANTS}")


# shape-level operations ---------------------------------------------------

def union(shapes: Sequence[ShapeExpr], variant: str = "clamp", nl: Nonlinearity | None = None) -> ShapeExpr:
    """``clamp``: min(1, sum s); ``smooth``: sigma(sum s - 1/2); ``recursive``: s_N + (1 - s_N) union(rest)."""
    shapes = _check(shapes)
    if variant not in UNION_VARIANTS:
        raise ConfigError(f"unknown union variant {variant!r}; expected one of {UNION_VARIANTS}")
    return _combine("union", shapes, lambda ns: union_nodes(ns, variant, nl))


def intersection(shapes: Sequence[ShapeExpr], variant: str = "clamp", nl: Nonlinearity | None = None) -> ShapeExpr:
    """``clamp``: max(N-1, sum s) - (N-1); ``product``: prod s; ``smooth``: sigma(sum s - (N - 1/2))."""
    shapes = _check(shapes)
    if variant not in INTERSECTION_VARIANTS:
        raise ConfigError(f"unknown intersection variant {variant!r}; expected one of {INTERSECTION_VARIANTS}")
    return _combine("intersection", shapes, lambda ns: intersection_nodes(ns, variant, nl))


def subtract_nodes(base, cut) -> T.Node:
    return T.clamp_min(T.sub(base, cut), 0.0)


def subtract(base: ShapeExpr, cut: ShapeExpr) -> ShapeExpr:
    """``max(0, base - cut)``."""
    _check([base, cut])
    return _combine("subtract", [base, cut], lambda ns: subtract_nodes(*ns))


@dataclass
class MaterialLevelSet:
    shapes: list
    level: float

    def __post_init__(self):
        self.shapes = list(self.shapes)
        if not self.shapes:
            raise ConfigError("a material level needs at least one shape")


def _levels_checked(levels: Sequence[MaterialLevelSet], background: float) -> np.ndarray:
    if not levels:
        raise ConfigError("union_multilevel needs at least one level")
    eps = np.array([lv.level for lv in levels], dtype=float) - background
    if np.any(eps <= 0):
        raise ValidationError("material levels must lie strictly above the background")
    if np.any(np.diff(eps) <= 0):
        raise ValidationError("material levels must be sorted strictly ascending")
    return eps


def multilevel_nodes(node_sets: Sequence[Sequence], eps: np.ndarray, variant: str = "clamp",
                     nl: Nonlinearity | None = None) -> T.Node:
    s = union_nodes(node_sets[0], variant, nl)
    for k in range(1, len(node_sets)):
        s = union_nodes([T.affine(s, eps[k - 1] / eps[k]), union_nodes(node_sets[k], variant, nl)], variant, nl)
    return T.affine(s, float(eps[-1]))


def union_multilevel(levels: Sequence[MaterialLevelSet], background: float = 0.0, variant: str = "clamp",
                     nl: Nonlinearity | None = None) -> ShapeExpr:
    """Union over sets with distinct material values; the larger value wins on overlap.

    Returns the material field itself (``background`` outside every shape).
    """
    eps = _levels_checked(levels, background)
    shapes = _check([s for lv in levels for s in lv.shapes])
    groups = [[s.builder for s in lv.shapes] for lv in levels]

    def build(c):
        node = multilevel_nodes([[b(c) for b in grp] for grp in groups], eps, variant, nl)
        return T.affine(node, 1.0, float(background)) if background else node

    return ShapeExpr("union_multilevel", shapes[0].grid, build, shapes[0].nl)


def scale_to_materials(shape: ShapeExpr, eps_b: float, eps_s: float) -> ShapeExpr:
    """``eps_b + (eps_s - eps_b) shape``."""
    b = shape.builder
    return ShapeExpr("material", shape.grid, lambda c: T.affine(b(c), float(eps_s - eps_b), float(eps_b)), shape.nl)
