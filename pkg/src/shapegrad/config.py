"""YAML scene and experiment configuration.

A scene file declares a grid, a material pair, design variables, named
shapes and a composition tree::

    grid: {x0: -1, y0: -1, dx: 0.05, nx: 40, ny: 40}
    materials: [1.0, 12.0]
    nonlinearity: {kind: linear, k_rel: 1.0}
    design:
      - {name: w, value: 0.4, lower: 0.1, upper: 0.9}
    shapes:
      - {name: a, kind: rect2d, params: {x0: -0.5, y0: -0.2, x1: $w, y1: 0.2}}
    compose: {op: union, args: [a]}

A parameter value of the form ``$name`` refers to a design variable.
Experiments that run a solver add an ``experiment`` block naming a testbed.
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import boolean as B
from . import shapes as S
from . import tape as T
from .errors import ConfigError, ShapeGradError
from .grid import GridSpec
from .nonlin import Nonlinearity
from .raster import ExactScene, ExactShape, exact_average

EXACT_POLYGON_VERTICES = 1000
OPS = ("union", "intersection", "subtract")
# kind -> (required, optional) parameter names
SHAPE_PARAMS = {
    "step1d": ({"x0"}, {"axis"}),
    "rect1d": ({"x0", "x1"}, {"axis"}),
    "rect2d": ({"x0", "y0", "x1", "y1"}, set()),
    "step2d": ({"nx", "ny", "x0", "y0"}, set()),
    "poly2d": ({"xs", "ys"}, set()),
    "circ2d": ({"r", "x0", "y0"}, set()),
    "polar2d": ({"r", "delta", "x0", "y0"}, {"alpha"}),
    "fourier_polar": ({"r0"}, {"c", "s", "x0", "y0"}),
}


class Located:
    """Maps a field path such as ``shapes[2].params.x1`` to its line in the source."""

    def __init__(self, text: str | None, source: str = "<config>"):
        self.source = source
        self.root = None
        if text is not None:
            try:
                self.root = yaml.compose(text)
            except yaml.YAMLError:
                self.root = None

    def line(self, path: tuple) -> int | None:
        node = self.root
        last = node
        for key in path:
            if isinstance(node, yaml.MappingNode):
                nxt = next((v for k, v in node.value if k.value == key), None)
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                nxt = node.value[key]
            else:
                nxt = None
            if nxt is None:
                break
            node = last = nxt
        return None if last is None else last.start_mark.line + 1

    def error(self, path: tuple, message: str) -> ConfigError:
        where = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in path).lstrip(".")
        line = self.line(path)
        loc = f"{self.source}:{line}" if line is not None else self.source
        return ConfigError(f"{loc}: {where or '<root>'}: {message}")


def _is_ref(v) -> bool:
    return isinstance(v, str) and v.startswith("$")


@dataclass
class NonlinSpec:
    kind: str
    k: float | None = None
    k_rel: float | None = None

    def build(self, dx: float) -> Nonlinearity:
        k = self.k if self.k is not None else self.k_rel / dx
        return Nonlinearity(self.kind, k)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.k is not None:
            d["k"] = self.k
        if self.k_rel is not None:
            d["k_rel"] = self.k_rel
        return d


@dataclass
class DesignVar:
    name: str
    value: float
    lower: float = -np.inf
    upper: float = np.inf

    def to_dict(self) -> dict:
        d = {"name": self.name, "value": self.value}
        if np.isfinite(self.lower):
            d["lower"] = self.lower
        if np.isfinite(self.upper):
            d["upper"] = self.upper
        return d


@dataclass
class ShapeDecl:
    name: str
    kind: str
    params: dict
    nonlinearity: NonlinSpec | None = None
    nonlinearity_y: NonlinSpec | None = None
    transform: dict | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "params": copy.deepcopy(self.params)}
        if self.nonlinearity is not None:
            d["nonlinearity"] = self.nonlinearity.to_dict()
        if self.nonlinearity_y is not None:
            d["nonlinearity_y"] = self.nonlinearity_y.to_dict()
        if self.transform:
            d["transform"] = copy.deepcopy(self.transform)
        return d


@dataclass
class SceneConfig:
    grid: GridSpec | None
    materials: tuple[float, float]
    shapes: list[ShapeDecl]
    compose: Any
    nonlinearity: NonlinSpec = field(default_factory=lambda: NonlinSpec("linear", k_rel=1.0))
    design: list[DesignVar] = field(default_factory=list)
    experiment: dict | None = None

    # parsing -------------------------------------------------------------
    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "SceneConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = f":{mark.line + 1}" if mark is not None else ""
            raise ConfigError(f"{source}{line}: cannot parse YAML: {getattr(exc, 'problem', exc)}") from None
        return cls.from_dict(data, Located(text, source))

    @classmethod
    def load(cls, path) -> "SceneConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, str(p))

    @classmethod
    def from_dict(cls, data, loc: Located | None = None) -> "SceneConfig":
        loc = loc or Located(None)
        if not isinstance(data, dict):
            raise loc.error((), "top level must be a mapping")
        unknown = set(data) - {"grid", "materials", "nonlinearity", "design", "shapes", "compose", "experiment"}
        if unknown:
            raise loc.error((sorted(unknown)[0],), "unknown key")
        experiment = data.get("experiment")
        if experiment is not None and not isinstance(experiment, dict):
            raise loc.error(("experiment",), "expected a mapping")
        if experiment is not None and "shapes" not in data:
            # solver experiments build their own geometry
            grid = _parse_grid(data["grid"], loc) if "grid" in data else None
            return cls(grid, (0.0, 1.0), [], None, experiment=copy.deepcopy(experiment))
        grid = _parse_grid(data.get("grid"), loc)
        mats = data.get("materials", [0.0, 1.0])
        if not (isinstance(mats, list) and len(mats) == 2 and all(_num(m) for m in mats)):
            raise loc.error(("materials",), "expected [eps_background, eps_shape]")
        nl = _parse_nl(data.get("nonlinearity", {"kind": "linear", "k_rel": 1.0}), ("nonlinearity",), loc)
        design = _parse_design(data.get("design", []) or [], loc)
        names = {d.name for d in design}
        shapes = _parse_shapes(data.get("shapes"), names, loc)
        shape_names = [s.name for s in shapes]
        compose = data.get("compose", {"op": "union", "args": shape_names})
        _check_tree(compose, set(shape_names), ("compose",), loc)
        return cls(grid, (float(mats[0]), float(mats[1])), shapes, copy.deepcopy(compose), nl, design,
                   copy.deepcopy(experiment))

    def to_dict(self) -> dict:
        g = self.grid
        if not self.shapes:
            d = {} if g is None else {"grid": g.to_dict()}
            d["experiment"] = copy.deepcopy(self.experiment)
            return d
        d = {"grid": {"x0": g.x0, "y0": g.y0, "dx": g.dx, "dy": g.dy, "nx": g.nx, "ny": g.ny},
             "materials": list(self.materials),
             "nonlinearity": self.nonlinearity.to_dict(),
             "design": [v.to_dict() for v in self.design],
             "shapes": [s.to_dict() for s in self.shapes],
             "compose": copy.deepcopy(self.compose)}
        if g.offset != (0.0, 0.0):
            d["grid"]["offset"] = list(g.offset)
        if self.experiment is not None:
            d["experiment"] = copy.deepcopy(self.experiment)
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    # construction ----------------------------------------------------------
    def design_vector(self) -> T.DesignVector:
        if not self.design:
            return T.DesignVector(np.zeros(0), [])
        return T.DesignVector([d.value for d in self.design], [d.name for d in self.design],
                              [d.lower for d in self.design], [d.upper for d in self.design])

    def build(self, nl_override: Nonlinearity | None = None, grid: GridSpec | None = None):
        """``(shape field in [0, 1], design vector)``; ``nl_override`` replaces every nonlinearity."""
        if not self.shapes:
            raise ConfigError("config declares no shapes")
        grid = grid or self.grid
        dv = self.design_vector()
        built = {}
        for decl in self.shapes:
            built[decl.name] = self._build_shape(decl, grid, dv, nl_override)
        return self._compose(self.compose, built, nl_override), dv

    def build_materials(self, nl_override=None, grid=None):
        shape, dv = self.build(nl_override, grid)
        return B.scale_to_materials(shape, *self.materials), dv

    def _build_shape(self, decl: ShapeDecl, grid, dv, nl_override) -> S.ShapeExpr:
        def nl_for(spec):
            if nl_override is not None:
                return nl_override
            return (spec or self.nonlinearity).build(grid.dx)

        nl = nl_for(decl.nonlinearity)
        nl_y = nl_for(decl.nonlinearity_y) if decl.nonlinearity_y is not None else None
        p = {k: _resolve_node(v, dv) for k, v in decl.params.items()}
        if decl.kind == "fourier_polar":
            shape = _fourier(grid, decl, p, dv, nl)
        else:
            shape = S.build_primitive(decl.kind, p, nl, grid, nl_y)
        if decl.transform:
            t = decl.transform
            shape = S.transform(shape, t.get("rotation", 0.0), tuple(t.get("aspect", (1.0, 1.0))),
                                tuple(t.get("shift", (0.0, 0.0))), tuple(t.get("center", (0.0, 0.0))))
        return shape

    def _compose(self, tree, built, nl_override):
        if isinstance(tree, str):
            return built[tree]
        parts = [self._compose(a, built, nl_override) for a in tree["args"]]
        op, variant = tree["op"], tree.get("variant", "clamp")
        if op == "union":
            return B.union(parts, variant, nl_override)
        if op == "intersection":
            return B.intersection(parts, variant, nl_override)
        return B.subtract(parts[0], parts[1])

    # exact ground truth ----------------------------------------------------
    def exact_scene(self, values=None) -> ExactScene:
        """Exact geometry of the composed scene at ``values`` (defaults to the declared ones).

        Only unions of non-overlapping shapes have an exact counterpart.
        """
        vals = self._value_map(values)
        leaves = _union_leaves(self.compose)
        if leaves is None:
            raise ConfigError("exact rasterization supports only union compositions")
        by_name = {s.name: s for s in self.shapes}
        scene = ExactScene(0.0)
        for name in leaves:
            scene.add(_exact_shape(by_name[name], vals), 1.0)
        return scene

    def exact_fraction(self, values=None, grid: GridSpec | None = None) -> np.ndarray:
        return exact_average(self.exact_scene(values), grid or self.grid).values

    def _value_map(self, values) -> dict:
        if values is None:
            return {d.name: d.value for d in self.design}
        values = np.asarray(values, float)
        if values.size != len(self.design):
            raise ConfigError(f"expected {len(self.design)} design values, got {values.size}")
        return {d.name: float(v) for d, v in zip(self.design, values)}


def load_scene(path) -> SceneConfig:
    return SceneConfig.load(path)


# parsing helpers ---------------------------------------------------------------

def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _parse_grid(d, loc) -> GridSpec:
    if not isinstance(d, dict):
        raise loc.error(("grid",), "missing or not a mapping")
    try:
        if "extent" in d:
            xmin, xmax, ymin, ymax = d["extent"]
            return GridSpec.from_extent(xmin, xmax, ymin, ymax, d["dx"], d.get("dy"))
        return GridSpec.from_dict(d)
    except KeyError as exc:
        raise loc.error(("grid",), f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise loc.error(("grid",), str(exc)) from None
    except ShapeGradError as exc:
        raise loc.error(("grid",), str(exc)) from None


def _parse_nl(d, path, loc) -> NonlinSpec:
    if not isinstance(d, dict) or "kind" not in d:
        raise loc.error(path, "nonlinearity needs a kind")
    if ("k" in d) == ("k_rel" in d):
        raise loc.error(path, "give exactly one of k or k_rel")
    key = "k" if "k" in d else "k_rel"
    if not _num(d[key]) or d[key] <= 0:
        raise loc.error(path + (key,), "must be a positive number")
    spec = NonlinSpec(d["kind"], d.get("k"), d.get("k_rel"))
    try:
        spec.build(1.0)
    except ShapeGradError as exc:
        raise loc.error(path + ("kind",), str(exc)) from None
    return spec


def _parse_design(items, loc) -> list[DesignVar]:
    if not isinstance(items, list):
        raise loc.error(("design",), "expected a list")
    out, seen = [], set()
    for i, d in enumerate(items):
        path = ("design", i)
        if not isinstance(d, dict) or "name" not in d or "value" not in d:
            raise loc.error(path, "design variables need name and value")
        if d["name"] in seen:
            raise loc.error(path + ("name",), f"duplicate design variable {d['name']!r}")
        seen.add(d["name"])
        for key in ("value", "lower", "upper"):
            if key in d and not _num(d[key]):
                raise loc.error(path + (key,), "must be a finite number")
        lo, hi = float(d.get("lower", -np.inf)), float(d.get("upper", np.inf))
        if not lo <= d["value"] <= hi:
            raise loc.error(path + ("value",), "value lies outside its bounds")
        out.append(DesignVar(str(d["name"]), float(d["value"]), lo, hi))
    return out


def _check_values(v, names, path, loc):
    if isinstance(v, list):
        for j, x in enumerate(v):
            _check_values(x, names, path + (j,), loc)
    elif _is_ref(v):
        if v[1:] not in names:
            raise loc.error(path, f"unknown design variable {v[1:]!r}")
    elif not (_num(v) or (isinstance(v, str) and path[-1] == "axis")):
        raise loc.error(path, f"expected a number or $name, got {v!r}")


def _parse_shapes(items, names, loc) -> list[ShapeDecl]:
    if not isinstance(items, list) or not items:
        raise loc.error(("shapes",), "expected a non-empty list")
    out, seen = [], set()
    for i, d in enumerate(items):
        path = ("shapes", i)
        if not isinstance(d, dict) or "name" not in d or "kind" not in d:
            raise loc.error(path, "shapes need name and kind")
        if d["kind"] not in S.PRIMITIVES:
            raise loc.error(path + ("kind",), f"unknown shape kind {d['kind']!r}; expected one of {S.PRIMITIVES}")
        if d["name"] in seen:
            raise loc.error(path + ("name",), f"duplicate shape name {d['name']!r}")
        seen.add(d["name"])
        params = d.get("params", {}) or {}
        if not isinstance(params, dict):
            raise loc.error(path + ("params",), "expected a mapping")
        required, optional = SHAPE_PARAMS[d["kind"]]
        missing = sorted(required - set(params))
        if missing:
            raise loc.error(path + ("params",), f"{d['kind']} needs parameter {missing[0]!r}")
        extra = sorted(set(params) - required - optional)
        if extra:
            raise loc.error(path + ("params", extra[0]), f"unknown {d['kind']} parameter")
        for k, v in params.items():
            _check_values(v, names, path + ("params", k), loc)
        nl = _parse_nl(d["nonlinearity"], path + ("nonlinearity",), loc) if "nonlinearity" in d else None
        nly = _parse_nl(d["nonlinearity_y"], path + ("nonlinearity_y",), loc) if "nonlinearity_y" in d else None
        tr = d.get("transform")
        if tr is not None:
            bad = set(tr) - {"rotation", "aspect", "shift", "center"}
            if bad:
                raise loc.error(path + ("transform", sorted(bad)[0]), "unknown transform field")
        out.append(ShapeDecl(str(d["name"]), d["kind"], copy.deepcopy(params), nl, nly, copy.deepcopy(tr)))
    return out


def _check_tree(tree, names, path, loc):
    if isinstance(tree, str):
        if tree not in names:
            raise loc.error(path, f"composition refers to undeclared shape {tree!r}")
        return
    if not isinstance(tree, dict) or "op" not in tree or "args" not in tree:
        raise loc.error(path, "composition nodes need op and args")
    if tree["op"] not in OPS:
        raise loc.error(path + ("op",), f"unknown operation {tree['op']!r}; expected one of {OPS}")
    args = tree["args"]
    if not isinstance(args, list) or not args:
        raise loc.error(path + ("args",), "expected a non-empty list")
    if tree["op"] == "subtract" and len(args) != 2:
        raise loc.error(path + ("args",), "subtract takes exactly two arguments")
    variants = B.UNION_VARIANTS if tree["op"] == "union" else B.INTERSECTION_VARIANTS
    if tree["op"] != "subtract" and tree.get("variant", "clamp") not in variants:
        raise loc.error(path + ("variant",), f"unknown variant {tree['variant']!r}; expected one of {variants}")
    for j, a in enumerate(args):
        _check_tree(a, names, path + ("args", j), loc)


# building helpers ----------------------------------------------------------------

def _resolve_node(v, dv: T.DesignVector):
    if isinstance(v, list):
        return [_resolve_node(x, dv) for x in v]
    if _is_ref(v):
        return dv.node(v[1:])
    return v


def _resolve_value(v, vals: dict):
    if isinstance(v, list):
        return [_resolve_value(x, vals) for x in v]
    if _is_ref(v):
        return vals[v[1:]]
    return v


def _fourier(grid, decl, p, dv, nl) -> S.ShapeExpr:
    vals = {d: float(dv.values[dv.index(d)]) for d in dv.names}
    raw = decl.params
    try:
        fp = S.FourierPolarParams(_resolve_value(raw["r0"], vals), _resolve_value(raw.get("c", []), vals),
                                  _resolve_value(raw.get("s", []), vals),
                                  (_resolve_value(raw.get("x0", 0.0), vals), _resolve_value(raw.get("y0", 0.0), vals)))
    except KeyError as exc:
        raise ConfigError(f"fourier_polar: missing parameter {exc.args[0]!r}") from None
    fp.validate()
    r0, cs, ss = p["r0"], p.get("c", []), p.get("s", [])
    shape = S.general_polar(grid, lambda th: S.fourier_radius(th, r0, cs, ss), p.get("x0", 0.0), p.get("y0", 0.0), nl)
    shape.kind = "fourier_polar"
    return shape


def _union_leaves(tree):
    if isinstance(tree, str):
        return [tree]
    if tree["op"] != "union":
        return None
    out = []
    for a in tree["args"]:
        sub = _union_leaves(a)
        if sub is None:
            return None
        out += sub
    return out


def _apply_transform(vertices: np.ndarray, t: dict | None) -> np.ndarray:
    if not t:
        return vertices
    rot = float(t.get("rotation", 0.0))
    ax, ay = t.get("aspect", (1.0, 1.0))
    sx, sy = t.get("shift", (0.0, 0.0))
    cx, cy = t.get("center", (0.0, 0.0))
    c, s = np.cos(rot), np.sin(rot)
    px, py = (vertices[:, 0] - cx) * ax, (vertices[:, 1] - cy) * ay
    return np.column_stack([c * px - s * py + cx + sx, s * px + c * py + cy + sy])


def _exact_shape(decl: ShapeDecl, vals: dict) -> ExactShape:
    p = {k: _resolve_value(v, vals) for k, v in decl.params.items()}
    kind, n = decl.kind, EXACT_POLYGON_VERTICES
    th = 2 * np.pi * np.arange(n) / n
    try:
        if kind == "rect2d":
            verts = np.array([[p["x0"], p["y0"]], [p["x1"], p["y0"]], [p["x1"], p["y1"]], [p["x0"], p["y1"]]], float)
        elif kind == "poly2d":
            verts = np.column_stack([p["xs"], p["ys"]]).astype(float)
        elif kind == "circ2d":
            if not decl.transform:
                return ExactShape.circle(p["x0"], p["y0"], p["r"])
            verts = np.column_stack([p["x0"] + p["r"] * np.cos(th), p["y0"] + p["r"] * np.sin(th)])
        elif kind == "polar2d":
            r = p["r"] * (1 + p["delta"] * np.cos(int(p.get("alpha", 4)) * th))
            verts = np.column_stack([p["x0"] + r * np.cos(th), p["y0"] + r * np.sin(th)])
        elif kind == "fourier_polar":
            fp = S.FourierPolarParams(p["r0"], p.get("c", []), p.get("s", []), (p.get("x0", 0.0), p.get("y0", 0.0)))
            verts = fp.polygon(n)
        else:
            raise ConfigError(f"shape kind {kind!r} has no exact counterpart")
    except KeyError as exc:
        raise ConfigError(f"{kind}: missing parameter {exc.args[0]!r}") from None
    return ExactShape.polygon(_apply_transform(verts, decl.transform))


# experiments ---------------------------------------------------------------------

def testbed_from_experiment(exp: dict | None, loc: Located | None = None):
    """Instantiate the testbed named in an ``experiment`` block."""
    from . import testbeds as TB

    loc = loc or Located(None)
    if not exp:
        raise loc.error(("experiment",), "missing experiment block")
    if "objective" not in exp:
        raise loc.error(("experiment", "objective"), "missing objective")
    kinds = {"taper": ("mode", TB.TaperConfig, TB.TaperTestbed),
             "grating": ("gaussian", TB.GratingConfig, TB.GratingTestbed)}
    name = exp.get("testbed")
    if name not in kinds:
        raise loc.error(("experiment", "testbed"), f"unknown testbed {name!r}; expected one of {sorted(kinds)}")
    objective, cfg_cls, tb_cls = kinds[name]
    obj = exp["objective"]
    if not isinstance(obj, dict) or obj.get("kind") != objective:
        raise loc.error(("experiment", "objective"), f"the {name} testbed uses objective kind {objective!r}")
    fields = {f.name for f in dataclasses.fields(cfg_cls)}
    params = dict(exp.get("params", {}) or {})
    bad = set(params) - fields
    if bad:
        raise loc.error(("experiment", "params", sorted(bad)[0]), "unknown testbed parameter")
    extra = {k: v for k, v in obj.items() if k != "kind"}
    bad = set(extra) - fields
    if bad:
        raise loc.error(("experiment", "objective", sorted(bad)[0]), "unknown objective parameter")
    return tb_cls(cfg_cls(**params, **extra))
