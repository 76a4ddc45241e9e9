from pathlib import Path

import numpy as np
import pytest

from shapegrad.config import SceneConfig
from shapegrad.config import testbed_from_experiment as experiment_testbed
from shapegrad.errors import ConfigError
from shapegrad.raster import ExactShape, exact_average

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = """\
grid: {extent: [-1.0, 1.0, -1.0, 1.0], dx: 0.05}
materials: [1.0, 4.0]
design:
  - {name: w, value: 0.3, lower: 0.1, upper: 0.8}
shapes:
  - {name: a, kind: rect2d, params: {x0: -0.5, y0: -0.2, x1: $w, y1: 0.2}}
  - {name: b, kind: circ2d, params: {r: 0.2, x0: 0.5, y0: 0.6}, nonlinearity: {kind: sin, k_rel: 2.0}}
compose: {op: union, variant: clamp, args: [a, b]}
"""


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_round_trip(path):
    cfg = SceneConfig.load(path)
    again = SceneConfig.from_text(cfg.dump())
    assert again.to_dict() == cfg.to_dict()
    assert SceneConfig.from_text(again.dump()).dump() == again.dump()


def test_design_reference_is_differentiable():
    cfg = SceneConfig.from_text(BASE)
    shape, dv = cfg.build()
    assert dv.names == ["w"]
    a = shape.evaluate([0.3]).sum()
    b = shape.evaluate([0.4]).sum()
    assert b - a == pytest.approx(0.1 * 0.4 / 0.05 ** 2, rel=1e-9)


def test_exact_scene_matches_oracle():
    cfg = SceneConfig.from_text(BASE)
    got = cfg.exact_fraction()
    g = cfg.grid
    want = (exact_average(ExactShape.rectangle(-0.5, -0.2, 0.3, 0.2), g).values
            + exact_average(ExactShape.circle(0.5, 0.6, 0.2), g).values)
    assert np.allclose(got, want, atol=1e-14)
    moved = cfg.exact_fraction([0.5])
    assert moved.sum() > got.sum()


def test_exact_scene_rejects_non_union():
    text = BASE.replace("{op: union, variant: clamp, args: [a, b]}", "{op: subtract, args: [a, b]}")
    cfg = SceneConfig.from_text(text)
    cfg.build()
    with pytest.raises(ConfigError, match="union"):
        cfg.exact_scene()


@pytest.mark.parametrize("old,new,message,line", [
    ("kind: circ2d", "kind: blob", "blob", 7),
    ("x1: $w", "x1: $width", "width", 6),
    ("args: [a, b]", "args: [a, c]", "undeclared shape 'c'", 8),
    ("variant: clamp", "variant: fuzzy", "fuzzy", 8),
    ("value: 0.3", "value: 0.9", "outside its bounds", 4),
    ("{kind: sin, k_rel: 2.0}", "{kind: sin}", "exactly one of k or k_rel", 7),
    ("name: b,", "name: a,", "duplicate shape", 7),
])
def test_field_diagnostics_name_the_line(old, new, message, line):
    text = BASE.replace(old, new)
    with pytest.raises(ConfigError) as exc:
        SceneConfig.from_text(text, "scene.yaml")
    assert message in str(exc.value)
    assert f"scene.yaml:{line}:" in str(exc.value)


def test_yaml_syntax_error_reports_line():
    with pytest.raises(ConfigError, match=r"bad.yaml:2"):
        SceneConfig.from_text("grid: {dx: 1\nshapes: [\n", "bad.yaml")


def test_missing_grid_and_unknown_key():
    with pytest.raises(ConfigError, match="grid"):
        SceneConfig.from_text("shapes: []\n")
    with pytest.raises(ConfigError, match="unknown key"):
        SceneConfig.from_text(BASE + "colour: red\n")


def test_transform_applies_to_exact_and_smooth():
    text = BASE.replace("{name: a, kind: rect2d, params: {x0: -0.5, y0: -0.2, x1: $w, y1: 0.2}}",
                        "{name: a, kind: rect2d, params: {x0: -0.5, y0: -0.2, x1: $w, y1: 0.2}, "
                        "transform: {rotation: 0.3, center: [0.0, 0.0]}}")
    cfg = SceneConfig.from_text(text)
    shape, dv = cfg.build()
    exact = cfg.exact_fraction()
    smooth = shape.evaluate(dv.values)
    assert abs(exact.sum() - smooth.sum()) * 0.05 ** 2 < 2e-3


def test_experiment_requires_objective():
    with pytest.raises(ConfigError, match="objective"):
        experiment_testbed({"testbed": "taper"})
    with pytest.raises(ConfigError, match="gaussian"):
        experiment_testbed({"testbed": "grating", "objective": {"kind": "mode"}})
    with pytest.raises(ConfigError, match="testbed"):
        experiment_testbed({"testbed": "ring", "objective": {"kind": "mode"}})
    with pytest.raises(ConfigError, match="unknown testbed parameter"):
        experiment_testbed({"testbed": "taper", "objective": {"kind": "mode"}, "params": {"colour": 1}})


def test_primitive_parameters_checked_at_load():
    with pytest.raises(ConfigError, match=r"scene.yaml:6: shapes\[0\].params: rect2d needs parameter 'y1'"):
        SceneConfig.from_text(BASE.replace(", y1: 0.2}}", "}}"), "scene.yaml")
    with pytest.raises(ConfigError, match="unknown circ2d parameter"):
        SceneConfig.from_text(BASE.replace("r: 0.2,", "r: 0.2, radius: 1,"))
