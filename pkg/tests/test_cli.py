import csv
import json
from pathlib import Path

import numpy as np
import pytest

from shapegrad import cli
from shapegrad.errors import NumericError
from shapegrad.grid import MaterialGrid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

POLY_SCENE = """\
grid: {extent: [-1.0, 1.0, -1.0, 1.0], dx: 0.1}
materials: [1.0, 3.0]
shapes:
  - {name: t, kind: poly2d, params: {xs: [-0.55, 0.6, 0.05], ys: [-0.5, -0.35, 0.7]}}
compose: t
"""


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def poly_scene(tmp_path):
    p = tmp_path / "tri.yaml"
    p.write_text(POLY_SCENE)
    return p


def test_pgm_round_trip(tmp_path):
    a = np.arange(12.0).reshape(3, 4)
    cli.write_pgm(tmp_path / "a.pgm", a, 0.0, 11.0)
    back = cli.read_pgm(tmp_path / "a.pgm")
    assert back.shape == (3, 4)
    assert back[0, 0] == 0 and back[-1, -1] == 65535
    assert np.all(np.diff(back.ravel().astype(int)) > 0)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n4 3\n65535\n")


@pytest.mark.parametrize("mode", ["oneshot", "supersample:3", "exact"])
def test_rasterize_modes(poly_scene, tmp_path, mode):
    out = tmp_path / mode.replace(":", "_")
    assert cli.main(["rasterize", str(poly_scene), "--mode", mode, "--out", str(out)]) == 0
    mat = MaterialGrid.from_csv(out / "material.csv")
    assert mat.values.shape == (20, 20)
    assert 1.0 <= mat.values.min() and mat.values.max() <= 3.0
    if mode == "exact":
        x = np.array([-0.55, 0.6, 0.05])
        y = np.array([-0.5, -0.35, 0.7])
        area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        assert ((mat.values - 1.0) / 2.0).sum() * 0.01 == pytest.approx(area, abs=1e-12)
    assert cli.read_pgm(out / "material.pgm").shape == (20, 20)


def test_rasterize_bad_mode_exit_2(poly_scene, tmp_path, capsys):
    assert cli.main(["rasterize", str(poly_scene), "--mode", "blurry", "--out", str(tmp_path)]) == 2
    assert "blurry" in capsys.readouterr().err


def test_config_error_exit_2_names_line(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(POLY_SCENE.replace("poly2d", "hexagon"))
    assert cli.main(["rasterize", str(p), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "bad.yaml:4:" in err and "hexagon" in err


def test_numeric_error_exit_3(monkeypatch, poly_scene, tmp_path, capsys):
    def boom(args):
        raise NumericError("non-finite objective")

    monkeypatch.setattr(cli, "cmd_rasterize", boom)
    assert cli.main(["rasterize", str(poly_scene), "--out", str(tmp_path)]) == 3
    assert "non-finite" in capsys.readouterr().err


def test_mse_study_single_step(tmp_path):
    out = tmp_path / "mse"
    assert cli.main(["mse-study", str(CONFIGS / "circ2d_mse.yaml"), "--functions", "sin,linear",
                     "--k-sweep", "1:1:1", "--out", str(out)]) == 0
    r = rows(out / "mse.csv")
    assert [x["function"] for x in r] == ["sin", "linear"]
    assert all(0 < float(x["mse"]) < 1e-2 for x in r)
    assert len(rows(out / "best.csv")) == 2
    assert (out / "error_sin.pgm").exists()


def test_jacfit_rect_is_exact(tmp_path):
    out = tmp_path / "jf"
    assert cli.main(["jacfit", str(CONFIGS / "rect_jacfit.yaml"), "--param", "x1", "--functions", "linear",
                     "--k-sweep", "1:1:1", "--h", "1e-3", "--out", str(out)]) == 0
    (r,) = rows(out / "jacfit.csv")
    assert float(r["slope"]) == pytest.approx(1.0, abs=1e-12)
    assert float(r["rmse"]) < 1e-12
    ad = np.loadtxt(out / "ad_linear.csv", delimiter=",")
    fd = np.loadtxt(out / "fd.csv", delimiter=",")
    assert np.allclose(ad, fd, atol=1e-9)


def test_jacfit_unknown_param_exit_2(tmp_path, capsys):
    assert cli.main(["jacfit", str(CONFIGS / "rect_jacfit.yaml"), "--param", "zz", "--out", str(tmp_path)]) == 2
    assert "zz" in capsys.readouterr().err


def test_bad_sweep_and_function_exit_2(tmp_path):
    cfg = str(CONFIGS / "circ2d_mse.yaml")
    assert cli.main(["mse-study", cfg, "--k-sweep", "4:1:3", "--out", str(tmp_path)]) == 2
    assert cli.main(["mse-study", cfg, "--functions", "tanh", "--out", str(tmp_path)]) == 2


def test_optimize_without_objective_exit_2(tmp_path, capsys):
    p = tmp_path / "exp.yaml"
    p.write_text("experiment:\n  testbed: taper\n  stop: {max_iter: 1}\n")
    assert cli.main(["optimize", str(p), "--out", str(tmp_path)]) == 2
    assert "objective" in capsys.readouterr().err


def test_optimize_short_run_writes_artifacts(tmp_path):
    out = tmp_path / "opt"
    assert cli.main(["optimize", str(CONFIGS / "grating.yaml"), "--max-iter", "2", "--out", str(out)]) == 0
    hist = rows(out / "history.csv")
    assert len(hist) >= 2
    f = [float(h["f"]) for h in hist]
    assert f[-1] >= f[0]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] in ("max_iter", "converged")
    assert (out / "final_eps.pgm").exists() and rows(out / "params.csv")


def test_bench_single_size(tmp_path):
    out = tmp_path / "bench"
    assert cli.main(["bench", "--n-list", "7", "--repeats", "1", "--length", "12", "--out", str(out)]) == 0
    (r,) = rows(out / "bench.csv")
    assert int(r["n"]) == 7
    assert float(r["t_fd"]) > 0 and float(r["t_ad"]) > 0 and float(r["t_fd_iqr"]) >= 0
    assert float(r["cosine"]) > 0.99


def test_bench_rejects_bad_sizes(tmp_path):
    assert cli.main(["bench", "--n-list", "8", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("value", ["zero", "0", "-2"])
def test_thread_env_validated(monkeypatch, poly_scene, tmp_path, value):
    monkeypatch.setenv(cli.THREADS_ENV, value)
    assert cli.main(["rasterize", str(poly_scene), "--out", str(tmp_path)]) == 2


def test_thread_env_accepted(monkeypatch, poly_scene, tmp_path):
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    assert cli.main(["rasterize", str(poly_scene), "--out", str(tmp_path)]) == 0
