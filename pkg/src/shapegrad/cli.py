"""``shapegrad`` command-line front end."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import optimize as OPT
from . import raster as R
from . import studies as ST
from .config import Located, SceneConfig, testbed_from_experiment
from .errors import ConfigError, ContractError, NumericError, ValidationError
from .grid import MaterialGrid
from .nonlin import KINDS

log = logging.getLogger("shapegrad")

THREADS_ENV = "AUTODIFFGEO_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


# artifacts --------------------------------------------------------------------

def write_pgm(path, values, lo=None, hi=None) -> None:
    """16-bit binary graymap; ``lo``/``hi`` map to black/white (default: data range)."""
    a = np.asarray(values, float)
    lo = float(a.min()) if lo is None else lo
    hi = float(a.max()) if hi is None else hi
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    img = np.clip(np.rint((a - lo) * scale), 0, 65535).astype(">u2")
    # row 0 of the array is the lowest y; images are stored top row first
    img = img[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode())
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w)[::-1].astype(np.uint16)


def write_signed_pgm(path, values) -> None:
    a = np.asarray(values, float)
    m = float(np.abs(a).max()) or 1.0
    write_pgm(path, a, -m, m)


def write_rows(path, rows, fields=None) -> None:
    if fields is None:
        fields = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load(args) -> SceneConfig:
    return SceneConfig.load(args.config)


# commands ---------------------------------------------------------------------

def cmd_rasterize(args) -> int:
    cfg = _load(args)
    out = _out(args)
    eb, es = cfg.materials
    mode = args.mode
    if mode == "exact":
        mat = MaterialGrid(eb + (es - eb) * cfg.exact_fraction(), cfg.grid, (eb, es))
    elif mode == "oneshot" or mode.startswith("supersample"):
        shape, dv = cfg.build()
        if mode == "oneshot":
            mat = R.rasterize_oneshot(shape, dv.values, materials=(eb, es))
        else:
            try:
                q = int(mode.split(":", 1)[1])
            except (IndexError, ValueError):
                raise ConfigError(f"supersample mode needs an integer factor, e.g. supersample:4 (got {mode!r})") from None
            mat = R.rasterize_supersampled(shape, dv.values, q, materials=(eb, es))
    else:
        raise ConfigError(f"unknown mode {mode!r}; expected oneshot, supersample:q or exact")
    mat.to_csv(out / "material.csv")
    write_pgm(out / "material.pgm", mat.values, min(eb, es), max(eb, es))
    log.info("wrote %s", out / "material.csv")
    return EXIT_OK


def cmd_mse_study(args) -> int:
    cfg = _load(args)
    out = _out(args)
    functions = ST.check_functions(args.functions.split(","))
    ks = ST.parse_sweep(args.k_sweep)
    shape, dv = cfg.build()
    truth = MaterialGrid(cfg.exact_fraction(), cfg.grid)
    res = ST.mse_study(lambda nl: cfg.build(nl)[0], dv.values, truth, functions, ks)
    write_rows(out / "mse.csv", res.rows, ["function", "k_rel", "k", "mse"])
    write_rows(out / "best.csv", [res.best[f] for f in functions], ["function", "k_rel", "k", "mse"])
    for name, m in res.maps.items():
        write_signed_pgm(out / f"{name}.pgm", m)
    for f in functions:
        log.info("%-9s best k dx = %.4g  mse = %.3e", f, res.best[f]["k_rel"], res.best[f]["mse"])
    return EXIT_OK


def cmd_jacfit(args) -> int:
    cfg = _load(args)
    out = _out(args)
    functions = ST.check_functions(args.functions.split(","))
    ks = ST.parse_sweep(args.k_sweep)
    _, dv = cfg.build()
    res = ST.jacfit_study(lambda nl: cfg.build(nl)[0], dv, args.param, cfg.exact_fraction, functions, ks,
                          cfg.grid.dx, args.h)
    fields = ["function", "k_rel", "k", "slope", "rmse"]
    write_rows(out / "jacfit.csv", res.rows, fields)
    write_rows(out / "best.csv", [res.best[f] for f in functions], fields)
    for name, m in res.maps.items():
        write_signed_pgm(out / f"{name}.pgm", m)
        np.savetxt(out / f"{name}.csv", m, delimiter=",", fmt="%.17g")
    for f in functions:
        b = res.best[f]
        log.info("%-9s min-RMSE k dx = %.4g  slope = %.4f  rmse = %.4g", f, b["k_rel"], b["slope"], b["rmse"])
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _load(args)
    out = _out(args)
    tb = testbed_from_experiment(cfg.experiment, Located(Path(args.config).read_text(), args.config))
    exp = cfg.experiment
    stop = OPT.StopRules(**(exp.get("stop") or {}))
    if args.max_iter is not None:
        stop.max_iter = args.max_iter
    opts = OPT.LBFGSOptions(**(exp.get("lbfgs") or {}))
    params = tb.params
    noise = float(exp.get("initial_noise", 0.0))
    if noise > 0:
        rng = np.random.default_rng(args.seed)
        params = params.with_values(params.clip(params.values + noise * rng.uniform(-1, 1, params.n)))

    def progress(row, x):
        log.info("iter %3d  f = %.6f  (%.3f dB)", row["iteration"], -row["f"], OPT.efficiency_db(-row["f"]))

    run = OPT.run(tb, args.mode, stop, opts, params, progress)
    run.write_csv(out / "history.csv")
    write_rows(out / "params.csv", [{"name": n, "value": float(v)} for n, v in zip(run.params.names, run.params.values)],
               ["name", "value"])
    eps = tb.oneshot_eps(run.params.values) if args.mode == "prop1-ad" else tb.exact_eps(run.params.values)
    mat = MaterialGrid(eps, tb.grid, (tb.eps_b, tb.eps_s))
    mat.to_csv(out / "final_eps.csv")
    write_pgm(out / "final_eps.pgm", eps, tb.eps_b, tb.eps_s)
    summary = {"mode": run.mode, "status": run.status, "error": run.error, "seed": args.seed,
               "f_initial": run.history[0]["f"] if run.history else None,
               "f_final": run.history[-1]["f"] if run.history else None}
    if args.convert and run.status != "failed":
        refined = OPT.convert_and_refine(run, tb, OPT.StopRules(max_iter=args.refine_iter), opts)
        refined.write_csv(out / "refine_history.csv")
        summary.update({k: refined.extra[k] for k in ("f_oneshot", "f_converted", "penalty", "penalty_db")})
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if run.status == "failed":
        raise NumericError(run.error or "optimization failed")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .testbeds import GratingConfig, GratingTestbed

    out = _out(args)
    if args.testbed != "grating":
        raise ConfigError(f"unknown bench testbed {args.testbed!r}; only 'grating' is available")
    ns = [int(n) for n in args.n_list.split(",")]
    bad = [n for n in ns if n < 7 or (n - 4) % 3]
    if bad:
        raise ConfigError(f"grating sizes must be n = 3 N_g + 4 with N_g >= 1, got {bad}")

    def make(n):
        return GratingTestbed(GratingConfig(n_gratings=(n - 4) // 3, length=args.length))

    rows = OPT.bench_gradient_scaling(make, ns, args.repeats)
    write_rows(out / "bench.csv", rows, ["n", "t_fd", "t_fd_iqr", "t_ad", "t_ad_iqr", "ratio", "cosine"])
    if len(rows) > 1:
        n = [r["n"] for r in rows]
        log.info("log-log slopes: fd %.3f  ad %.3f", OPT.loglog_slope(n, [r["t_fd"] for r in rows]),
                 OPT.loglog_slope(n, [r["t_ad"] for r in rows]))
    return EXIT_OK


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapegrad", description="Differentiable shape rasterization experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", help="scene/experiment YAML file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("rasterize", help="rasterize a scene")
    common(sp)
    sp.add_argument("--mode", default="oneshot", help="oneshot | supersample:q | exact")
    sp.set_defaults(func=cmd_rasterize)

    sp = sub.add_parser("mse-study", help="smoothing MSE against the exact raster, per function and k")
    common(sp)
    sp.add_argument("--functions", default=",".join(KINDS))
    sp.add_argument("--k-sweep", default="0.25:4:30", help="lo:hi:steps of k dx (geometric)")
    sp.set_defaults(func=cmd_mse_study)

    sp = sub.add_parser("jacfit", help="fit AD material Jacobian columns to exact finite differences")
    common(sp)
    sp.add_argument("--param", required=True)
    sp.add_argument("--functions", default=",".join(KINDS))
    sp.add_argument("--k-sweep", default="0.5:8:20", help="lo:hi:steps of k dx (geometric)")
    sp.add_argument("--h", type=float, default=1e-6, help="finite-difference step")
    sp.set_defaults(func=cmd_jacfit)

    sp = sub.add_parser("optimize", help="run a testbed optimization")
    common(sp)
    sp.add_argument("--mode", default="prop1-ad", choices=["prop1-ad", "prop2-ad", "fd-baseline"])
    sp.add_argument("--max-iter", type=int, default=None)
    sp.add_argument("--convert", action="store_true", help="exact conversion and FD refinement afterwards")
    sp.add_argument("--refine-iter", type=int, default=5)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("bench", help="gradient-assembly timing versus design size")
    common(sp, config=False)
    sp.add_argument("--testbed", default="grating")
    sp.add_argument("--n-list", default="13,34,64,94")
    sp.add_argument("--repeats", type=int, default=10)
    sp.add_argument("--length", type=float, default=32.0, help="fixed domain length in um")
    sp.set_defaults(func=cmd_bench)
    return p


def _thread_limit(command: str):
    if command == "bench":
        return threadpool_limits(1)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return threadpool_limits(n)
    return nullcontext()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    np.random.seed(args.seed)
    try:
        with _thread_limit(args.command):
            return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
