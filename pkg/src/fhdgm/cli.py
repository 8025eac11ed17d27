"""``fhdgm`` command line: simulate, partition, fit, validate, krige, report.

Every flag maps onto a config key (``--k`` is ``partition.k``); flags win
over the config file and the merged values go into ``run_manifest.txt``.
Exit codes: 0 success, 1 usage or data error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import platform
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from .basis import BasisSpec, BasisTriple
from .config import RunConfig, config_hash, dump, load_config, merge, sub_seed
from .errors import (
    ChiSquareTestError,
    FhdgmError,
    InitializationError,
    NumericalError,
    UsageError,
)
from .estimation import EmOptions, FittedModel, ModelParams, em_fit, make_layout, simulate
from .inference import beta_chi2_test, beta_confidence_bands, sigma_confidence_bands, varcov_truncated
from .ingest import CsvSchema, ProfileDataset, parse_csv, split_validation, write_csv
from .partition import Partitioning, fit_kmeans
from .predict import KrigingGrid, KrigingOptions, krige, validate

log = logging.getLogger("fhdgm")

NUMERICAL = (NumericalError, InitializationError, ChiSquareTestError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x) -> str:
    x = float(x)
    return "NaN" if np.isnan(x) else repr(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _read_csv(path: Path) -> list[dict[str, str]]:
    if not path.is_file():
        raise UsageError(f"missing artifact: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

class Run:
    """State shared by one CLI invocation: config, output dir, timings."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.timings: dict[str, float] = {}
        self.extra: dict[str, str] = {}

    def timed(self, phase: str, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.timings[phase] = self.timings.get(phase, 0.0) + time.perf_counter() - t0

    def manifest(self) -> None:
        lines = [
            f"command={self.command}",
            f"config_hash={config_hash(self.cfg.raw)}",
            f"seed={self.cfg.seed}",
            f"workers={self.cfg.workers}",
            f"fhdgm={__version__}",
            f"python={platform.python_version()}",
            f"numpy={np.__version__}",
            f"scipy={scipy.__version__}",
        ]
        lines += [f"{k}={v}" for k, v in self.extra.items()]
        lines += [f"time.{k}={v:.6f}" for k, v in self.timings.items()]
        lines.append("[config]")
        text = "\n".join(lines) + "\n" + dump(self.cfg.raw)
        (self.out / "run_manifest.txt").write_text(text, encoding="utf-8")


def _schema(cfg: RunConfig) -> CsvSchema:
    return CsvSchema(unit=cfg.unit, domain=cfg.domain, T=cfg.T, **cfg.schema)


def _load_data(cfg: RunConfig) -> ProfileDataset:
    if not cfg.data_path:
        raise UsageError("no data file given (--data or data.path)")
    if not Path(cfg.data_path).is_file():
        raise UsageError(f"data file not found: {cfg.data_path}")
    return parse_csv(cfg.data_path, _schema(cfg))


def _bases(cfg: RunConfig, domain) -> BasisTriple:
    rng = cfg.basis_range or tuple(domain)
    if cfg.basis_kind == "fourier":
        return BasisTriple.fourier(rng, cfg.p_z, cfg.p_beta, cfg.p_sigma)
    bt = BasisTriple.bspline(rng, cfg.basis_order, cfg.p_z, cfg.p_beta, cfg.p_sigma)
    if cfg.knots:
        # explicit knots replace the equally spaced latent basis
        if cfg.knots[0] != rng[0] or cfg.knots[-1] != rng[1]:
            raise UsageError(f"basis.knots must start at {rng[0]} and end at {rng[1]}")
        bt = BasisTriple(BasisSpec.bspline(cfg.basis_order, cfg.knots), bt.beta, bt.sigma)
    return bt


def _partitioning(cfg: RunConfig, ds: ProfileDataset) -> Partitioning | None:
    if cfg.k == 1:
        return None
    if cfg.lam is None:
        raise UsageError("partitioning with k > 1 needs an explicit --lambda")
    return fit_kmeans(ds.coords(), cfg.k, cfg.lam, cfg.trials, sub_seed(cfg.seed, "kmeans"), ds.unit, cfg.workers)


def _param_rows(params: ModelParams, names: Sequence[str]):
    for (label, i), value in zip(params.labels(names), params.vector()):
        yield label, i, float(value)


def _write_fit(run: Run, ds: ProfileDataset, fit) -> None:
    out = run.out
    _write_csv(out / "params.csv", ["name", "index", "estimate"], _param_rows(fit.params, ds.covariate_names))
    _write_csv(out / "loglik_trace.csv", ["iteration", "loglik"],
               ((i, float(v)) for i, v in enumerate(fit.loglik_trace)))
    meta = [
        f"iterations={fit.iterations}",
        f"exit_reason={fit.exit_reason}",
        f"loglik={_fmt(fit.loglik)}",
        f"n={ds.n}",
        f"T={ds.T}",
        f"partitions={1 if fit.model.partitions is None else fit.model.partitions.k}",
    ]
    meta += [f"time.{k}={v:.6f}" for k, v in fit.timings.items()]
    (out / "fit_meta.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")
    run.extra.update(iterations=str(fit.iterations), exit_reason=fit.exit_reason)
    if fit.model.partitions is not None:
        _write_partition(out / "partition.csv", fit.model.partitions)


def _write_partition(path: Path, part: Partitioning) -> None:
    _write_csv(path, ["site_index", "cluster", "centroid_lat", "centroid_lon"],
               ((i, int(c), float(part.centroids[c, 0]), float(part.centroids[c, 1]))
                for i, c in enumerate(part.assignment)))


def _read_params(fit_dir: Path) -> ModelParams:
    rows = _read_csv(fit_dir / "params.csv")
    groups: dict[str, list[float]] = {"c_eps": [], "c_beta": [], "g": [], "v": [], "theta": []}
    for r in rows:
        name = r["name"].split("[", 1)[0]
        if name not in groups:
            raise UsageError(f"unknown parameter {r['name']!r} in params.csv")
        groups[name].append(float(r["estimate"]))
    try:
        return ModelParams(**groups)
    except FhdgmError as exc:
        raise UsageError(f"invalid params.csv: {exc}") from None


def _fit(run: Run, ds: ProfileDataset, bases: BasisTriple):
    cfg = run.cfg
    part = run.timed("partition", _partitioning, cfg, ds)
    opts = EmOptions(cfg.exit_toll_par, cfg.exit_toll_loglike, cfg.max_iterations, part, cfg.workers, cfg.seed)
    fit = run.timed("em", em_fit, ds, bases, None, opts)
    _write_fit(run, ds, fit)
    return fit


def _varcov(run: Run, ds: ProfileDataset, bases: BasisTriple, fit) -> None:
    cfg = run.cfg
    vc = run.timed("varcov", varcov_truncated, fit.model, cfg.delta, workers=cfg.workers, method=cfg.varcov_method)
    labels = [f"{name}:{i}" for name, i in vc.labels]
    _write_csv(run.out / "varcov.csv", ["param", *labels],
               ([lab, *map(float, row)] for lab, row in zip(labels, vc.matrix)))
    report = beta_chi2_test(vc, fit.params, ds.covariate_names)
    _write_csv(run.out / "chi2.csv", ["covariate", "statistic", "df", "p_value"],
               ((r.name, float(r.statistic), r.df, float(r.p_value)) for r in report.rows))
    h = np.linspace(bases.range[0], bases.range[1], cfg.band_points)
    level_cols = [f"{side}_{lev:g}" for lev in cfg.levels for side in ("lo", "hi")]
    bands = beta_confidence_bands(vc, fit.params, bases.beta, h, cfg.levels, ds.covariate_names)
    _write_csv(run.out / "beta_bands.csv", ["h", "covariate", "estimate", "se", *level_cols],
               ((float(r[0]), r[1], *map(float, r[2:])) for r in bands.rows()))
    sb = sigma_confidence_bands(vc, fit.params, bases.sigma, h, cfg.levels)
    _write_csv(run.out / "sigma_bands.csv", ["h", "function", "estimate", "se", *level_cols],
               ((float(r[0]), r[1], *map(float, r[2:])) for r in sb.rows()))
    run.extra.update(t_star=str(vc.t_star), truncated=str(vc.truncated).lower(),
                     delta=repr(vc.delta_used), varcov_method=vc.method)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(run: Run) -> None:
    cfg = run.cfg
    s = cfg.simulate
    if len(s["extent"]) != 4:
        raise UsageError("simulate.extent needs four numbers y0,y1,x0,x1")
    if not s["h"]:
        raise UsageError("simulate.h must list at least one point")
    layout = run.timed(
        "layout", make_layout, s["n_sites"], s["T"], s["h"], cfg.domain, cfg.unit, tuple(s["extent"]),
        s["covariates"], sub_seed(cfg.seed, "layout"), s["missing"],
    )
    bases = _bases(cfg, layout.domain)
    try:
        truth = ModelParams(s["c_eps"], s["c_beta"], s["g"], s["v"], s["theta"])
    except FhdgmError as exc:
        raise UsageError(f"invalid simulation parameters: {exc}") from None
    ds = run.timed("simulate", simulate, layout, bases, truth, sub_seed(cfg.seed, "simulate"))
    target = Path(s["output"]) if s["output"] else run.out / "data.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, target, _schema(cfg))
    _write_csv(run.out / "truth.csv", ["name", "index", "estimate"], _param_rows(truth, ds.covariate_names))
    run.extra["data_written"] = str(target)
    print(f"wrote {target} (n={ds.n}, T={ds.T}, records={len(ds.records)})")


def cmd_partition(run: Run) -> None:
    cfg = run.cfg
    ds = _load_data(cfg)
    if cfg.lam is None:
        raise UsageError("partition needs an explicit --lambda")
    part = run.timed("partition", fit_kmeans, ds.coords(), cfg.k, cfg.lam, cfg.trials,
                     sub_seed(cfg.seed, "kmeans"), ds.unit, cfg.workers)
    _write_partition(run.out / "partition.csv", part)
    run.extra["objective"] = repr(part.objective)
    print(f"objective={part.objective!r} trial={part.trial} sizes={','.join(map(str, part.sizes))}")


def cmd_fit(run: Run) -> None:
    ds = run.timed("ingest", _load_data, run.cfg)
    bases = _bases(run.cfg, ds.domain)
    fit = _fit(run, ds, bases)
    if run.cfg.varcov:
        _varcov(run, ds, bases, fit)
    print(f"iterations={fit.iterations} exit_reason={fit.exit_reason} loglik={fit.loglik!r}")


def cmd_validate(run: Run) -> None:
    cfg = run.cfg
    ds = run.timed("ingest", _load_data, cfg)
    v = cfg.validate
    if not v["val_sites"]:
        raise UsageError("validate needs --val-sites")
    est, val = split_validation(ds, v["val_sites"])
    bases = _bases(cfg, ds.domain)
    fit = _fit(run, est, bases)
    opts = KrigingOptions(v["nn_size"], None, cfg.workers, False)
    rep = run.timed("validate", validate, fit.model, val, v["bins"], opts)
    original = [int(i) for i in val.origin]
    _write_csv(run.out / "mse_t.csv", ["t", "n", "mse"],
               ((int(t), int(n), float(m)) for t, n, m in zip(rep.t, rep.n_t, rep.mse_t)))
    _write_csv(run.out / "mse_s.csv", ["site_index", "n", "mse"],
               ((original[s], int(n), float(m)) for s, n, m in zip(rep.site, rep.n_s, rep.mse_s)))
    _write_csv(run.out / "mse_h.csv", ["bin", "h_lo", "h_hi", "h_bar", "n", "mse"],
               ((r, float(rep.bin_edges[r]), float(rep.bin_edges[r + 1]), float(rep.h_bar[r]), int(rep.n_h[r]),
                 float(rep.mse_h[r])) for r in range(len(rep.n_h))))
    rows = [("t", int(t), float(r)) for t, r in zip(rep.t, rep.r2_t)]
    rows += [("site", original[s], float(r)) for s, r in zip(rep.site, rep.r2_s)]
    rows += [("bin", b, float(r)) for b, r in enumerate(rep.r2_h)]
    _write_csv(run.out / "r2.csv", ["by", "key", "r2"], rows)
    run.extra["mse"] = repr(rep.mse)
    print(f"validation MSE={rep.mse!r} over {int(rep.n_t.sum())} observations")


def _targets(cfg: RunConfig, unit: str) -> KrigingGrid:
    kc = cfg.krige
    if bool(kc["grid"]) == bool(kc["targets"]):
        raise UsageError("krige needs exactly one of --grid or --targets")
    if kc["grid"]:
        try:
            a, b = kc["grid"].split(",")
            lat = [float(x) for x in a.split(":")]
            lon = [float(x) for x in b.split(":")]
            if len(lat) != 3 or len(lon) != 3:
                raise ValueError
        except ValueError:
            raise UsageError(f"--grid must look like lat0:lat1:step,lon0:lon1:step, got {kc['grid']!r}") from None
        return KrigingGrid.regular(*lat, *lon, unit=unit)
    rows = _read_csv(Path(kc["targets"]))
    ycol, xcol = cfg.schema["coord_y"], cfg.schema["coord_x"]
    try:
        coords = [[float(r[ycol]), float(r[xcol])] for r in rows]
    except (KeyError, ValueError):
        raise UsageError(f"targets file needs numeric {ycol!r} and {xcol!r} columns") from None
    return KrigingGrid(np.array(coords), unit)


def _target_covariates(path: str, grid: KrigingGrid, t, h, names, prefix: str) -> np.ndarray:
    """Long CSV with columns target, time, h and one column per covariate."""
    rows = _read_csv(Path(path))
    X = np.full((grid.m, len(t), len(h), len(names)), np.nan)
    t_pos = {int(v): i for i, v in enumerate(t)}
    h_pos = {float(v): i for i, v in enumerate(h)}
    for r in rows:
        try:
            i, k, l = int(r["target"]), t_pos[int(r["time"])], h_pos[float(r["h"])]
            X[i, k, l] = [float(r[prefix + n]) for n in names]
        except (KeyError, ValueError, IndexError):
            raise UsageError(f"bad covariate row {r}") from None
    if np.isnan(X).any():
        raise UsageError("covariates file does not cover every (target, t, h)")
    return X


def cmd_krige(run: Run) -> None:
    cfg = run.cfg
    kc = cfg.krige
    ds = run.timed("ingest", _load_data, cfg)
    bases = _bases(cfg, ds.domain)
    fit_dir = Path(kc["fit_dir"] or cfg.out)
    params = _read_params(fit_dir)
    fitted = FittedModel(ds, bases, params)
    grid = _targets(cfg, ds.unit)
    h = np.array(kc["h"]) if kc["h"] else np.linspace(ds.domain[0], ds.domain[1], 11)
    t = np.array(kc["t"]) if kc["t"] else np.arange(1, ds.T + 1)
    X = None
    if kc["covariates"]:
        X = _target_covariates(kc["covariates"], grid, t, h, ds.covariate_names, cfg.schema["covariate_prefix"])
    opts = KrigingOptions(kc["nn_size"], kc["block_size"], cfg.workers, not kc["no_varcov"])
    res = run.timed("krige", krige, fitted, grid, opts, h, t, X)
    header = ["lat", "lon", "t", "h", "f_hat"] + ([] if kc["no_varcov"] else ["var_f"])
    width = len(header)
    _write_csv(run.out / "kriging.csv", header,
               ((float(a), float(b), t_, float(h_), float(f), float(v))[:width] for a, b, t_, h_, f, v in res.rows()))
    if grid.shape is not None:
        run.extra["grid_shape"] = f"{grid.shape[0]}x{grid.shape[1]}"
    print(f"kriged {grid.m} targets x {t.size} times x {h.size} points")


def cmd_report(run: Run) -> None:
    cfg = run.cfg
    d = Path(cfg.krige["fit_dir"] or cfg.out)
    params = _read_csv(d / "params.csv")
    trace = _read_csv(d / "loglik_trace.csv")
    se = None
    if (d / "varcov.csv").is_file():
        vc = _read_csv(d / "varcov.csv")
        diag = [float(row[key]) for row, key in zip(vc, [k for k in vc[0] if k != "param"])]
        se = np.sqrt(np.maximum(diag, 0.0))
    lines = [f"{'parameter':<28}{'index':>6}{'estimate':>16}{'std.err':>14}"]
    for i, r in enumerate(params):
        s = "--" if se is None else f"{se[i]:.6g}"
        lines.append(f"{r['name']:<28}{int(r['index']):>6}{float(r['estimate']):>16.6g}{s:>14}")
    lines.append("")
    lines.append(f"log-likelihood trace ({len(trace)} values): first {float(trace[0]['loglik']):.6f}, "
                 f"last {float(trace[-1]['loglik']):.6f}")
    meta = d / "fit_meta.txt"
    if meta.is_file():
        for line in meta.read_text(encoding="utf-8").splitlines():
            if line.startswith(("iterations=", "exit_reason=")):
                lines.append(line)
    if (d / "chi2.csv").is_file():
        lines.append("")
        lines.append(f"{'covariate':<24}{'chi2':>14}{'df':>5}{'p-value':>12}")
        for r in _read_csv(d / "chi2.csv"):
            stat, p = float(r["statistic"]), float(r["p_value"])
            if np.isnan(stat):
                lines.append(f"{r['covariate']:<24}{'--':>14}{r['df']:>5}{'--':>12}")
            else:
                lines.append(f"{r['covariate']:<24}{stat:>14.4f}{r['df']:>5}{p:>12.4g}")
    print("\n".join(lines))


COMMANDS = {
    "simulate": cmd_simulate,
    "partition": cmd_partition,
    "fit": cmd_fit,
    "validate": cmd_validate,
    "krige": cmd_krige,
    "report": cmd_report,
}

# flag -> (config key, argparse kwargs)
_FLAGS = {
    "--data": ("data.path", {}),
    "--unit": ("data.unit", {}),
    "--seed": ("run.seed", {}),
    "--workers": ("run.workers", {}),
    "--out": ("run.out", {}),
    "--k": ("partition.k", {}),
    "--lambda": ("partition.lambda", {}),
    "--trials": ("partition.trials", {}),
    "--varcov": ("varcov.enabled", {"action": "store_const", "const": "true"}),
    "--delta": ("varcov.delta", {}),
    "--fit-dir": ("krige.fit_dir", {}),
    "--grid": ("krige.grid", {}),
    "--targets": ("krige.targets", {}),
    "--h": ("krige.h", {}),
    "--t": ("krige.t", {}),
    "--nn-size": (None, {}),
    "--block-size": ("krige.block_size", {}),
    "--no-varcov": ("krige.no_varcov", {"action": "store_const", "const": "true"}),
    "--covariates": ("krige.covariates", {}),
    "--val-sites": ("validate.val_sites", {}),
    "--bins": ("validate.bins", {}),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fhdgm", description="Functional hidden dynamic geostatistical models.")
    parser.add_argument("--version", action="version", version=f"fhdgm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
        p.add_argument("-v", "--verbose", action="store_true")
        for flag, (_, kw) in _FLAGS.items():
            p.add_argument(flag, dest=flag.lstrip("-").replace("-", "_"), default=None, **kw)
    return parser


def _overrides(args, command: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for flag, (key, _) in _FLAGS.items():
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is None:
            continue
        if flag == "--nn-size":
            key = "validate.nn_size" if command == "validate" else "krige.nn_size"
        out[key] = str(value)
    if args.workers is None and "run.workers" not in out and os.environ.get("FHDGM_WORKERS"):
        out["run.workers"] = os.environ["FHDGM_WORKERS"]
    return out


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        file_layer = load_config(args.config) if args.config else {}
        mapping = merge(file_layer, _overrides(args, args.command))
        cfg = RunConfig.from_mapping(mapping)
        run = Run(args.command, cfg)
        t0 = time.perf_counter()
        COMMANDS[args.command](run)
        run.timings["total"] = time.perf_counter() - t0
        if args.command != "report":
            run.manifest()
        return 0
    except SystemExit as exc:           # --help / --version
        return int(exc.code or 0)
    except NUMERICAL as exc:
        print(f"fhdgm: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (FhdgmError, ValueError, OSError) as exc:
        print(f"fhdgm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
