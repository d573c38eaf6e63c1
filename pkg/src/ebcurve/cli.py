"""Command-line entry point: ``ebcurve <subcommand> ...``.

Exit status is 0 on success, 1 for usage, schema or data errors and 2 for
numerical failures.  Every run writes ``config.json`` next to its results.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, balance, drc, gps, simbench, solver
from .bootstrap import bootstrap_curve, default_threads, result_json
from .dataset import DataParseError, DegenerateColumnError, Schema, SchemaError, encode, load_csv
from .pipeline import METHODS, PipelineConfig, compute_weights, fit_curve

log = logging.getLogger("ebcurve")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bounds(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("bounds must look like lo:hi") from None
    return lo, hi


def _grid(text: str) -> np.ndarray:
    try:
        return drc.parse_grid(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def _cohort_args(p):
    g = p.add_argument_group("cohort")
    g.add_argument("--input", required=True, help="CSV file with a header row")
    g.add_argument("--schema", help="JSON file with outcome, exposure and covariates {name: kind}")
    g.add_argument("--outcome")
    g.add_argument("--exposure")
    g.add_argument("--covariate", action="append", default=[], metavar="NAME:KIND")


def _weight_args(p):
    g = p.add_argument_group("weights")
    g.add_argument("--method", default="eb", choices=["eb", "normal_gps", "unweighted"])
    g.add_argument("--moments", type=int, default=2, help="covariate moments for entropy balancing (1-4)")
    g.add_argument("--exposure-moments", type=int, help="exposure moments (default: --moments)")
    g.add_argument("--cross-powers", action="store_true", help="also decorrelate X^p from A^q, q > 1")
    g.add_argument("--bounds", type=_bounds, default=solver.DEFAULT_BOUNDS, help="box on scaled multipliers, lo:hi")
    g.add_argument("--tol", type=float, default=solver.DEFAULT_TOL)
    g.add_argument("--max-iter", type=int, default=solver.DEFAULT_MAX_ITER)
    g.add_argument("--truncate", type=float, help="cap GPS weights at this quantile")


def _curve_args(p):
    g = p.add_argument_group("curve")
    g.add_argument("--grid", type=_grid, help="lo:hi:count (default: 100 points over the weighted 1-99%% range)")
    g.add_argument("--span", type=float, help="fixed span; skips cross-validation")
    g.add_argument("--span-grid", type=_floats, default=drc.DEFAULT_SPANS)
    g.add_argument("--folds", type=int, default=2)
    g.add_argument("--cv-seed", type=int, default=0)
    g.add_argument("--unweighted-cv", action="store_true", help="score held-out folds without the balancing weights")
    g.add_argument("--extrapolate", action="store_true", help="fit grid points outside the observed exposure range")


def _boot_args(p, required=False):
    g = p.add_argument_group("bootstrap")
    g.add_argument("--bootstrap", "--B", dest="B", type=int, required=required, help="number of replicates")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--percentile", action="store_true", help="percentile intervals instead of +/- 2 se")
    g.add_argument("--dump-replicates", action="store_true")


def _common(p):
    p.add_argument("--output-dir", required=True, type=Path)
    p.add_argument("--format", choices=["csv", "json", "table"], default="table", help="what to print on stdout")
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: $EBCURVE_THREADS or all cores)")


def build_parser() -> _Parser:
    parser = _Parser(prog="ebcurve", description="Entropy-balanced dose-response curves")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("weights", help="compute balancing weights")
    _cohort_args(p), _weight_args(p), _common(p)

    p = sub.add_parser("balance", help="balance diagnostics for weights")
    _cohort_args(p), _weight_args(p), _common(p)
    p.add_argument("--weights", help="single-column weight CSV aligned to input rows")

    for name, req in (("drc", False), ("bootstrap", True)):
        p = sub.add_parser(name, help="dose-response curve" if name == "drc" else "bootstrap the whole pipeline")
        _cohort_args(p), _weight_args(p), _curve_args(p), _boot_args(p, req), _common(p)
        p.add_argument("--weights", help="single-column weight CSV aligned to input rows (point estimate only)")

    p = sub.add_parser("simulate", help="replicate the simulation study")
    p.add_argument("--scenario", choices=simbench.SCENARIOS, default="main")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--seed", type=int, default=simbench.SimConfig.seed)
    p.add_argument("--grid-step", type=float, default=1.0)
    p.add_argument("--long", action="store_true", help="1000 replications")
    _common(p)

    p = sub.add_parser("coverage", help="bootstrap interval coverage study")
    p.add_argument("--scenario", choices=simbench.SCENARIOS, default="main")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--B", type=int, default=100)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--method", default="eb_2", choices=METHODS)
    p.add_argument("--seed", type=int, default=simbench.SimConfig.seed)
    p.add_argument("--grid-step", type=float, default=1.0)
    p.add_argument("--smoke", action="store_true", help="50 datasets x 50 replicates")
    _common(p)
    return parser


def _schema(args) -> Schema:
    if args.schema:
        if args.outcome or args.exposure or args.covariate:
            raise UsageError("give either --schema or --outcome/--exposure/--covariate, not both")
        return Schema.from_json(args.schema)
    if not (args.outcome and args.exposure and args.covariate):
        raise UsageError("need --outcome, --exposure and at least one --covariate (or --schema)")
    return Schema.from_flags(args.outcome, args.exposure, args.covariate)


def _pipeline(args) -> PipelineConfig:
    method = f"eb_{args.moments}" if args.method == "eb" else args.method
    kw = {}
    if hasattr(args, "span_grid"):
        kw = dict(
            span=args.span,
            span_grid=args.span_grid,
            folds=args.folds,
            cv_seed=args.cv_seed,
            weighted_cv=not args.unweighted_cv,
            extrapolate=args.extrapolate,
        )
    return PipelineConfig(
        method=method,
        exposure_moments=args.exposure_moments,
        cross_powers=args.cross_powers,
        bounds=args.bounds,
        tol=args.tol,
        max_iter=args.max_iter,
        truncate=args.truncate,
        **kw,
    )


def _read_weights(path, n: int) -> np.ndarray:
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=1)
    except (OSError, ValueError) as exc:
        raise DataParseError(f"cannot read weights from {path}: {exc}") from None
    if raw.ndim != 1 or raw.size != n:
        raise DataParseError(f"weights file {path} must hold one column of {n} values")
    if np.any(raw < 0) or not raw.sum() > 0:
        raise DataParseError("weights must be nonnegative with a positive sum")
    return raw / raw.sum()


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [float(x) for x in v]
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def _echo(out: Path, args, extra=None):
    cfg = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("output_dir", "format", "threads")}
    cfg["version"] = __version__
    if extra:
        cfg.update(extra)
    _write(out, "config.json", json.dumps(cfg, sort_keys=True, indent=1) + "\n")


def _weights_csv(w) -> str:
    return "weight\n" + "".join(f"{float(v)!r}\n" for v in w)


def _cmd_weights(args, out):
    ds = load_csv(args.input, _schema(args))
    cfg = _pipeline(args)
    wr = compute_weights(encode(ds), ds.exposure, cfg)
    _write(out, "weights.csv", _weights_csv(wr.weights))
    _write(out, "diagnostics.json", json.dumps(wr.diagnostics, sort_keys=True, indent=1) + "\n")
    _echo(out, args, {"pipeline": cfg.to_dict()})
    if not wr.converged:
        log.warning("entropy balancing did not converge; inspect diagnostics.json and the balance report")
    if args.format == "json":
        return json.dumps(wr.diagnostics, sort_keys=True, indent=1)
    if args.format == "csv":
        return _weights_csv(wr.weights).rstrip("\n")
    return f"method={wr.method} n={wr.weights.size} ess={wr.ess:.2f} converged={wr.converged}"


def _cmd_balance(args, out):
    schema = _schema(args)
    ds = load_csv(args.input, schema)
    dm = encode(ds)
    extra = {}
    if args.weights:
        w = _read_weights(args.weights, ds.n)
    else:
        cfg = _pipeline(args)
        w = compute_weights(dm, ds.exposure, cfg).weights
        extra["pipeline"] = cfg.to_dict()
    report = balance.balance_report(dm, ds.exposure, w, exposure_name=schema.exposure)
    _write(out, "balance.txt", report.to_table() + "\n")
    _write(out, "balance.json", report.to_json(indent=1) + "\n")
    _write(out, "balance.csv", report.to_csv())
    rows = ["variable,value,weighted_cdf,unweighted_cdf"]
    raw = dm.raw_columns()
    for name, x in [(schema.exposure, ds.exposure), *zip(dm.names, raw.T)]:
        xs, fw = balance.ecdf_points(x, w)
        _, fu = balance.ecdf_points(x, np.ones_like(x))
        rows += [f"{name},{a!r},{b!r},{c!r}" for a, b, c in zip(xs.tolist(), fw.tolist(), fu.tolist())]
    _write(out, "ecdf.csv", "\n".join(rows) + "\n")
    _echo(out, args, extra)
    return {"table": report.to_table(), "json": report.to_json(indent=1), "csv": report.to_csv().rstrip("\n")}[args.format]


def _cmd_drc(args, out):
    ds = load_csv(args.input, _schema(args))
    cfg = _pipeline(args)
    threads = args.threads or default_threads()
    extra = {"pipeline": cfg.to_dict()}
    if args.B:
        if args.weights:
            log.warning("--weights is ignored with --bootstrap: weights are re-solved on the data and every replicate")
        res = bootstrap_curve(
            ds, cfg, args.grid, args.B, args.seed, threads, percentile=args.percentile, keep_replicates=args.dump_replicates
        )
        curve = res.to_curve()
        _write(out, "curve.csv", res.to_csv())
        _write(out, "curve.json", result_json(res) + "\n")
        if args.dump_replicates:
            _write(out, "replicates.csv", res.replicates_csv())
        if res.n_failed:
            log.warning("%d of %d bootstrap replicates failed and were excluded", res.n_failed, res.B)
    else:
        if args.weights:
            w = _read_weights(args.weights, ds.n)
        else:
            wr = compute_weights(encode(ds), ds.exposure, cfg)
            if not wr.converged:
                log.warning("entropy balancing did not converge")
            w = wr.weights
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", drc.ExtrapolationWarning)
            curve = fit_curve(ds.exposure, ds.outcome, w, args.grid, cfg)
        _write(out, "curve.csv", curve.to_csv())
        _write(out, "curve.json", curve.to_json() + "\n")
    _echo(out, args, extra)
    if args.format == "csv":
        return curve.to_csv().rstrip("\n")
    if args.format == "json":
        return curve.to_json()
    lines = [f"span={curve.span_used:g} high-density range=[{curve.high_density_range[0]:.4g}, {curve.high_density_range[1]:.4g}]"]
    for i in np.linspace(0, curve.grid.size - 1, min(10, curve.grid.size)).astype(int):
        se = "" if curve.se is None else f"  se={curve.se[i]:.4f}"
        lines.append(f"a0={curve.grid[i]:10.4f}  f={curve.estimates[i]:.4f}{se}")
    return "\n".join(lines)


def _cmd_simulate(args, out):
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    cfg = simbench.SimConfig(
        n_per_rep=args.n,
        reps=1000 if args.long else args.reps,
        scenario=args.scenario,
        methods=methods,
        grid_step=args.grid_step,
        seed=args.seed,
        threads=args.threads or default_threads(),
    )
    table = simbench.run_replications(cfg)
    _write(out, "metrics.csv", table.to_csv())
    _write(out, "table.txt", table.to_table() + "\n")
    _write(out, "balance.txt", table.balance_table() + "\n")
    _write(out, "curves.csv", table.bundles_csv())
    sim_cfg = cfg.to_dict()
    sim_cfg.pop("threads")
    _echo(out, args, {"simulation": sim_cfg})
    return {"table": table.to_table(), "csv": table.to_csv().rstrip("\n"), "json": json.dumps(table.rows, sort_keys=True, indent=1)}[args.format]


def _cmd_coverage(args, out):
    reps, B = (50, 50) if args.smoke else (args.reps, args.B)
    cfg = simbench.SimConfig(
        n_per_rep=args.n,
        reps=reps,
        scenario=args.scenario,
        methods=(args.method,),
        grid_step=args.grid_step,
        seed=args.seed,
        threads=args.threads or default_threads(),
    )
    cov = simbench.coverage_study(cfg, B=B, method=args.method)
    _write(out, "coverage.csv", cov.to_csv())
    region = cov.region()
    summary = {
        "reps": reps,
        "B": B,
        "exposure_quantiles": {str(k): v for k, v in cov.exposure_quantiles.items()},
        "min_coverage_5_95": float(np.nanmin(cov.coverage[region])),
        "mean_se_ratio_5_95": float(np.nanmean(cov.ratio[region])),
        "failed_replicates": cov.n_failed_replicates,
    }
    _write(out, "summary.json", json.dumps(summary, sort_keys=True, indent=1) + "\n")
    sim_cfg = cfg.to_dict()
    sim_cfg.pop("threads")
    _echo(out, args, {"simulation": sim_cfg})
    if args.format == "csv":
        return cov.to_csv().rstrip("\n")
    return json.dumps(summary, sort_keys=True, indent=1)


COMMANDS = {
    "weights": _cmd_weights,
    "balance": _cmd_balance,
    "drc": _cmd_drc,
    "bootstrap": _cmd_drc,
    "simulate": _cmd_simulate,
    "coverage": _cmd_coverage,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        out = args.output_dir
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", drc.ExtrapolationWarning)
            text = COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, DataParseError, DegenerateColumnError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (np.linalg.LinAlgError, drc.LocalDegeneracyError, gps.DegenerateGPSError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    if text:
        print(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
