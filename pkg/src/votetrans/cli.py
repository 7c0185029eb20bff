"""Command-line front end.

Subcommands: ``generate``, ``fit``, ``adjust``, ``diagnose``, ``evaluate`` and
``report``.  Errors are printed to stderr as one JSON object and mapped to
exit codes 2 (validation), 3 (convergence) and 4 (I/O).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import io
from .errors import ConvergenceError, OracleModeError, ValidationError, VoteTransError
from .genesis import GeneratorSpec, generate
from .goodman import fit_goodman
from .lens import bias_correlation, quantile_profile, two_by_two_geometry
from .logit import CovariateDesign, LogitModel, OptimizerOptions, fit_logit_ols, fit_logit_wls
from .scenarios import CONSTRUCTED, SCENARIOS, get_scenario
from .seam import adjusted_overall
from .tables import aggregate_units, margins_of
from .verdict import fit_individual_logistic, reconstruct_overall, score

logger = logging.getLogger("votetrans")

METHODS = ("goodman", "king-ols", "bp-wls")
LABELS = {"goodman": "G", "king-ols": "K", "bp-wls": "BP"}


def _versions() -> dict:
    return {
        "votetrans": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def _hash_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _manifest(out: Path, command: str, flags: dict, seed=None, spec_hash=None) -> None:
    io.write_json(out / "manifest.json", {
        "command": command,
        "flags": flags,
        "seed": seed,
        "spec_hash": spec_hash,
        "versions": _versions(),
    })


def _flags(args) -> dict:
    skip = {"func", "command", "manifest"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}


def _opts(args) -> OptimizerOptions:
    return OptimizerOptions(
        tol=args.tol, max_iter=args.max_iter, restarts=args.restarts, seed=args.opt_seed,
        size_weights=not args.unweighted,
    )


def _design(path) -> CovariateDesign:
    if path is None:
        return CovariateDesign()
    return CovariateDesign.from_dict(io.read_json(path))


def _fit(method: str, data, design: CovariateDesign, opts: OptimizerOptions):
    """Return (overall table, estimate record)."""
    if method == "goodman":
        est = fit_goodman(data, weights=opts.size_weights)
        return est.table, {
            "method": method,
            "table": est.table.tolist(),
            "raw": est.raw.tolist(),
            "stderr": None if est.stderr is None else est.stderr.tolist(),
            "model": None,
            "design": None,
        }
    fit = fit_logit_ols if method == "king-ols" else fit_logit_wls
    model = fit(data, design, opts)
    table = reconstruct_overall(model, design, data)
    return table, {
        "method": method,
        "table": table.tolist(),
        "model": model.to_dict(),
        "design": design.to_dict(),
    }


def _load_estimate(path):
    rec = io.read_json(path)
    if rec.get("model"):
        return LogitModel.from_dict(rec["model"]), CovariateDesign.from_dict(rec.get("design") or [])
    if "table" not in rec:
        raise ValidationError(f"{path}: estimate needs a 'table' or a 'model'")
    return np.asarray(rec["table"], dtype=float), None


# -- subcommands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    out = Path(args.out)
    if args.spec:
        spec = GeneratorSpec.from_dict(io.read_json(args.spec))
        units, margins, spec_dict = _generated(spec, args.workers)
        spec_hash = spec.digest()
    else:
        sc = get_scenario(args.scenario, args.n_units, args.seed)
        if sc.spec is None:
            units = sc.units
            margins = [margins_of(u) for u in units]
            spec_dict, spec_hash = {"construction": sc.name}, _hash_obj({"construction": sc.name})
        else:
            units, margins, spec_dict = _generated(sc.spec, args.workers)
            spec_hash = sc.spec.digest()
    io.write_individual_csv(out / "individual.csv", units)
    io.write_aggregated_csv(out / "aggregated.csv", margins)
    io.write_json(out / "spec.json", spec_dict)
    _manifest(out, "generate", _flags(args), spec_dict.get("seed"), spec_hash)
    print(out)
    return 0


def _generated(spec: GeneratorSpec, workers):
    data = generate(spec, workers=workers)
    return data.units, data.margins(), spec.to_dict()


def cmd_fit(args) -> int:
    shape = tuple(args.expect_shape) if args.expect_shape else None
    data = io.read_aggregated_csv(args.data, shape)
    design = _design(args.design)
    opts = _opts(args)
    out = Path(args.out)
    table, rec = _fit(args.method, data, design, opts)
    if args.adjust_margins:
        est = LogitModel.from_dict(rec["model"]) if rec["model"] else table
        adj = adjusted_overall(est, data, design if rec["model"] else None)
        rec["adjusted_table"] = adj.tolist()
        io.write_table_csv(out / f"estimate-{args.method}-adjusted.csv", adj)
    rec["n_units"] = len(data)
    io.write_table_csv(out / f"estimate-{args.method}.csv", table)
    io.write_json(out / f"estimate-{args.method}.json", rec)
    _manifest(out, "fit", _flags(args), args.opt_seed)
    print(json.dumps({"method": args.method, "table": table.tolist()}))
    return 0


def cmd_adjust(args) -> int:
    data = io.read_aggregated_csv(args.data)
    est, design = _load_estimate(args.estimate)
    table = adjusted_overall(est, data, design, tol=args.ipf_tol, max_iter=args.ipf_max_iter)
    out = Path(args.out)
    io.write_table_csv(out / "adjusted.csv", table)
    _manifest(out, "adjust", _flags(args))
    print(json.dumps({"adjusted": table.tolist()}))
    return 0


def _parse_profile(text: str) -> int:
    key, _, value = text.partition("=")
    if key != "row" or not value.isdigit():
        raise ValidationError(f"--profile expects row=<index>, got {text!r}")
    return int(value)


def _write_diagnostics(out: Path, units, profile_row, groups, geometry: bool, bias: bool) -> None:
    R = units[0].shape[0]
    if profile_row is not None:
        prof = quantile_profile(units, profile_row, groups)
        io.write_records_csv(out / "profile.csv", ["series", "x", "y"], prof.series())
    if geometry:
        geo = two_by_two_geometry(units)
        io.write_records_csv(out / "geometry.csv", ["series", "x", "y"], geo.series())
    if bias:
        corr = bias_correlation(units)
        recs = [(i, j, k, corr[i, j, k]) for i in range(R) for j in range(corr.shape[1]) for k in range(R)]
        io.write_records_csv(out / "bias-corr.csv", ["row", "col", "margin", "corr"], recs)


def cmd_diagnose(args) -> int:
    if args.individual is None:
        raise OracleModeError(
            "diagnose needs --individual data; aggregated margins alone carry no diagnostic "
            "for within-unit proportions"
        )
    units = io.read_individual_csv(args.individual)
    profile_row = _parse_profile(args.profile) if args.profile else None
    if profile_row is None and not args.geometry and not args.bias_corr:
        args.bias_corr = True
    out = Path(args.out)
    _write_diagnostics(out, units, profile_row, args.groups, args.geometry, args.bias_corr)
    _manifest(out, "diagnose", _flags(args))
    print(out)
    return 0


def cmd_evaluate(args) -> int:
    truth_units = io.read_individual_csv(args.truth)
    truth = aggregate_units(truth_units)
    est, design = _load_estimate(args.model)
    if args.data:
        margins = io.read_aggregated_csv(args.data)
    else:
        margins = [margins_of(u) for u in truth_units]
    if isinstance(est, LogitModel):
        table = reconstruct_overall(est, design, margins)
    else:
        table = est
    if args.adjust_margins:
        table = adjusted_overall(est, margins, design)
    metrics = score(table, truth)
    metrics["estimate"] = np.asarray(table).tolist()
    metrics["truth"] = truth.tolist()
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def run_report(scenario: str, n_units: int, seed: int, out: Path, adjust: bool = False,
               opts: OptimizerOptions | None = None, workers: int | None = None,
               groups: int = 20, flags: dict | None = None) -> dict:
    """Generate a scenario, fit every method and write the comparison."""
    opts = opts or OptimizerOptions(seed=seed)
    sc = get_scenario(scenario, n_units, seed)
    if sc.spec is not None:
        data = generate(sc.spec, workers=workers)
        units, margins, covs = data.units, data.margins(), data.covariates
        spec_dict, spec_hash = sc.spec.to_dict(), sc.spec.digest()
    else:
        data = None
        units = sc.units
        margins = [margins_of(u) for u in units]
        covs = [{} for _ in units]
        spec_dict, spec_hash = {"construction": sc.name}, _hash_obj({"construction": sc.name})

    out.mkdir(parents=True, exist_ok=True)
    io.write_individual_csv(out / "individual.csv", units)
    io.write_aggregated_csv(out / "aggregated.csv", margins)
    io.write_json(out / "spec.json", spec_dict)

    truth = aggregate_units(units)
    R, C = truth.shape
    columns = {"I": truth}
    metrics = {}
    if scenario not in CONSTRUCTED:
        oracle = fit_individual_logistic(units, sc.design, covs)
        columns["L"] = reconstruct_overall(oracle, sc.design, margins)
    methods = ("goodman",) if scenario in CONSTRUCTED else METHODS
    estimates = {}
    for method in methods:
        table, rec = _fit(method, margins, sc.design, opts)
        columns[LABELS[method]] = table
        estimates[method] = rec
        io.write_table_csv(out / f"estimate-{method}.csv", table, sc.row_labels, sc.col_labels)
    if adjust:
        for method in methods:
            rec = estimates[method]
            est = LogitModel.from_dict(rec["model"]) if rec["model"] else np.asarray(rec["table"])
            adj = adjusted_overall(est, margins, sc.design if rec["model"] else None)
            columns[LABELS[method] + "_adj"] = adj
            io.write_table_csv(out / f"estimate-{method}-adjusted.csv", adj, sc.row_labels, sc.col_labels)
    for label, table in columns.items():
        if label != "I":
            metrics[label] = score(table, truth)

    header = ["row", "col"]
    truths = []
    if sc.spec is not None and sc.spec.mixture is not None:
        truths = [np.asarray(t) for t in sc.spec.mixture.tables]
        header += ["true_v0", "true_v1"]
    header += list(columns)
    records = []
    for i in range(R):
        for j in range(C):
            rec = [sc.row_labels[i], sc.col_labels[j]]
            rec += [float(t[i, j]) for t in truths]
            rec += [float(columns[k][i, j]) for k in columns]
            records.append(rec)
    io.write_records_csv(out / "comparison.csv", header, records)

    plots = out / "plots"
    _write_diagnostics(plots, units, profile_row=R - 1 if len(units) >= groups else None, groups=groups,
                       geometry=(R, C) == (2, 2), bias=len(units) > 2)
    io.write_json(out / "metrics.json", metrics)
    _manifest(out, "report", flags or {"scenario": scenario, "n_units": n_units, "seed": seed,
                                       "adjust_margins": adjust}, seed, spec_hash)
    return {"columns": {k: v.tolist() for k, v in columns.items()}, "metrics": metrics}


def cmd_report(args) -> int:
    if args.manifest:
        saved = io.read_json(args.manifest)
        for k, v in saved.get("flags", {}).items():
            if k != "out":
                setattr(args, k, v)
    out = Path(args.out) if args.out else Path("out") / (
        f"{args.scenario}-n{args.n_units}-s{args.seed}" + ("-adj" if args.adjust_margins else "")
    )
    opts = OptimizerOptions(tol=args.tol, max_iter=args.max_iter, restarts=args.restarts,
                            seed=args.seed if args.opt_seed is None else args.opt_seed,
                            size_weights=not args.unweighted)
    res = run_report(args.scenario, args.n_units, args.seed, out, args.adjust_margins, opts,
                     args.workers, args.groups, _flags(args))
    labels = list(res["columns"])
    print(f"{'cell':>12} " + " ".join(f"{k:>8}" for k in labels))
    sc = get_scenario(args.scenario, 2, 0)
    for i, rl in enumerate(sc.row_labels):
        for j, cl in enumerate(sc.col_labels):
            print(f"{rl + '/' + cl:>12} " + " ".join(f"{res['columns'][k][i][j]:8.3f}" for k in labels))
    print(out)
    return 0


# -- parser ----------------------------------------------------------------------


def _optimizer_flags(p: argparse.ArgumentParser, opt_seed_default=0) -> None:
    d = OptimizerOptions()
    p.add_argument("--tol", type=float, default=d.tol)
    p.add_argument("--max-iter", type=int, default=d.max_iter)
    p.add_argument("--restarts", type=int, default=d.restarts)
    p.add_argument("--opt-seed", type=int, default=opt_seed_default)
    p.add_argument("--unweighted", action="store_true", help="do not weight units by size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="votetrans", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic individual and aggregated data")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", type=Path, help="generator spec JSON")
    src.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--n-units", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="estimate a transition table from aggregated data")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--method", choices=METHODS, default="goodman")
    p.add_argument("--design", type=Path)
    p.add_argument("--expect-shape", type=int, nargs=2, metavar=("R", "C"))
    p.add_argument("--adjust-margins", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    _optimizer_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("adjust", help="fit an estimate to every unit's margins by IPF")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--estimate", type=Path, required=True)
    p.add_argument("--ipf-tol", type=float, default=1e-8)
    p.add_argument("--ipf-max-iter", type=int, default=10_000)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("diagnose", help="ecological-bias diagnostics on individual data")
    p.add_argument("--individual", type=Path)
    p.add_argument("--data", type=Path, help="aggregated data (rejected: diagnostics need individual data)")
    p.add_argument("--profile", metavar="row=I")
    p.add_argument("--groups", type=int, default=20)
    p.add_argument("--geometry", action="store_true")
    p.add_argument("--bias-corr", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("evaluate", help="score an estimate against individual truth")
    p.add_argument("--model", type=Path, required=True, help="estimate JSON written by fit")
    p.add_argument("--truth", type=Path, required=True, help="individual CSV")
    p.add_argument("--data", type=Path, help="aggregated CSV, for external covariates")
    p.add_argument("--adjust-margins", action="store_true")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="run a scenario end to end")
    p.add_argument("--scenario", choices=SCENARIOS, default="constant")
    p.add_argument("--n-units", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adjust-margins", action="store_true")
    p.add_argument("--groups", type=int, default=20)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--manifest", type=Path, help="re-run with the flags of a previous manifest")
    p.add_argument("--out", type=Path)
    _optimizer_flags(p, opt_seed_default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VoteTransError as exc:
        code = 3 if isinstance(exc, ConvergenceError) else 2
        _error(exc, code)
        return code
    except OSError as exc:
        _error(exc, 4)
        return 4


def _error(exc: Exception, code: int) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
