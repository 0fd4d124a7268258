"""Command-line interface.

Subcommands
-----------
simulate           run a Monte Carlo scenario from a TOML or JSON config
analyze            fit the calibrated and naive debiased estimators to count data
estimate-nuisance  write the estimated nuisance parameters as a JSON bundle
make-data          write a synthetic counts/replicates/response data set

Exit codes are 0 on success, 2 for bad input and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from ._errors import HdcalError, InvalidInput
from ._kernels import BACKEND
from .composition import close, log_contrast
from .covariance import ERROR_STRUCTURES, LogContrastNuisance, to_logcontrast_nuisance
from .inference import coefficient_inference, fit_debiased_lasso, fit_proposed
from .lasso import CvConfig
from .montecarlo import (
    METHODS,
    MethodSummary,
    SimulationScenario,
    SummaryTable,
    estimate_nuisance,
    generate_dataset,
    run_scenario,
    scenario_dict,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
SUMMARY_COLUMNS = ("method", "index", "alpha_true", "bias", "rmse", "se", "empirical_sd", "coverage")
RESULT_COLUMNS = ("component", "method", "estimate", "se", "ci_low", "ci_high", "p_value", "significant")

log = logging.getLogger("hdcal")


class ConfigError(InvalidInput):
    pass


# ---------------------------------------------------------------- formatting

def _num(x) -> str:
    """Shortest round-trip text for a float; empty for missing values."""
    if x is None:
        return ""
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _parse_num(s: str):
    return None if s == "" else float(s)


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------- scenario config

_SCENARIO_FIELDS = {f.name: f for f in fields(SimulationScenario)}
_INT_FIELDS = {"n", "p", "n_replicate_obs", "n_mc", "seed", "cv_folds"}
_STR_FIELDS = {"mu_x_rule", "nuisance_mode", "cov_estimator", "error_structure",
               "delasso_decorrelation"}


def _load_mapping(path: Path) -> dict:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(raw.decode("utf-8"))
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(raw.decode("utf-8"))
    except ValueError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def _coerce(name, value):
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"field '{name}' must be an integer, got {value!r}")
        return value
    if name in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(f"field '{name}' must be a string, got {value!r}")
        return value
    if name == "alpha_true":
        if not isinstance(value, list) or not all(
                isinstance(a, (int, float)) and not isinstance(a, bool) for a in value):
            raise ConfigError("field 'alpha_true' must be a list of numbers")
        return tuple(float(a) for a in value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"field '{name}' must be a number, got {value!r}")
    return float(value)


def scenario_from_mapping(cfg: dict) -> SimulationScenario:
    """Validate a parsed config and build the scenario.

    The mapping holds ``schema_version`` and a ``scenario`` table whose keys
    are ``SimulationScenario`` fields. Problems raise ``ConfigError`` naming
    the offending field.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a table/object")
    version = cfg.get("schema_version")
    if version is None:
        raise ConfigError("missing field 'schema_version'")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"field 'schema_version' must be {SCHEMA_VERSION}, got {version!r}")
    extra = set(cfg) - {"schema_version", "scenario"}
    if extra:
        raise ConfigError(f"unknown top-level field '{sorted(extra)[0]}'")
    table = cfg.get("scenario", {})
    if not isinstance(table, dict):
        raise ConfigError("field 'scenario' must be a table")
    kwargs = {}
    for key, value in table.items():
        if key not in _SCENARIO_FIELDS:
            raise ConfigError(f"unknown field 'scenario.{key}'")
        kwargs[key] = _coerce(key, value)
    try:
        return SimulationScenario(**kwargs)
    except InvalidInput as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def load_scenario(path) -> SimulationScenario:
    return scenario_from_mapping(_load_mapping(Path(path)))


# ---------------------------------------------------------------- summary I/O

def summary_rows(table: SummaryTable):
    for r in table.rows():
        yield [r["method"], str(r["index"])] + [_num(r[k]) for k in SUMMARY_COLUMNS[2:]]


def read_summary_csv(path) -> SummaryTable:
    """Rebuild a ``SummaryTable`` (without per-replicate draws) from its CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    by_method = {}
    for r in rows:
        by_method.setdefault(r["method"], []).append(r)
    alpha = None
    methods = {}
    for name, rs in by_method.items():
        rs.sort(key=lambda r: int(r["index"]))
        col = {k: [_parse_num(r[k]) for r in rs] for k in SUMMARY_COLUMNS[2:]}
        if alpha is None:
            alpha = np.array(col["alpha_true"])
        opt = lambda k: None if col[k][0] is None else np.array(col[k])  # noqa: E731
        methods[name] = MethodSummary(np.array(col["bias"]), np.array(col["rmse"]), opt("se"),
                                      np.array(col["empirical_sd"]), opt("coverage"))
    return SummaryTable(alpha, methods, n_mc_completed=0)


def format_table(table: SummaryTable, n_rows: int = 10) -> str:
    """Aligned text table: bias for all methods, then RMSE, SE and CR for the
    two debiased methods."""
    m = table.methods
    labels = {"lasso": "Lasso", "cocolasso": "Coco", "debiased_lasso": "DeLasso", "proposed": "Proposed"}
    inf = ("debiased_lasso", "proposed")
    head = (["alpha"] + [f"Bias:{labels[k]}" for k in METHODS]
            + [f"RMSE:{labels[k]}" for k in inf] + [f"SE:{labels[k]}" for k in inf]
            + [f"CR:{labels[k]}" for k in inf])
    body = []
    for j in range(min(n_rows, len(table.alpha_true))):
        row = [table.alpha_true[j]] + [m[k].bias[j] for k in METHODS]
        row += [m[k].rmse[j] for k in inf]
        row += [m[k].mean_model_se[j] for k in inf]
        row += [m[k].coverage_rate[j] for k in inf]
        body.append([f"{x:.2f}" for x in row])
    widths = [max(len(h), 5) for h in head]
    lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- data input

def read_matrix_csv(path):
    """Header row of component names, one numeric row per subject."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise InvalidInput(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise InvalidInput(f"{path}: need a header row and at least one data row")
    names = [h.strip() for h in rows[0]]
    if len(set(names)) != len(names):
        raise InvalidInput(f"{path}: duplicate column names")
    data = np.empty((len(rows) - 1, len(names)))
    for i, r in enumerate(rows[1:]):
        if len(r) != len(names):
            raise InvalidInput(f"{path}: row {i + 1} has {len(r)} fields, expected {len(names)}")
        try:
            data[i] = [float(x) for x in r]
        except ValueError as exc:
            raise InvalidInput(f"{path}: row {i + 1}: {exc}") from exc
    if not np.all(np.isfinite(data)):
        raise InvalidInput(f"{path}: non-finite values")
    return names, data


def impute_zeros(values: np.ndarray, fill: float, what: str) -> np.ndarray:
    if not fill > 0:
        raise InvalidInput("zero_impute_value must be positive")
    if np.any(values < 0):
        i, j = np.argwhere(values < 0)[0]
        raise InvalidInput(f"{what}: negative count at row {i}, column {j}")
    zeros = values == 0
    if zeros.any():
        warnings.warn(f"{what}: replaced {int(zeros.sum())} zero entries with {fill}", stacklevel=2)
        values = np.where(zeros, fill, values)
    return values


def _resolve_reference(ref, names):
    if ref is None:
        return len(names) - 1
    if ref in names:
        return names.index(ref)
    try:
        k = int(ref)
    except ValueError:
        raise InvalidInput(f"reference component {ref!r} is not a column name") from None
    if not 1 <= k <= len(names):
        raise InvalidInput(f"reference index {k} outside 1..{len(names)}")
    return k - 1


def _load_inputs(args):
    names, counts = read_matrix_csv(args.counts)
    reps = []
    for path in args.replicates:
        rn, rv = read_matrix_csv(path)
        if rn != names:
            raise InvalidInput(f"{path}: columns differ from {args.counts}")
        if rv.shape != counts.shape:
            raise InvalidInput(f"{path}: {rv.shape[0]} rows, expected {counts.shape[0]}")
        reps.append(impute_zeros(rv, args.impute, str(path)))
    if len(reps) < 2:
        raise InvalidInput("at least two replicate files are needed to estimate sigma_u^2")
    counts = impute_zeros(counts, args.impute, str(args.counts))
    mask = None
    if args.sigma_u_columns:
        missing = [c for c in args.sigma_u_columns if c not in names]
        if missing:
            raise InvalidInput(f"unknown column in --sigma-u-columns: {missing[0]}")
        mask = np.array([names.index(c) for c in args.sigma_u_columns])
    ref = _resolve_reference(args.reference, names)
    return names, counts, reps, mask, ref


def _nuisance_bundle(names, ref, s2, mu, est, nuis, args) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "components": names,
        "reference": names[ref],
        "cov_estimator": args.cov,
        "error_structure": args.error_structure,
        "sigma_u_sq": float(s2),
        "mu_x": mu.tolist(),
        "sigma_x": est.matrix.tolist(),
        "psd_repaired": bool(est.psd_repaired),
        "shrinkage_intensity": est.shrinkage_intensity,
        "mu_ztilde": nuis.mu_ztilde.tolist(),
        "sigma_ztilde": nuis.sigma_ztilde.tolist(),
    }


def _nuisance_from_bundle(path, names, ref) -> tuple[LogContrastNuisance, dict]:
    b = _load_mapping(Path(path))
    try:
        if b.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"field 'schema_version' must be {SCHEMA_VERSION}")
        if b["components"] != names:
            raise InvalidInput("nuisance bundle components do not match the counts columns")
        if b["reference"] != names[ref]:
            raise InvalidInput(f"nuisance bundle uses reference {b['reference']!r}, not {names[ref]!r}")
        nuis = LogContrastNuisance(np.array(b["mu_ztilde"]), np.array(b["sigma_ztilde"]),
                                   float(b["sigma_u_sq"]), "estimated",
                                   b.get("error_structure", "shared"))
    except KeyError as exc:
        raise ConfigError(f"nuisance bundle missing field {exc.args[0]!r}") from None
    return nuis, b


def _estimate(args, names, counts, reps, mask, ref):
    nuis, s2, mu, est = estimate_nuisance(counts, reps, args.cov, ref, mask,
                                          error_structure=args.error_structure)
    return nuis, _nuisance_bundle(names, ref, s2, mu, est, nuis, args)


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    sc = load_scenario(args.config)
    over = {k: v for k, v in (("n_mc", args.n_mc), ("seed", args.seed)) if v is not None}
    if over:
        sc = scenario_from_mapping({"schema_version": SCHEMA_VERSION,
                                    "scenario": {**scenario_dict(sc), **over}})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    progress = None
    if not args.quiet:
        def progress(done, total):
            print(f"\rreplicate {done}/{total}", end="" if done < total else "\n", file=sys.stderr)
    table = run_scenario(sc, threads=args.threads, progress=progress)
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary_rows(table))
    text = format_table(table)
    (out / "table.txt").write_text(text, encoding="utf-8")
    meta = {
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario_dict(sc),
        "n_mc_completed": table.n_mc_completed,
        "n_failed": table.n_failed,
        "failures": [{"replicate": i, "error": msg} for i, msg in table.failures],
        "hdcal_version": __version__,
        "numpy_version": np.__version__,
    }
    _dump_json(meta, out / "summary.json")
    print(text, end="")
    return EXIT_OK


def _result_rows(names, ref, fits, level):
    keep = [c for i, c in enumerate(names) if i != ref]
    rows = []
    for method, est in fits.items():
        for ci in coefficient_inference(est, level):
            rows.append({
                "component": keep[ci.index], "method": method, "estimate": ci.estimate,
                "se": ci.se, "ci_low": ci.ci_low, "ci_high": ci.ci_high,
                "p_value": ci.p_value, "significant": bool(ci.p_value < 0.05),
            })
    rows.sort(key=lambda r: (r["component"], r["method"]))
    return rows


def cmd_analyze(args) -> int:
    names, counts, reps, mask, ref = _load_inputs(args)
    rnames, resp = read_matrix_csv(args.response)
    if resp.shape[1] != 1:
        raise InvalidInput(f"{args.response}: response file must have a single column")
    if resp.shape[0] != counts.shape[0]:
        raise InvalidInput(f"response has {resp.shape[0]} rows, counts have {counts.shape[0]}")
    y = resp[:, 0]
    if args.nuisance_file:
        nuis, bundle = _nuisance_from_bundle(args.nuisance_file, names, ref)
    else:
        nuis, bundle = _estimate(args, names, counts, reps, mask, ref)
    v = log_contrast(close(counts), ref).values
    cv = CvConfig(folds=args.folds, seed=args.seed)
    fits = {"proposed": fit_proposed(v, y, nuis, cv),
            "debiased_lasso": fit_debiased_lasso(v, y, cv, decorrelation=args.delasso_decorrelation)}
    rows = _result_rows(names, ref, fits, args.level)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "results.csv", RESULT_COLUMNS,
               ([r["component"], r["method"]] + [_num(r[k]) for k in RESULT_COLUMNS[2:7]]
                + [str(r["significant"]).lower()] for r in rows))
    record = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "counts": str(args.counts), "replicates": [str(p) for p in args.replicates],
            "response": str(args.response), "reference": names[ref], "cov_estimator": args.cov,
            "error_structure": args.error_structure, "zero_impute_value": args.impute,
            "level": args.level, "cv_folds": args.folds, "seed": args.seed,
            "nuisance_file": None if args.nuisance_file is None else str(args.nuisance_file),
            "sigma_u_columns": args.sigma_u_columns,
            "delasso_decorrelation": args.delasso_decorrelation,
        },
        "response_name": rnames[0],
        "sigma_u_sq": bundle["sigma_u_sq"],
        "fits": {m: {"sigma_hat": e.sigma_hat, "lambda": e.lam} for m, e in fits.items()},
        "rows": rows,
        "hdcal_version": __version__,
        "numpy_version": np.__version__,
    }
    _dump_json(record, out / "results.json")
    for r in rows:
        if r["significant"]:
            print(f"{r['method']:>15}  {r['component']}: estimate {r['estimate']:.3f}, "
                  f"se {r['se']:.3f}, p {r['p_value']:.4f}")
    return EXIT_OK


def cmd_estimate_nuisance(args) -> int:
    names, counts, reps, mask, ref = _load_inputs(args)
    _, bundle = _estimate(args, names, counts, reps, mask, ref)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(bundle, out)
    return EXIT_OK


def write_dataset(out, n=41, p=40, n_replicates=4, sigma_u_sq=1.16, seed=0, rho=0.2,
                  sigma_eps=0.5):
    """Simulate one data set and write counts, replicate and response CSVs.

    ``counts.csv`` is the first replicate; ``rep1.csv`` ... hold all of them.
    Returns the list of replicate paths.
    """
    sc = SimulationScenario(n=n, p=p, rho=rho, sigma_u_sq=sigma_u_sq, sigma_eps=sigma_eps,
                            n_replicate_obs=n_replicates - 1, seed=seed, n_mc=1)
    data = generate_dataset(sc, 0)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = [f"taxon{j + 1:03d}" for j in range(p)]
    paths = []
    for r, w in enumerate(data.replicates):
        path = out / f"rep{r + 1}.csv"
        _write_csv(path, names, ([_num(x) for x in row] for row in w))
        paths.append(path)
    _write_csv(out / "counts.csv", names, ([_num(x) for x in row] for row in data.W))
    _write_csv(out / "response.csv", ["y"], ([_num(x)] for x in data.y))
    return paths


def cmd_make_data(args) -> int:
    write_dataset(args.out, args.n, args.p, args.replicates, args.sigma_u_sq, args.seed)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _csv_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


def _data_args(sp):
    sp.add_argument("--counts", required=True, help="CSV of observed counts, header = component names")
    sp.add_argument("--replicates", required=True, type=_csv_list,
                    help="comma-separated replicate CSVs (at least two)")
    sp.add_argument("--reference", help="reference component: column name or 1-based index (default last)")
    sp.add_argument("--cov", choices=("shrinkage", "nodewise"), default="shrinkage")
    sp.add_argument("--error-structure", choices=ERROR_STRUCTURES, default="shared")
    sp.add_argument("--impute", type=float, default=0.1, help="value substituted for zero counts")
    sp.add_argument("--sigma-u-columns", type=_csv_list, default=None,
                    help="restrict sigma_u^2 estimation to these columns")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdcal", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"hdcal {__version__} ({BACKEND} kernels)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="Monte Carlo scenario")
    sp.add_argument("--config", required=True)
    sp.add_argument("--n-mc", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, default=1, help="worker processes")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("-q", "--quiet", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="fit both debiased estimators to data")
    _data_args(sp)
    sp.add_argument("--response", required=True, help="single-column CSV with header")
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--nuisance-file", help="JSON bundle from estimate-nuisance")
    sp.add_argument("--delasso-decorrelation", choices=("nodewise", "sample"), default="nodewise")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("estimate-nuisance", help="write nuisance estimates as JSON")
    _data_args(sp)
    sp.add_argument("--out", required=True, help="output JSON path")
    sp.set_defaults(func=cmd_estimate_nuisance)

    sp = sub.add_parser("make-data", help="write a synthetic data set")
    sp.add_argument("--n", type=int, default=41)
    sp.add_argument("--p", type=int, default=40)
    sp.add_argument("--replicates", type=int, default=4)
    sp.add_argument("--sigma-u-sq", type=float, default=1.16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_make_data)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "level", 0.5) is not None and not 0 < getattr(args, "level", 0.5) < 1:
        print("error: --level must lie in (0, 1)", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except HdcalError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
