"""Command-line front end.

Subcommands: ``ingest`` (alias ``info``), ``fit``, ``compare``, ``predict``,
``deflate`` and ``simulate``; ``--self-check`` runs the oracle battery.

Exit codes: 0 success, 2 parse error (unreadable or malformed input), 3
non-convergence, 4 validation error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .fit_em import EmConfig, FitResult, fit_base, fit_zero_inflated
from .fit_mm import MmConfig, fit_zero_modified
from .io import (
    ContingencyTable, ParseError, RunManifest, contingency_csv_text, detect_format, dumps, file_digest,
    header_only_rows_csv, ingest, read_profiles_csv, rows_csv_text, thread_cap, write_manifest, write_text,
)
from .multivariate import moments, sample_joint
from .multivariate.spec import ALL_FAMILIES, Family, ModelSpec, ParameterSet
from .observations import ObservationSet
from .univariate import MarginKind

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NONCONVERGENCE = 3
EXIT_VALIDATION = 4
EXIT_SELF_CHECK = 1

TIE_TOLERANCE = 0.005
SIG_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))
SIG_LEGEND = "Signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05"
DESIGN_STREAM = 0x5EED


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- model plumbing ----------------------------------------------------------------


def fit_model(data: ObservationSet, spec: ModelSpec, config: Optional[EmConfig] = None) -> FitResult:
    """Fit any family with the matching engine (Newton/EM, EM or MM)."""
    if spec.layer == "base":
        return fit_base(data, spec, config)
    if spec.layer == "zi":
        return fit_zero_inflated(data, spec, config)
    if config is not None and not isinstance(config, MmConfig):
        config = MmConfig(**vars(config))
    return fit_zero_modified(data, spec, config)


def parse_covariates(text: str, spec_components: list, p: int):
    """``none``, ``all``, a column list ``1,3`` (every component) or ``gamma:1,2;beta1:3``."""
    text = (text or "none").strip()
    if text.lower() in ("none", "all"):
        return text.lower()

    def cols(s):
        try:
            out = tuple(int(c) for c in s.split(",") if c.strip())
        except ValueError:
            raise CliError(f"bad covariate column list {s!r}", EXIT_VALIDATION) from None
        bad = [c for c in out if not 1 <= c <= p]
        if bad:
            raise CliError(f"covariate column(s) {bad} outside 1..{p}", EXIT_VALIDATION)
        return out

    if ":" not in text:
        c = cols(text)
        return {comp: c for comp in spec_components}
    mask = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        name, _, spec_cols = part.partition(":")
        mask[name.strip()] = cols(spec_cols)
    return mask


def build_spec(family: str, margins: Optional[str], covariates: str, p: int) -> ModelSpec:
    try:
        fam = Family.parse(family)
        kinds = None
        if margins:
            kinds = tuple(MarginKind.parse(k) for k in margins.split(","))
            if len(kinds) == 1:
                kinds = kinds * 2
        base = ModelSpec(fam, 2, kinds)
        mask = parse_covariates(covariates, base.components(), p)
        if mask == "all" and p == 0:
            mask = "none"
        return ModelSpec.build(fam, 2, kinds, mask, p)
    except CliError:
        raise
    except ValueError as err:
        raise CliError(str(err), EXIT_VALIDATION) from None


def make_config(args, family: Family) -> EmConfig:
    kw = dict(max_iter=args.max_iter, loglik_tol=args.tol, param_tol=args.param_tol,
              compute_se=not getattr(args, "no_se", False))
    try:
        return MmConfig(**kw) if family.layer == "zm" else EmConfig(**kw)
    except ValueError as err:
        raise CliError(str(err), EXIT_VALIDATION) from None


def load(path, fmt=None) -> ObservationSet:
    try:
        return ingest(path, fmt)
    except FileNotFoundError:
        raise CliError(f"{path}: no such file", EXIT_PARSE) from None
    except ParseError as err:
        raise CliError(str(err), EXIT_PARSE) from None
    except ValueError as err:
        raise CliError(f"{path}: {err}", EXIT_VALIDATION) from None


# -- formatting --------------------------------------------------------------------


def g6(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return f"{v:.6g}"


def stars(t) -> str:
    if t is None or not np.isfinite(t):
        return ""
    p = math.erfc(abs(t) / math.sqrt(2.0))
    for level, mark in SIG_LEVELS:
        if p < level:
            return mark
    return ""


def _table(header: list, rows: list) -> str:
    widths = [max(len(str(r[k])) for r in [header] + rows) for k in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) if k == 0 else str(c).rjust(w)  # noqa: E731
                              for k, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(header)] + [fmt(r) for r in rows])


def _title(family: Family) -> str:
    return family.label if family.label == family.value else f"{family.label} ({family.value})"


def coefficient_report(fit: FitResult) -> str:
    rows = []
    for c in fit.coefficient_table():
        t = c["t_ratio"]
        rows.append([c["name"], g6(c["estimate"]), g6(c["std_error"]),
                     (g6(t) + stars(t)) if t is not None else "NA"])
    lines = [
        f"{_title(fit.spec.family)}, fitted by {fit.method}",
        f"n = {g6(fit.n)}  parameters = {fit.n_params}  iterations = {fit.iterations}"
        f"  converged = {'yes' if fit.converged else 'no'}",
        "",
        _table(["Parameter", "Estimate", "Std.Error", "t-ratio"], rows),
        SIG_LEGEND,
        "",
        f"LogLik = {g6(fit.loglik)}  AIC = {g6(fit.aic)}  BIC = {g6(fit.bic)}",
    ]
    if fit.mean_pi0 is not None:
        lines.append(f"mean pi0 = {g6(fit.mean_pi0)}  mean pi0' = {g6(fit.mean_pi0_prime)}")
    lines += [f"note: {n}" for n in fit.notes]
    return "\n".join(lines)


def fit_document(fit: FitResult, data: ObservationSet) -> dict:
    doc = fit.to_dict()
    doc["design_width"] = data.p
    doc["covariate_names"] = list(data.covariate_names)
    return doc


def _summary_lines(data: ObservationSet) -> list:
    s = data.summary()
    zero = float(data.weights[data.zero_rows].sum())
    lines = [f"n = {g6(s['n'])}  m = {s['m']}  p = {s['p']}  distinct rows = {s['rows']}",
             f"all-zero rows = {g6(zero)}  zero fraction = {g6(s['zero_fraction'])}"]
    corr = np.asarray(s["correlation"])
    for i in range(data.m):
        for j in range(i + 1, data.m):
            lines.append(f"correlation(z{i + 1}, z{j + 1}) = {g6(corr[i, j])}")
    return lines


def _emit(path, text: str, manifest: RunManifest, start: float):
    write_text(path, text)
    manifest.wall_time = time.perf_counter() - start
    write_manifest(path, manifest)


# -- commands ----------------------------------------------------------------------


def cmd_ingest(args) -> int:
    data = load(args.input, args.format)
    print("\n".join(_summary_lines(data)))
    if args.out:
        start = time.perf_counter()
        text = rows_csv_text(data)
        _emit(args.out, text, RunManifest("ingest", {"format": args.format}, None, file_digest(args.input)),
              start)
    return EXIT_OK


def cmd_fit(args) -> int:
    start = time.perf_counter()
    data = load(args.input, args.format)
    spec = build_spec(args.family, args.margins, args.covariates, data.p)
    config = make_config(args, spec.family)
    try:
        fit = fit_model(data, spec, config)
    except ValueError as err:
        raise CliError(str(err), EXIT_VALIDATION) from None
    print(coefficient_report(fit))
    if args.out:
        cfg = {"family": spec.family.value, "spec": spec.to_dict(), "max_iter": args.max_iter,
               "tol": args.tol, "param_tol": args.param_tol, "se": not args.no_se}
        _emit(args.out, dumps(fit_document(fit, data)),
              RunManifest("fit", cfg, args.seed, file_digest(args.input)), start)
    return EXIT_OK if fit.converged else EXIT_NONCONVERGENCE


def parse_families(text: str) -> list:
    if text.strip().lower() in ("all15", "all"):
        return list(ALL_FAMILIES)
    try:
        return [Family.parse(f) for f in text.split(",") if f.strip()]
    except ValueError as err:
        raise CliError(str(err), EXIT_VALIDATION) from None


def flag_best(values: list, tol: float = TIE_TOLERANCE) -> list:
    finite = [v for v in values if v is not None and np.isfinite(v)]
    if not finite:
        return [False] * len(values)
    best = min(finite)
    return [bool(v is not None and np.isfinite(v) and v - best <= tol) for v in values]


def compare_rows(data: ObservationSet, families: list, args) -> list:
    """Fit each family; failures become rows with an ``error`` entry."""

    def one(fam):
        try:
            spec = build_spec(fam.value, args.margins, args.covariates, data.p)
            fit = fit_model(data, spec, make_config(args, fam))
            return {"family": fam.value, "label": fam.label, "n_params": fit.n_params, "loglik": fit.loglik,
                    "aic": fit.aic, "bic": fit.bic, "converged": fit.converged, "error": None}
        except (ValueError, ArithmeticError, CliError, RuntimeError) as err:
            return {"family": fam.value, "label": fam.label, "n_params": None, "loglik": None, "aic": None,
                    "bic": None, "converged": False, "error": str(err)}

    with ThreadPoolExecutor(max_workers=min(thread_cap(), len(families))) as pool:
        rows = list(pool.map(one, families))
    best_aic = flag_best([r["aic"] for r in rows])
    best_bic = flag_best([r["bic"] for r in rows])
    for r, a, b in zip(rows, best_aic, best_bic):
        r["best_aic"], r["best_bic"] = a, b
    return rows


def compare_report(rows: list) -> str:
    table = []
    for r in rows:
        if r["error"] is not None:
            table.append([r["label"], "-", "-", "-", "-", f"failed: {r['error']}"])
            continue
        flags = [s for s, f in (("best AIC", r["best_aic"]), ("best BIC", r["best_bic"])) if f]
        if not r["converged"]:
            flags.append("not converged")
        table.append([r["label"], str(r["n_params"]), g6(r["loglik"]), g6(r["aic"]), g6(r["bic"]),
                      ", ".join(flags)])
    return _table(["Model", "Parameters", "LogLik", "AIC", "BIC", ""], table)


def cmd_compare(args) -> int:
    start = time.perf_counter()
    data = load(args.input, args.format)
    families = parse_families(args.families)
    rows = compare_rows(data.compress(), families, args)
    print(compare_report(rows))
    if args.out:
        cfg = {"families": [f.value for f in families], "covariates": args.covariates,
               "margins": args.margins, "max_iter": args.max_iter, "tol": args.tol, "param_tol": args.param_tol}
        _emit(args.out, dumps({"rows": rows}), RunManifest("compare", cfg, args.seed, file_digest(args.input)),
              start)
    ok = all(r["error"] is None and r["converged"] for r in rows)
    return EXIT_OK if ok else EXIT_NONCONVERGENCE


def predict_profiles(fit_doc: dict, profiles: list) -> list:
    spec = ModelSpec.from_dict(fit_doc["spec"])
    params = ParameterSet.from_dict(fit_doc["params"])
    width = fit_doc.get("design_width")
    if width is None:
        width = max([max(c) for c in spec.covariate_mask.values()] + [0])
    out = []
    for prof in profiles:
        if prof.values.size != width:
            raise CliError(f"profile {prof.name!r} has {prof.values.size} covariates; the fit uses {width}",
                           EXIT_VALIDATION)
        summary = moments(spec, params, prof.design_row)
        d = {"name": prof.name, **summary.to_dict()}
        d["overdispersion"] = summary.total_variance / summary.total_mean if summary.total_mean > 0 else None
        out.append(d)
    return out


def cmd_predict(args) -> int:
    start = time.perf_counter()
    try:
        doc = json.loads(Path(args.fit).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"{args.fit}: no such file", EXIT_PARSE) from None
    except json.JSONDecodeError as err:
        raise CliError(f"{args.fit}: line {err.lineno}: {err.msg}", EXIT_PARSE) from None
    try:
        profiles = read_profiles_csv(args.profiles)
    except FileNotFoundError:
        raise CliError(f"{args.profiles}: no such file", EXIT_PARSE) from None
    except ParseError as err:
        raise CliError(str(err), EXIT_PARSE) from None
    try:
        rows = predict_profiles(doc, profiles)
    except (KeyError, ValueError) as err:
        raise CliError(f"invalid fit document: {err}", EXIT_VALIDATION) from None
    table = [[r["name"]] + [g6(v) for v in r["mean"]] + [g6(r["total_mean"]), g6(r["total_variance"]),
                                                         g6(r["overdispersion"])] for r in rows]
    m = len(rows[0]["mean"]) if rows else 2
    header = ["Profile"] + [f"E[z{j + 1}]" for j in range(m)] + ["E[total]", "Var[total]", "Var/E"]
    print(_table(header, table))
    if args.out:
        cfg = {"fit": str(args.fit), "profiles": str(args.profiles)}
        _emit(args.out, dumps({"profiles": rows}), RunManifest("predict", cfg, None, file_digest(args.fit)),
              start)
    return EXIT_OK


def deflate(data: ObservationSet, keep_count: Optional[int] = None, keep_fraction: Optional[float] = None,
            seed: int = 0) -> ObservationSet:
    """Keep every nonzero row and a seeded random subset of the all-zero rows.

    The subset is a multivariate hypergeometric draw over the distinct zero
    rows, so weighted (contingency) and expanded inputs behave alike.
    ``keep_fraction`` keeps ``round(fraction * zeros)`` rows.
    """
    if (keep_count is None) == (keep_fraction is None):
        raise ValueError("give exactly one of keep_count and keep_fraction")
    data = data.compress()
    zero = data.zero_rows
    counts = data.weights[zero]
    if np.any(counts % 1 != 0):
        raise ValueError("deflation needs integer weights")
    counts = counts.astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        raise ValueError("the data have no all-zero rows")
    if keep_fraction is not None:
        if not 0.0 < keep_fraction <= 1.0:
            raise ValueError("keep_fraction must lie in (0, 1]")
        keep_count = int(math.floor(keep_fraction * total + 0.5))
    if not 0 <= keep_count <= total:
        raise ValueError(f"keep_count must lie in 0..{total}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed])))
    kept = rng.multivariate_hypergeometric(counts, keep_count) if keep_count < total else counts
    w = data.weights.copy()
    w[zero] = kept
    keep = w > 0
    return ObservationSet(data.counts[keep], data.design[keep], w[keep], data.covariate_names)


def cmd_deflate(args) -> int:
    start = time.perf_counter()
    fmt = args.format or _detect(args.input)
    data = load(args.input, fmt)
    try:
        out = deflate(data, args.keep_count, args.keep_fraction, args.seed)
    except ValueError as err:
        raise CliError(str(err), EXIT_VALIDATION) from None
    print("\n".join(_summary_lines(out)))
    if args.out:
        if fmt == "contingency-csv":
            text = contingency_csv_text(ContingencyTable.from_observations(out))
        else:
            text = rows_csv_text(out)
        cfg = {"keep_count": args.keep_count, "keep_fraction": args.keep_fraction, "format": fmt}
        _emit(args.out, text, RunManifest("deflate", cfg, args.seed, file_digest(args.input)), start)
    return EXIT_OK


def _detect(path):
    try:
        return detect_format(path)
    except FileNotFoundError:
        raise CliError(f"{path}: no such file", EXIT_PARSE) from None
    except ParseError as err:
        raise CliError(str(err), EXIT_PARSE) from None


def simulation_design(cov, n: int, seed: int) -> np.ndarray:
    """Design for ``simulate``: intercept only, one fixed row, or random binary columns.

    ``cov`` is ``None``, a list of covariate values (without the intercept),
    or ``{"binary": {"p": 3, "prob": 0.5}}``.  Binary designs come from a
    stream separate from the count draws.
    """
    if cov is None:
        return np.ones((n, 1))
    if isinstance(cov, list):
        row = np.concatenate([[1.0], np.asarray(cov, dtype=float)])
        return np.tile(row, (n, 1))
    if isinstance(cov, dict) and "binary" in cov:
        b = cov["binary"]
        p = int(b["p"])
        prob = np.broadcast_to(np.asarray(b.get("prob", 0.5), dtype=float), (p,))
        if p < 0 or np.any((prob < 0) | (prob > 1)):
            raise ValueError("binary design needs p >= 0 and probabilities in [0, 1]")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, DESIGN_STREAM])))
        return np.column_stack([np.ones(n), (rng.random((n, p)) < prob).astype(float)])
    raise ValueError("covariates must be null, a list of values or {'binary': {...}}")


def simulate(doc: dict, n: int, seed: int) -> tuple:
    """Returns ``(ObservationSet or None, p)``; ``None`` when ``n == 0``."""
    spec = ModelSpec.from_dict(doc["spec"])
    params = ParameterSet.from_dict(doc["params"])
    spec.validate(params)
    X = simulation_design(doc.get("covariates"), n, seed)
    p = X.shape[1] - 1
    if n == 0:
        return None, p
    return sample_joint(spec, params, X, seed=seed), p


def cmd_simulate(args) -> int:
    start = time.perf_counter()
    if args.n < 0:
        raise CliError("n must be nonnegative", EXIT_VALIDATION)
    try:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"{args.spec}: no such file", EXIT_PARSE) from None
    except json.JSONDecodeError as err:
        raise CliError(f"{args.spec}: line {err.lineno}: {err.msg}", EXIT_PARSE) from None
    try:
        data, p = simulate(doc, args.n, args.seed)
    except (KeyError, TypeError, ValueError) as err:
        raise CliError(f"invalid model document: {err}", EXIT_VALIDATION) from None
    m = ModelSpec.from_dict(doc["spec"]).m
    text = header_only_rows_csv(m, p) if data is None else rows_csv_text(data)
    _emit(args.out, text, RunManifest("simulate", {"model": doc, "n": args.n}, args.seed,
                                      file_digest(args.spec)), start)
    if data is not None:
        print("\n".join(_summary_lines(data)))
    return EXIT_OK


def cmd_self_check() -> int:
    from .oracle import self_check

    results = self_check()
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(r[1] for r in results) else EXIT_SELF_CHECK


# -- argument parsing --------------------------------------------------------------


def _fit_options(p, with_family: bool):
    if with_family:
        p.add_argument("--family", required=True, help="family code (e.g. MZMNB1) or label")
    p.add_argument("--margins", help="hurdle margin kinds, e.g. usnb or ztp,usnb")
    p.add_argument("--covariates", default="none",
                   help="none, all, a column list like 1,3, or gamma:1,2;beta1:3")
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-8, help="relative log-likelihood tolerance")
    p.add_argument("--param-tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest")
    p.add_argument("--no-se", action="store_true", help="skip standard errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mzcount", description="Multivariate zero-modified count models.")
    parser.add_argument("--version", action="version", version=f"mzcount {__version__}")
    parser.add_argument("--self-check", action="store_true", help="run the oracle battery and exit")
    sub = parser.add_subparsers(dest="command")
    fmt = dict(choices=["rows-csv", "contingency-csv"], help="input format (detected from the header)")

    for name in ("ingest", "info"):
        p = sub.add_parser(name, help="validate a data file and summarize it")
        p.add_argument("input")
        p.add_argument("--format", **fmt)
        p.add_argument("--out", help="write the data as rows-csv")
        p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit one model")
    p.add_argument("input")
    p.add_argument("--format", **fmt)
    _fit_options(p, True)
    p.add_argument("--out", help="write the fit as JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="fit several families and compare AIC/BIC")
    p.add_argument("input")
    p.add_argument("--format", **fmt)
    p.add_argument("--families", default="all15", help="all15 or a comma-separated list")
    _fit_options(p, False)
    p.add_argument("--out", help="write the table as JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("predict", help="moments of the counts for risk profiles")
    p.add_argument("--fit", required=True, help="JSON written by 'fit --out'")
    p.add_argument("--profiles", required=True, help="CSV with columns name,x1..xp")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("deflate", help="subsample the all-zero rows")
    p.add_argument("input")
    p.add_argument("--format", **fmt)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--keep-count", type=int)
    g.add_argument("--keep-fraction", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_deflate)

    p = sub.add_parser("simulate", help="draw data from a model")
    p.add_argument("--spec", required=True, help="JSON with spec, params and optional covariates")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.self_check:
        return cmd_self_check()
    if args.command is None:
        parser.print_help()
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except CliError as err:
        print(f"mzcount: error: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
