"""Batch command line front end.

Subcommands:
  estimate     per-year top shares from tabulation + denominator CSVs
  diagnostics  per-year class counts and fractile distances
  synth        synthetic-distribution accuracy benchmark
  compare      score both estimators against a user micro-sample CSV

Output is CSV or JSON, written to --out or stdout. Artifacts are a pure
function of the inputs and flags: re-running produces identical bytes.
Exit status: 0 all rows succeeded, 2 some rows failed, 1 bad configuration
or unreadable input.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys

from . import maxent, microbench, pareto
from .errors import FractileNotCoveredError, ParseError, TopsharesError
from .tabulation import cumulate, parse_denominators, parse_tabulations

DEFAULT_FRACTILES = (0.10, 0.05, 0.01, 0.005, 0.001, 0.0001)

MARKER = "-"


def _fractile_header(p: float) -> str:
    """Appendix-style column name: 0.05 -> 'P95-100'."""
    lower = 100.0 * (1.0 - p)
    text = f"{lower:.10f}".rstrip("0").rstrip(".")
    return f"P{text}-100"


def _parse_fractiles(text: str) -> list[float]:
    out = []
    for piece in text.split(","):
        p = float(piece)
        if not 0.0 < p < 1.0:
            raise ValueError(f"fractile {p} must be in (0, 1)")
        out.append(p)
    if not out:
        raise ValueError("empty fractile list")
    if any(b >= a for a, b in zip(out, out[1:])):
        raise ValueError("fractiles must be strictly decreasing")
    return out


def _load_inputs(args):
    with open(args.denominators, "r", encoding="utf-8") as fh:
        denominators = parse_denominators(fh)
    with open(args.input, "r", encoding="utf-8") as fh:
        return parse_tabulations(fh, denominators)


def _emit(args, payload_rows, fieldnames, meta):
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in payload_rows:
            writer.writerow(row)
        text = buf.getvalue()
    else:
        text = json.dumps({"meta": meta, "rows": payload_rows},
                          sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _estimate_rows(tabs, fractiles, methods, allow_extrapolation):
    rows = []
    any_error = False
    for tab in tabs:
        stats = cumulate(tab)
        density = None
        density_error = None
        if "ME" in methods:
            try:
                density = maxent.build_density(stats)
            except TopsharesError as err:
                density_error = type(err).__name__
        for p in fractiles:
            for method in methods:
                row = {
                    "year": tab.year,
                    "fractile": repr(p),
                    "method": method,
                    "share_pct": MARKER,
                    "share_pct_full": "",
                    "threshold": "",
                    "top_income": "",
                    "bracket": "",
                    "extrapolated": "",
                    "status": "ok",
                }
                if method == "ME" and density is None:
                    row["status"] = f"error:{density_error}"
                    any_error = True
                    rows.append(row)
                    continue
                try:
                    if method == "PI":
                        est = pareto.pi_share_from_stats(stats, p)
                    else:
                        est = maxent.me_share_from_density(density, p)
                except FractileNotCoveredError:
                    row["status"] = "uncovered"
                    rows.append(row)
                    continue
                except (TopsharesError, ValueError) as err:
                    row["status"] = f"error:{type(err).__name__}"
                    any_error = True
                    rows.append(row)
                    continue
                if est.extrapolated and not allow_extrapolation:
                    row["status"] = "extrapolation_disabled"
                    rows.append(row)
                    continue
                row.update({
                    "share_pct": f"{100.0 * est.share:.2f}",
                    "share_pct_full": repr(100.0 * est.share),
                    "threshold": repr(est.threshold),
                    "top_income": repr(est.top_income),
                    "bracket": "" if est.bracket is None else est.bracket,
                    "extrapolated": "true" if est.extrapolated else "false",
                    "status": "extrapolated" if est.extrapolated else "ok",
                })
                rows.append(row)
    return rows, any_error


def cmd_estimate(args) -> int:
    fractiles = _parse_fractiles(args.fractiles)
    methods = {"pi": ("PI",), "me": ("ME",), "both": ("PI", "ME")}[args.method]
    tabs = _load_inputs(args)
    rows, any_error = _estimate_rows(tabs, fractiles, methods,
                                     args.allow_extrapolation)
    meta = {"command": "estimate", "fractiles": fractiles,
            "methods": list(methods)}
    if args.layout == "appendix":
        headers = [_fractile_header(p) for p in fractiles]
        wide = []
        for tab_year in sorted({r["year"] for r in rows}):
            for method in methods:
                wrow = {"Year": tab_year, "method": method}
                for p, header in zip(fractiles, headers):
                    match = [r for r in rows
                             if r["year"] == tab_year and r["method"] == method
                             and r["fractile"] == repr(p)]
                    wrow[header] = match[0]["share_pct"] if match else MARKER
                wide.append(wrow)
        _emit(args, wide, ["Year", "method", *headers], meta)
    else:
        fieldnames = ["year", "fractile", "method", "share_pct",
                      "share_pct_full", "threshold", "top_income", "bracket",
                      "extrapolated", "status"]
        _emit(args, rows, fieldnames, meta)
    return 2 if any_error else 0


def cmd_diagnostics(args) -> int:
    fractiles = _parse_fractiles(args.fractiles)
    tabs = _load_inputs(args)
    rows = []
    any_error = False
    for tab in tabs:
        stats = cumulate(tab)
        for p in fractiles:
            row = {"year": tab.year, "classes": tab.num_brackets,
                   "fractile": repr(p), "selected_fraction": "",
                   "distance_pp": "", "bracket": "", "threshold": "",
                   "status": "ok"}
            try:
                fit = pareto.select_bracket(stats, p)
            except FractileNotCoveredError:
                row["status"] = "uncovered"
                rows.append(row)
                continue
            except (TopsharesError, ValueError) as err:
                row["status"] = f"error:{type(err).__name__}"
                any_error = True
                rows.append(row)
                continue
            row.update({
                "selected_fraction": repr(fit.top_fraction),
                "distance_pp": repr(100.0 * (fit.top_fraction - p)),
                "bracket": fit.bracket,
                "threshold": repr(fit.threshold),
            })
            rows.append(row)
    fieldnames = ["year", "classes", "fractile", "selected_fraction",
                  "distance_pp", "bracket", "threshold", "status"]
    _emit(args, rows, fieldnames, {"command": "diagnostics"})
    return 2 if any_error else 0


def _report_rows(report):
    cells = [{
        "trial": c.trial, "classes": c.classes, "fractile": repr(c.fractile),
        "method": c.method,
        "estimate": "" if c.estimate is None else repr(c.estimate),
        "oracle": repr(c.oracle),
        "rel_error": "" if c.rel_error is None else repr(c.rel_error),
        "status": c.status,
    } for c in report.cells]
    summaries = [{
        "method": s.method, "classes": s.classes, "fractile": repr(s.fractile),
        "trials_ok": s.trials_ok, "trials_failed": s.trials_failed,
        "mean_rel_error": repr(s.mean_rel_error),
        "mse_rel_error": repr(s.mse_rel_error),
        "mse_share_level": repr(s.mse_share_level),
        "mse_share_pp": repr(s.mse_share_pp),
    } for s in report.summaries]
    return cells, summaries


def _emit_report(args, report, meta) -> int:
    cells, summaries = _report_rows(report)
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(cells[0]), lineterminator="\n")
        writer.writeheader()
        for row in cells:
            writer.writerow(row)
        buf.write("\n")
        swriter = csv.DictWriter(buf, fieldnames=list(summaries[0]),
                                 lineterminator="\n")
        swriter.writeheader()
        for row in summaries:
            swriter.writerow(row)
        text = buf.getvalue()
    else:
        text = json.dumps({"meta": meta, "cells": cells,
                           "summaries": summaries},
                          sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 2 if any(c["status"] != "ok" for c in cells) else 0


def cmd_synth(args) -> int:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = microbench.BenchmarkSpec.from_json(fh.read())
    else:
        spec = microbench.BenchmarkSpec(
            dist=microbench.ParetoDist(exponent=2.0, scale=1.0))
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.classes:
        overrides["classes"] = tuple(int(k) for k in args.classes.split(","))
    if args.fractiles:
        overrides["fractiles"] = tuple(_parse_fractiles(args.fractiles))
    if args.size is not None:
        overrides["size"] = args.size
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    report = microbench.run_protocol(spec)
    return _emit_report(args, report, {"command": "synth", "spec": spec.to_dict()})


def cmd_compare(args) -> int:
    with open(args.micro, "r", encoding="utf-8") as fh:
        sample = microbench.load_micro_csv(fh)
    fractiles = _parse_fractiles(args.fractiles)
    classes = tuple(int(k) for k in args.classes.split(",")) if args.classes \
        else (8, 14, 20, 30)
    cells = microbench.evaluate_sample(sample, classes, fractiles)
    cells.sort(key=lambda c: (c.trial, c.classes, -c.fractile, c.method))
    report = microbench.ErrorReport(
        cells=tuple(cells), summaries=microbench._summarize(cells))
    return _emit_report(args, report, {"command": "compare",
                                       "classes": list(classes),
                                       "fractiles": fractiles})


def _add_io_flags(sub, needs_tabulation=True):
    if needs_tabulation:
        sub.add_argument("--input", required=True,
                         help="tabulation CSV (year,lower_threshold,returns,income_sum)")
        sub.add_argument("--denominators", required=True,
                         help="denominator CSV (year,population,total_income,income_unit)")
    sub.add_argument("--format", choices=("csv", "json"), default="csv")
    sub.add_argument("--out", help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topshares",
        description="Top income shares from grouped tax tabulations.")
    subs = parser.add_subparsers(dest="command", required=True)

    est = subs.add_parser("estimate", help="per-year top share table")
    _add_io_flags(est)
    est.add_argument("--method", choices=("pi", "me", "both"), default="both")
    est.add_argument("--fractiles",
                     default=",".join(repr(p) for p in DEFAULT_FRACTILES))
    est.add_argument("--allow-extrapolation", action="store_true",
                     help="emit values for fractiles deeper than the top bracket")
    est.add_argument("--layout", choices=("long", "appendix"), default="long")
    est.set_defaults(func=cmd_estimate)

    diag = subs.add_parser("diagnostics",
                           help="class counts and fractile distances per year")
    _add_io_flags(diag)
    diag.add_argument("--fractiles", default="0.10,0.01")
    diag.set_defaults(func=cmd_diagnostics)

    synth = subs.add_parser("synth", help="synthetic accuracy benchmark")
    _add_io_flags(synth, needs_tabulation=False)
    synth.add_argument("--spec", help="benchmark spec JSON")
    synth.add_argument("--trials", type=int)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--size", type=int)
    synth.add_argument("--classes", help="comma list of class counts")
    synth.add_argument("--fractiles")
    synth.set_defaults(func=cmd_synth)

    comp = subs.add_parser("compare",
                           help="score estimators against a micro-sample CSV")
    _add_io_flags(comp, needs_tabulation=False)
    comp.add_argument("--micro", required=True,
                      help="micro CSV (income,weight)")
    comp.add_argument("--classes", help="comma list of class counts")
    comp.add_argument("--fractiles", default="0.10,0.05,0.01")
    comp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ParseError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
