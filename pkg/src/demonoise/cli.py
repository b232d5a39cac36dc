"""Batch command-line front end.

    demonoise lifetable     --input deaths.tsv pop.tsv --region FI20 --year 2023
    demonoise uncertainty   --input ... --indicator ex --variance 1,5
    demonoise figures       --which 1 --variance 1
    demonoise simulate      --input ... --region ITC2 --year 2023
    demonoise ingest        --input *.tsv --out canonical.csv
    demonoise poisson-check --input deaths_timeseries.csv

Every option can also come from a JSON file given with ``--config``;
command-line values win.  Exit status is 0 only when every region/sex cell
was processed; failures are listed as JSON on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, analysis, ingest
from .ckm import build_ptable
from .errors import DemoNoiseError
from .lifetable import DEFAULT_TERMINAL_AGE, build_life_table
from .simulate import validate_delta_ex, poisson_diagnostic, synthetic_schedule
from .uncertainty import NoiseConfig

log = logging.getLogger("demonoise")

DEFAULTS = {
    "input": [],
    "dataset_kind": None,
    "region": None,
    "sex": None,
    "year": None,
    "indicator": "fx,tfr,mx,ex",
    "variance": None,
    "max_dev": 5,
    "js": None,
    "mode": "all",
    "exact": False,
    "zero_fix": None,
    "replicates": 361,
    "seed": 0,
    "terminal_age": DEFAULT_TERMINAL_AGE,
    "out": None,
    "format": "csv",
    "which": None,
    "vintage": "unspecified",
    "synthetic": None,
    "ptable_out": None,
}

# per-subcommand defaults layered over DEFAULTS
COMMAND_DEFAULTS = {
    "simulate": {"variance": "2", "js": 2, "zero_fix": True},
}

MODE_COLUMNS = {
    "noise": ["value", "noise_abs", "noise_rel"],
    "stat": ["value", "stat_abs", "stat_rel"],
    "combined": ["value", "combined_abs", "combined_rel", "admixture"],
}


def _csv_list(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [str(t) for t in text]
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _floats(text):
    items = _csv_list(text)
    return None if items is None else [float(t) for t in items]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--input", nargs="+", help="Eurostat TSV(.gz) or canonical CSV files")
    common.add_argument("--dataset-kind", choices=ingest.DATASET_KINDS,
                        help="dataset kind for TSV inputs whose name does not reveal it")
    common.add_argument("--region", help="comma list of geo codes")
    common.add_argument("--sex", help="comma list of T,M,F")
    common.add_argument("--year", type=int)
    common.add_argument("--indicator", help="comma list of fx,tfr,mx,ex")
    common.add_argument("--variance", help="noise variance V, comma list for sweeps")
    common.add_argument("--max-dev", type=int, help="maximum absolute noise D")
    common.add_argument("--js", type=int, help="small-count threshold")
    common.add_argument("--mode", choices=["noise", "stat", "combined", "all"],
                        help="which uncertainty columns to emit")
    common.add_argument("--exact", action="store_true",
                        help="keep the denominator-noise term in crude-rate formulas")
    common.add_argument("--zero-fix", dest="zero_fix", action="store_true",
                        help="drop zero-count ages from the E_x noise sum")
    common.add_argument("--no-zero-fix", dest="zero_fix", action="store_false")
    common.add_argument("--replicates", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--terminal-age", type=int)
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--vintage", help="data vintage recorded in output headers")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="demonoise", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("lifetable", parents=[common], help="life tables per region/sex")
    sub.add_parser("uncertainty", parents=[common], help="uncertainty breakdowns per indicator")
    fig = sub.add_parser("figures", parents=[common], help="plot-grid data")
    fig.add_argument("--which", choices=["1", "2", "3", "4", "table1"])
    sim = sub.add_parser("simulate", parents=[common], help="Monte-Carlo check of the E_x formula")
    sim.add_argument("--synthetic", type=float, help="use a synthetic schedule of this population")
    sim.add_argument("--ptable-out", help="also write the perturbation table CSV here")
    sub.add_parser("ingest", parents=[common], help="convert inputs to canonical CSV")
    sub.add_parser("poisson-check", parents=[common], help="time-series check of the Poisson model")
    return parser


def resolve_options(argv=None) -> dict:
    ns = build_parser().parse_args(argv)
    given = vars(ns)
    opts = dict(DEFAULTS)
    opts.update(COMMAND_DEFAULTS.get(given["command"], {}))
    if given.get("config"):
        with open(given["config"], encoding="utf-8") as fh:
            file_opts = json.load(fh)
        unknown = set(file_opts) - set(DEFAULTS) - {"command"}
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        opts.update({k.replace("-", "_"): v for k, v in file_opts.items()})
    opts.update(given)
    if opts["variance"] is None:
        opts["variance"] = "1"
    if opts["js"] is None:
        opts["js"] = 0
    if opts["zero_fix"] is None:
        opts["zero_fix"] = False
    opts["variances"] = _floats(opts["variance"])
    if not opts["variances"]:
        raise SystemExit("--variance needs at least one value")
    opts["regions"] = _csv_list(opts["region"])
    opts["sexes"] = _csv_list(opts["sex"])
    opts["indicators"] = _csv_list(opts["indicator"])
    bad = set(opts["indicators"]) - set(analysis.INDICATORS)
    if bad:
        raise SystemExit(f"unknown indicators: {sorted(bad)}")
    if isinstance(opts["input"], str):
        opts["input"] = [opts["input"]]
    return opts


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(col, value, row):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if col == "E_x" or (col == "value" and row.get("indicator") == "ex") or col == "E0":
            return f"{value:.2f}"
        return f"{value:.6g}"
    return str(value)


def config_echo(opts: dict, command: str) -> dict:
    return {
        "command": command,
        "version": __version__,
        "variance": opts["variances"],
        "max_dev": opts["max_dev"],
        "js": opts["js"],
        "seed": opts["seed"],
        "zero_fix": opts["zero_fix"],
        "mode": "exact" if opts["exact"] else "approx",
        "terminal_age": opts["terminal_age"],
        "vintage": opts["vintage"],
        "inputs": [str(p) for p in opts["input"]],
    }


def render(rows, columns, opts, command, extra=None) -> str:
    echo = config_echo(opts, command)
    if extra:
        echo.update(extra)
    if opts["format"] == "json":
        clean = [{c: _jsonable(r.get(c)) for c in columns} for r in rows]
        return json.dumps({"config": echo, "rows": clean}, indent=2) + "\n"
    buf = io.StringIO()
    for k, v in echo.items():
        buf.write(f"# {k}={json.dumps(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(c, r.get(c), r) for c in columns])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return None if math.isnan(v) else float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def emit(text: str, opts: dict) -> None:
    if opts["out"]:
        Path(opts["out"]).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _frame_rows(frame: pd.DataFrame):
    return [{k: (None if (isinstance(v, float) and math.isnan(v)) else v) for k, v in r.items()}
            for r in frame.to_dict(orient="records")]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _load(opts):
    if not opts["input"]:
        raise SystemExit("--input is required for this subcommand")
    return ingest.load_inputs(opts["input"], opts["dataset_kind"])


def _selected_cells(df, opts):
    for region, sex, year in ingest.cells(df, "deaths"):
        if opts["regions"] and region not in opts["regions"]:
            continue
        if opts["sexes"] and sex not in opts["sexes"]:
            continue
        if opts["year"] is not None and year != opts["year"]:
            continue
        yield region, sex, year


def _error(region, sex, year, exc):
    return {"region": region, "sex": sex, "year": year, "error": type(exc).__name__, "message": str(exc)}


def cmd_lifetable(opts):
    df = _load(opts)
    rows, errors = [], []
    for region, sex, year in _selected_cells(df, opts):
        try:
            sched = ingest.assemble_dataset(df, region, sex, year, opts["terminal_age"], births=False).mortality_schedule()
            lt = build_life_table(sched)
        except DemoNoiseError as exc:
            errors.append(_error(region, sex, year, exc))
            continue
        for rec in lt.to_frame().to_dict(orient="records"):
            rows.append({"region": region, "sex": sex, "year": year, "flags": ";".join(sched.flags), **rec})
    cols = ["region", "sex", "year", "age", "M_x", "l_x", "L_x", "T_x", "E_x", "flags"]
    emit(render(rows, cols, opts, "lifetable"), opts)
    return errors


def cmd_uncertainty(opts):
    df = _load(opts)
    frame, errors = analysis.survey(
        df, opts["year"], opts["variances"], opts["indicators"], opts["regions"], opts["sexes"],
        "exact" if opts["exact"] else "approx", opts["zero_fix"], terminal_age=opts["terminal_age"],
    )
    keys = ["region", "sex", "year", "indicator", "age", "variance", "count", "population"]
    if opts["mode"] == "all":
        cols = analysis.BREAKDOWN_COLUMNS
    else:
        cols = keys + MODE_COLUMNS[opts["mode"]] + ["flags"]
    emit(render(_frame_rows(frame), cols, opts, "uncertainty"), opts)
    return errors


def cmd_figures(opts):
    which = opts["which"]
    if which is None:
        raise SystemExit("--which is required (1, 2, 3, 4 or table1)")
    errors = []
    v0 = opts["variances"][0]
    if which == "1":
        frame = analysis.figure1(v0)
    elif which == "2":
        frame = analysis.figure2(v0)
    elif which == "3":
        df = _load(opts)
        frame, errors = analysis.figure3(df, _year(df, opts), v0)
    elif which == "4":
        df = ingest.load_inputs(opts["input"], opts["dataset_kind"]) if opts["input"] else None
        frame, errors = analysis.figure4(df, _year(df, opts) if df is not None else None, opts["variances"])
    else:
        df = _load(opts)
        regions = opts["regions"] or ["FI20", "ES63", "ITC2"]
        frame = analysis.table1(df, regions, _year(df, opts), opts["variances"] if len(opts["variances"]) > 1 else (1.0, 5.0))
    emit(render(_frame_rows(frame), list(frame.columns), opts, f"figures:{which}"), opts)
    return errors


def _year(df, opts):
    if opts["year"] is not None:
        return opts["year"]
    years = sorted({y for _, _, y in ingest.cells(df, "deaths")})
    if not years:
        raise SystemExit("no death data in inputs")
    return years[-1]


def cmd_simulate(opts):
    cfg = NoiseConfig(opts["variances"][0], opts["max_dev"], opts["js"])
    if opts["ptable_out"]:
        build_ptable(cfg).to_csv(opts["ptable_out"])
    schedules, errors = [], []
    if opts["synthetic"]:
        schedules.append(synthetic_schedule(opts["synthetic"], opts["terminal_age"]))
    else:
        df = _load(opts)
        for region, sex, year in _selected_cells(df, opts):
            try:
                schedules.append(ingest.assemble_dataset(df, region, sex, year, opts["terminal_age"], births=False).mortality_schedule())
            except DemoNoiseError as exc:
                errors.append(_error(region, sex, year, exc))
    reports = []
    for sched in schedules:
        try:
            reports.append(validate_delta_ex(sched, cfg, opts["replicates"], opts["seed"], opts["zero_fix"]))
        except DemoNoiseError as exc:
            errors.append(_error(sched.region, sched.sex, sched.year, exc))
    if opts["format"] == "json":
        payload = {"config": config_echo(opts, "simulate"),
                   "reports": [json.loads(r.to_json()) for r in reports]}
        emit(json.dumps(payload, indent=2) + "\n", opts)
    else:
        rows = []
        for r in reports:
            for rec in r.rows():
                rows.append({"region": r.region, "sex": r.sex, "year": r.year, "replicates": r.replicates, **rec})
        cols = ["region", "sex", "year", "replicates", "age", "E_x", "analytic_delta", "sd", "sd_pooled", "rel_diff"]
        extra = {"terminal_clamps": {f"{r.region}/{r.sex}": r.terminal_clamps for r in reports}}
        emit(render(rows, cols, opts, "simulate", extra), opts)
    return errors


def cmd_ingest(opts):
    df = _load(opts)
    if opts["format"] == "json":
        emit(df.to_json(orient="records", indent=2) + "\n", opts)
        return []
    header = "\n".join(f"{k}={json.dumps(v)}" for k, v in config_echo(opts, "ingest").items())
    if opts["out"]:
        ingest.write_canonical_csv(df, opts["out"], header)
    else:
        buf = io.StringIO()
        for line in header.splitlines():
            buf.write(f"# {line}\n")
        df[ingest.COLUMNS].to_csv(buf, index=False, lineterminator="\n", float_format="%.17g")
        sys.stdout.write(buf.getvalue())
    return []


def cmd_poisson_check(opts):
    df = _load(opts)
    rows, errors = [], []
    for measure in ("deaths", "births"):
        sexes = opts["sexes"] or sorted(df.loc[df["measure"] == measure, "sex"].unique())
        for sex in sexes:
            series = ingest.event_time_series(df, measure, sex, opts["terminal_age"])
            if not series:
                continue
            try:
                diag = poisson_diagnostic(series)
            except DemoNoiseError as exc:
                errors.append({"measure": measure, "sex": sex, "error": type(exc).__name__, "message": str(exc)})
                continue
            rows.append({"measure": measure, "sex": sex, **diag.as_dict()})
    cols = ["measure", "sex", "median", "lower_quartile", "upper_quartile", "n_cells", "n_years"]
    emit(render(rows, cols, opts, "poisson-check"), opts)
    return errors


COMMANDS = {
    "lifetable": cmd_lifetable,
    "uncertainty": cmd_uncertainty,
    "figures": cmd_figures,
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "poisson-check": cmd_poisson_check,
}


def main(argv=None) -> int:
    opts = resolve_options(argv)
    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        errors = COMMANDS[opts["command"]](opts)
    except DemoNoiseError as exc:
        errors = [{"error": type(exc).__name__, "message": str(exc)}]
    if errors:
        listing = json.dumps({"errors": errors}, indent=2) + "\n"
        sys.stderr.write(listing)
        if opts["out"]:
            Path(f"{opts['out']}.errors.json").write_text(listing, encoding="utf-8")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
