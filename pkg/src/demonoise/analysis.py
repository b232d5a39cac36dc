"""Region-level surveys, V-sweeps and plot-grid data built on the core formulas."""

from __future__ import annotations

import logging
import math

import numpy as np
import pandas as pd

from . import ingest
from .errors import DemoNoiseError
from .lifetable import DEFAULT_TERMINAL_AGE, build_life_table
from .uncertainty import (
    NoiseConfig,
    UncertaintyBreakdown,
    crude_rate_uncertainty,
    life_expectancy_uncertainty_arrays,
    total_fertility_rate_uncertainty,
)

log = logging.getLogger(__name__)

INDICATORS = ("fx", "tfr", "mx", "ex")
BREAKDOWN_COLUMNS = [
    "region", "sex", "year", "indicator", "age", "variance", "count", "population",
    "value", "noise_abs", "noise_rel", "stat_abs", "stat_rel",
    "combined_abs", "combined_rel", "admixture", "flags",
]


def nuts_level(code: str) -> int:
    """NUTS level implied by a geo code (country codes are level 0)."""
    return len(code) - 2


def is_nuts2(code: str) -> bool:
    return nuts_level(code) == 2 and not code.endswith("ZZ")


def _row(region, sex, year, indicator, age, variance, count, population, b: UncertaintyBreakdown, flags=()):
    d = b.as_dict()
    return {
        "region": region, "sex": sex, "year": year, "indicator": indicator, "age": age,
        "variance": variance, "count": count, "population": population,
        "value": d["value"], "noise_abs": d["noise_abs"], "noise_rel": d["noise_rel"],
        "stat_abs": d["stat_abs"], "stat_rel": d["stat_rel"],
        "combined_abs": d["combined_abs"], "combined_rel": d["combined_rel"],
        "admixture": d["admixture"], "flags": ";".join(flags),
    }


def breakdown_rows(ds: ingest.RegionDataset, indicators, variances, mode="approx",
                   zero_fix=False, ex_ages=None):
    """Uncertainty rows for one assembled region dataset.

    Fertility indicators are emitted only for the dataset carrying sex ``T``
    (births are not split by sex).
    """
    rows = []
    base = NoiseConfig()
    sched = ds.mortality_schedule()
    fert = ds.fertility_input() if ds.sex == "T" else None
    table = None
    if "ex" in indicators:
        table = build_life_table(sched)
    for v in variances:
        cfg = base.with_variance(v)
        if "mx" in indicators:
            for a in sched.ages:
                b = crude_rate_uncertainty(sched.deaths[a], sched.avg_population[a], cfg, mode)
                rows.append(_row(ds.region, ds.sex, ds.year, "mx", int(a), v, int(sched.deaths[a]),
                                 float(sched.avg_population[a]), b, sched.flags))
        if fert is not None and "fx" in indicators:
            for i, a in enumerate(fert.ages):
                b = crude_rate_uncertainty(fert.births[i], fert.female_stock[i], cfg, mode)
                rows.append(_row(ds.region, ds.sex, ds.year, "fx", int(a), v, int(fert.births[i]),
                                 float(fert.female_stock[i]), b, fert.flags))
        if fert is not None and "tfr" in indicators and fert.ages.size:
            b = total_fertility_rate_uncertainty(fert, cfg, mode)
            rows.append(_row(ds.region, ds.sex, ds.year, "tfr", None, v, int(fert.births.sum()),
                             float(fert.female_stock.sum()), b, fert.flags))
        if table is not None:
            E, n, s, c = life_expectancy_uncertainty_arrays(sched, cfg, table, mode, zero_fix)
            ages = sched.ages if ex_ages is None else [a for a in ex_ages if a <= sched.terminal_age]
            for a in ages:
                b = UncertaintyBreakdown(float(E[a]), float(n[a]), float(s[a]), float(c[a]))
                rows.append(_row(ds.region, ds.sex, ds.year, "ex", int(a), v, None,
                                 float(sched.avg_population[a:].sum()), b, sched.flags))
    return rows


def survey(df: pd.DataFrame, year: int | None = None, variances=(1.0,), indicators=INDICATORS,
           regions=None, sexes=None, mode="approx", zero_fix=False, nuts2_only=False,
           terminal_age: int = DEFAULT_TERMINAL_AGE, ex_ages=None):
    """Uncertainty rows for every (region, sex, year) with death data.

    Returns ``(frame, errors)``; errors is a list of dicts for cells that
    could not be processed.
    """
    rows, errors = [], []
    for region, sex, yr in ingest.cells(df, "deaths"):
        if year is not None and yr != year:
            continue
        if regions and region not in regions:
            continue
        if sexes and sex not in sexes:
            continue
        if nuts2_only and not is_nuts2(region):
            continue
        try:
            ds = ingest.assemble_dataset(df, region, sex, yr, terminal_age, births="fx" in indicators or "tfr" in indicators)
            rows.extend(breakdown_rows(ds, indicators, variances, mode, zero_fix, ex_ages))
        except DemoNoiseError as exc:
            errors.append({"region": region, "sex": sex, "year": yr,
                           "error": type(exc).__name__, "message": str(exc)})
            log.warning("%s/%s/%s: %s", region, sex, yr, exc)
    return pd.DataFrame(rows, columns=BREAKDOWN_COLUMNS), errors


def headline_statistics(frame: pd.DataFrame) -> dict:
    """Distribution summaries of the noise-only relative uncertainties."""
    out = {}
    fx = frame[(frame["indicator"] == "fx") & frame["noise_rel"].notna()]["noise_rel"].astype(float)
    if len(fx):
        out["fx_median"] = float(fx.median())
        out["fx_share_below_10pct"] = float((fx < 0.10).mean())
        out["fx_share_above_1pct"] = float((fx > 0.01).mean())
        out["fx_n"] = int(len(fx))
    tfr = frame[frame["indicator"] == "tfr"]
    if len(tfr):
        rel = tfr["noise_rel"].astype(float)
        out["tfr_share_below_0.1pct"] = float((rel < 0.001).mean())
        out["tfr_regions_above_1pct"] = sorted(tfr.loc[rel > 0.01, "region"])
    for sex in ("T", "M", "F"):
        mx = frame[(frame["indicator"] == "mx") & (frame["sex"] == sex) & frame["noise_rel"].notna()]["noise_rel"]
        if len(mx):
            out[f"mx_median_{sex}"] = float(mx.astype(float).median())
            out[f"mx_share_above_10pct_{sex}"] = float((mx.astype(float) > 0.10).mean())
        ex = frame[(frame["indicator"] == "ex") & (frame["sex"] == sex)]
        if len(ex):
            rel = ex["noise_rel"].astype(float)
            out[f"ex_median_{sex}"] = float(rel.median())
            out[f"ex_regions_above_1pct_{sex}"] = sorted(set(ex.loc[rel > 0.01, "region"]))
    return out


def table1(df: pd.DataFrame, regions, year: int, variances=(1.0, 5.0), terminal_age=DEFAULT_TERMINAL_AGE):
    """E_0 with statistical and combined uncertainties per region and sex."""
    rows = []
    for region in regions:
        for sex in ("T", "M", "F"):
            ds = ingest.assemble_dataset(df, region, sex, year, terminal_age, births=False)
            sched = ds.mortality_schedule()
            lt = build_life_table(sched)
            row = {"region": region, "sex": sex, "population": sched.total_population,
                   "E0": float(lt.life_expectancy[0])}
            for v in variances:
                E, n, s, c = life_expectancy_uncertainty_arrays(sched, NoiseConfig().with_variance(v), lt)
                row["stat_abs"] = float(s[0])
                row["stat_rel"] = float(s[0] / E[0])
                row[f"combined_abs_V{v:g}"] = float(c[0])
                row[f"admixture_V{v:g}"] = float(c[0] / s[0] - 1.0)
            rows.append(row)
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# figure grids
# ---------------------------------------------------------------------------

def _decades(lo_exp, hi_exp, per_decade):
    n = (hi_exp - lo_exp) * per_decade + 1
    return 10.0 ** np.linspace(lo_exp, hi_exp, n)


def crude_rate_grid(variance=1.0, pop_exp=(2, 7), rate_exp=(-6, 0), per_decade=4):
    """Noise-only relative uncertainty over a (population, rate) grid.

    ``count = rate * population`` need not be an integer here; rows with
    ``count < 1`` lie beyond the one-event contour and are flagged.
    """
    delta = math.sqrt(variance)
    pops = _decades(*pop_exp, per_decade)
    rates = _decades(*rate_exp, per_decade)
    P, R = np.meshgrid(pops, rates, indexing="ij")
    count = P * R
    return pd.DataFrame({
        "population": P.ravel(),
        "rate": R.ravel(),
        "count": count.ravel(),
        "noise_rel": delta / count.ravel(),
        "contour_rate": 1.0 / P.ravel(),
        "beyond_contour": count.ravel() < 1.0,
        "variance": variance,
    })


def figure1(variance=1.0, **kw):
    return crude_rate_grid(variance, **kw).rename(
        columns={"population": "w_x", "rate": "f_x", "count": "b_x", "contour_rate": "f_x_at_b1"})


def figure2(variance=1.0, **kw):
    return crude_rate_grid(variance, **kw).rename(
        columns={"population": "B_x", "rate": "M_x", "count": "D_x", "contour_rate": "M_x_at_D1"})


def figure3(df: pd.DataFrame, year: int, variance=1.0, ages=(0, 30, 80), sex="T"):
    frame, errors = survey(df, year, (variance,), ("ex",), sexes=[sex], nuts2_only=True, ex_ages=ages)
    out = frame[["region", "sex", "age", "value", "noise_rel"]].copy()
    pops = {}
    for region in out["region"].unique():
        try:
            pops[region] = ingest.assemble_dataset(df, region, sex, year, births=False).mortality_schedule().total_population
        except DemoNoiseError:
            pops[region] = np.nan
    out.insert(1, "total_population", out["region"].map(pops))
    return out, errors


def admixture_curves(variances=(1.0, 2.0, 5.0), counts=None):
    """Analytic admixture sqrt(1+V/x)-1 and its linear approximation."""
    counts = _decades(0, 5, 10) if counts is None else np.asarray(counts, dtype=float)
    rows = []
    for v in variances:
        for x in counts:
            rows.append({
                "variance": v,
                "count": x,
                "stat_rel": 1.0 / math.sqrt(x),
                "admixture": math.expm1(0.5 * math.log1p(v / x)),
                "admixture_linear": v / (2.0 * x),
            })
    return pd.DataFrame(rows)


def figure4(df: pd.DataFrame | None = None, year: int | None = None, variances=(1.0, 2.0, 5.0),
            ages=(0, 30, 80)):
    curves = admixture_curves(variances)
    curves.insert(0, "panel", "analytic")
    if df is None or df.empty:
        return curves, []
    frame, errors = survey(df, year, variances, ("ex",), nuts2_only=True, ex_ages=ages)
    scatter = frame[["region", "sex", "age", "variance", "population", "stat_rel", "admixture"]].copy()
    scatter.insert(0, "panel", "ex_scatter")
    return pd.concat([curves, scatter], ignore_index=True), errors

