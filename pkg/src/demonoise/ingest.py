"""Read Eurostat bulk TSV files and the canonical long CSV format.

Both readers return a long DataFrame with one row per
(measure, region, sex, age, year) cell:

    region, sex, age, year, measure, value, flag

``age`` holds normalised labels: ``"0"``, ``"42"``, ``"85+"``, ``"open"``,
``"<15"``, ``"15-19"``, ``"TOTAL"``, ``"UNK"``.  Missing values (``:`` in
Eurostat files) are NaN, never zero.
"""

from __future__ import annotations

import gzip
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import MalformedHeader, MissingFragment, NonNumericValue, UnknownAgeCode
from .lifetable import DEFAULT_TERMINAL_AGE, MortalitySchedule
from .uncertainty import FertilityInput

log = logging.getLogger(__name__)

COLUMNS = ["region", "sex", "age", "year", "measure", "value", "flag"]
DATASET_KINDS = ("population", "deaths", "births", "lifetable")

# filename fragment -> dataset kind
_KIND_HINTS = {
    "d2jan": "population",
    "pjan": "population",
    "magec": "deaths",
    "fagec": "births",
    "mlife": "lifetable",
}

_LIFETABLE_COLUMNS = {
    "DEATHRATE": "M_x",
    "SURVIVORS": "l_x",
    "PYLIVED": "L_x",
    "TOTPYLIVED": "T_x",
    "LIFEXP": "E_x",
    "PROBDEATH": "q_x",
}

_VALUE_RE = re.compile(r"^(?P<num>[-+]?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)?\s*(?P<flag>[A-Za-z]*)$")


# ---------------------------------------------------------------------------
# age codes
# ---------------------------------------------------------------------------

def normalize_age_code(code: str) -> str:
    """Map Eurostat or canonical age codes onto the normalised labels."""
    c = str(code).strip()
    u = c.upper()
    if u in ("TOTAL", "UNK"):
        return u
    if u in ("Y_LT1", "0"):
        return "0"
    if u == "Y_OPEN" or u == "OPEN":
        return "open"
    m = re.fullmatch(r"Y?(\d+)", u)
    if m:
        return str(int(m.group(1)))
    m = re.fullmatch(r"Y_GE(\d+)|(\d+)\+", u)
    if m:
        return f"{int(m.group(1) or m.group(2))}+"
    m = re.fullmatch(r"Y_LT(\d+)|<(\d+)", u)
    if m:
        return f"<{int(m.group(1) or m.group(2))}"
    m = re.fullmatch(r"Y?(\d+)-(\d+)", u)
    if m:
        return f"{int(m.group(1))}-{int(m.group(2))}"
    raise UnknownAgeCode(c)


def map_age_code(code: str, terminal_age: int = DEFAULT_TERMINAL_AGE):
    """Single age for ``code`` (ages at or above the terminal class map to it),
    or the strings ``"TOTAL"`` / ``"UNK"``.

    Raises UnknownAgeCode for grouped classes that do not map to one age.
    """
    label = normalize_age_code(code)
    if label in ("TOTAL", "UNK"):
        return label
    if label.isdigit():
        return min(int(label), terminal_age)
    if label.endswith("+") and int(label[:-1]) >= terminal_age:
        return terminal_age
    if label == "open":
        return terminal_age
    raise UnknownAgeCode(code)


# ---------------------------------------------------------------------------
# readers
# ---------------------------------------------------------------------------

def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def infer_dataset_kind(path) -> str | None:
    name = Path(path).name.lower()
    for hint, kind in _KIND_HINTS.items():
        if hint in name:
            return kind
    return None


def _parse_value(raw, line, column):
    s = raw.strip()
    if s.startswith(":"):
        return np.nan, s[1:].strip()
    m = _VALUE_RE.match(s)
    if not m or m.group("num") is None:
        raise NonNumericValue(raw, line, column)
    return float(m.group("num")), m.group("flag")


def parse_eurostat_tsv(path, dataset_kind: str | None = None) -> pd.DataFrame:
    """Parse a Eurostat bulk-download TSV (optionally gzipped).

    The first column is a comma-separated dimension tuple whose header ends
    in ``\\TIME_PERIOD`` (or ``\\time``); every other column is one year.
    """
    kind = dataset_kind or infer_dataset_kind(path)
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r} for {path}; pass one of {DATASET_KINDS}")
    records = []
    with _open_text(path) as fh:
        header = fh.readline().rstrip("\n\r")
        cells = header.split("\t")
        if "\\" not in cells[0]:
            raise MalformedHeader(f"{path}: first header cell lacks a time marker: {cells[0]!r}")
        dims = [d.strip().lower() for d in cells[0].split("\\")[0].split(",")]
        if "geo" not in dims or "age" not in dims:
            raise MalformedHeader(f"{path}: header must name geo and age dimensions, got {dims}")
        if kind == "lifetable" and "indic_de" not in dims:
            raise MalformedHeader(f"{path}: life-table header lacks indic_de")
        try:
            years = [int(c.strip()) for c in cells[1:]]
        except ValueError as exc:
            raise MalformedHeader(f"{path}: non-integer year column ({exc})") from None
        i_geo, i_age = dims.index("geo"), dims.index("age")
        i_sex = dims.index("sex") if "sex" in dims else None
        i_ind = dims.index("indic_de") if "indic_de" in dims else None
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            keys = [k.strip() for k in parts[0].split(",")]
            if len(keys) != len(dims):
                raise MalformedHeader(f"{path}:{lineno}: expected {len(dims)} dimensions, got {len(keys)}")
            age = normalize_age_code(keys[i_age])
            sex = keys[i_sex] if i_sex is not None else "T"
            measure = kind if i_ind is None or kind != "lifetable" else f"lifetable:{keys[i_ind]}"
            region = keys[i_geo]
            for col, (year, raw) in enumerate(zip(years, parts[1:]), start=2):
                value, flag = _parse_value(raw, lineno, col)
                records.append((region, sex, age, year, measure, value, flag))
    return _frame(records)


def _frame(records) -> pd.DataFrame:
    df = pd.DataFrame.from_records(records, columns=COLUMNS)
    df["year"] = df["year"].astype(np.int64)
    df["value"] = df["value"].astype(np.float64)
    df["flag"] = df["flag"].fillna("").astype(str)
    return df


def read_canonical_csv(path) -> pd.DataFrame:
    df = pd.read_csv(
        path,
        comment="#",
        dtype={"region": str, "sex": str, "age": str, "measure": str, "flag": str},
        keep_default_na=False,
        na_values={"value": [""]},
    )
    missing = {"region", "sex", "age", "year", "measure", "value"} - set(df.columns)
    if missing:
        raise MalformedHeader(f"{path}: missing columns {sorted(missing)}")
    if "flag" not in df.columns:
        df["flag"] = ""
    df["age"] = [normalize_age_code(a) for a in df["age"]]
    return _frame(df[COLUMNS].itertuples(index=False, name=None))


def write_canonical_csv(df: pd.DataFrame, path, header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        df[COLUMNS].to_csv(fh, index=False, lineterminator="\n", float_format="%.17g")


def load_inputs(paths, dataset_kind: str | None = None) -> pd.DataFrame:
    """Read and concatenate TSV and canonical CSV inputs."""
    frames = []
    for p in paths:
        name = Path(p).name.lower()
        if name.endswith(".csv") or name.endswith(".csv.gz"):
            frames.append(read_canonical_csv(p))
        else:
            frames.append(parse_eurostat_tsv(p, dataset_kind))
    if not frames:
        return _frame([])
    df = pd.concat(frames, ignore_index=True)
    return df.drop_duplicates(subset=["region", "sex", "age", "year", "measure"], keep="last").reset_index(drop=True)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

@dataclass
class AgeVector:
    values: np.ndarray  # NaN where missing
    unknown: float = np.nan
    total: float = np.nan


def _age_vector(sub: pd.DataFrame, terminal: int) -> AgeVector:
    labels = dict(zip(sub["age"], sub["value"]))
    out = np.array([labels.get(str(a), np.nan) for a in range(terminal)] + [_terminal_value(labels, terminal)])
    return AgeVector(out, labels.get("UNK", np.nan), labels.get("TOTAL", np.nan))


def _terminal_value(labels: dict, terminal: int) -> float:
    """Value of the open class ``terminal+``, aggregating finer ages if needed."""
    direct = labels.get(f"{terminal}+")
    if direct is not None and not np.isnan(direct):
        return direct
    singles = sorted(int(k) for k in labels if k.isdigit() and int(k) >= terminal)
    if not singles or singles != list(range(terminal, singles[-1] + 1)):
        return np.nan
    top = singles[-1]
    total = sum(labels[str(a)] for a in singles)
    if f"{top + 1}+" in labels:
        total += labels[f"{top + 1}+"]
    elif "open" in labels:
        total += labels["open"]
    return total


def _select(df, measure, region, sex, year):
    return df[(df["measure"] == measure) & (df["region"] == region) & (df["sex"] == sex) & (df["year"] == year)]


@dataclass
class RegionDataset:
    """Age-mapped inputs for one (region, sex, year)."""

    region: str
    sex: str
    year: int
    terminal_age: int
    pop_start: np.ndarray
    pop_end: np.ndarray
    deaths: np.ndarray
    births: np.ndarray | None = None
    birth_ages: np.ndarray | None = None
    female_pop_start: np.ndarray | None = None
    female_pop_end: np.ndarray | None = None
    unknown_deaths: float = np.nan
    total_deaths: float = np.nan
    unknown_births: float = np.nan
    total_births: float = np.nan
    births_open_classes: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @staticmethod
    def _average(start, end):
        both = ~np.isnan(start) & ~np.isnan(end)
        avg = np.where(both, 0.5 * (start + end), np.where(np.isnan(start), end, start))
        return avg, bool(np.any(~both & ~np.isnan(avg)))

    @property
    def avg_population(self) -> np.ndarray:
        return self._average(self.pop_start, self.pop_end)[0]

    def mortality_schedule(self) -> MortalitySchedule:
        avg, single = self._average(self.pop_start, self.pop_end)
        flags = list(self.flags)
        if single and "single_stock" not in flags:
            flags.append("single_stock")
        deaths = np.nan_to_num(self.deaths, nan=0.0)
        return MortalitySchedule(deaths.astype(np.int64), avg, self.region, self.sex, self.year, tuple(flags))

    def fertility_input(self) -> FertilityInput | None:
        if self.births is None:
            return None
        avg, single = self._average(self.female_pop_start, self.female_pop_end)
        flags = list(self.flags)
        if single and "single_stock" not in flags:
            flags.append("single_stock")
        births = np.nan_to_num(self.births, nan=0.0)
        return FertilityInput(births.astype(np.int64), avg, self.birth_ages, self.region, self.year, tuple(flags))

    def to_frame(self) -> pd.DataFrame:
        recs = []
        t = self.terminal_age

        def label(a):
            return f"{a}+" if a == t else str(a)

        def add(measure, sex, year, ages, values, unknown=np.nan, total=np.nan):
            for a, v in zip(ages, values):
                recs.append((self.region, sex, label(int(a)), year, measure, v, ""))
            if not np.isnan(unknown):
                recs.append((self.region, sex, "UNK", year, measure, unknown, ""))
            if not np.isnan(total):
                recs.append((self.region, sex, "TOTAL", year, measure, total, ""))

        ages = np.arange(t + 1)
        add("population", self.sex, self.year, ages, self.pop_start)
        add("population", self.sex, self.year + 1, ages, self.pop_end)
        add("deaths", self.sex, self.year, ages, self.deaths, self.unknown_deaths, self.total_deaths)
        if self.births is not None:
            add("births", "T", self.year, self.birth_ages, self.births, self.unknown_births, self.total_births)
            for lab, v in self.births_open_classes.items():
                recs.append((self.region, "T", lab, self.year, "births", v, ""))
            if self.sex != "F":
                add("population", "F", self.year, self.birth_ages, self.female_pop_start)
                add("population", "F", self.year + 1, self.birth_ages, self.female_pop_end)
        df = _frame(recs)
        return df[~(df["value"].isna() & (df["measure"] == "population"))].reset_index(drop=True)


def _consistency(vec: AgeVector, what: str, flags: list):
    if np.isnan(vec.total):
        return
    unk = 0.0 if np.isnan(vec.unknown) else vec.unknown
    s = float(np.nansum(vec.values))
    if s != vec.total - unk:
        flags.append(f"{what}_total_mismatch:{s - (vec.total - unk):g}")
        log.warning("%s: sum over ages %s differs from TOTAL-UNK %s", what, s, vec.total - unk)


def assemble_dataset(df: pd.DataFrame, region: str, sex: str, year: int,
                     terminal_age: int = DEFAULT_TERMINAL_AGE, births: bool = True) -> RegionDataset:
    missing = []
    pop_t = _select(df, "population", region, sex, year)
    pop_t1 = _select(df, "population", region, sex, year + 1)
    if pop_t.empty and pop_t1.empty:
        missing.append(("population", region, sex, year))
    dth = _select(df, "deaths", region, sex, year)
    if dth.empty:
        missing.append(("deaths", region, sex, year))
    if missing:
        raise MissingFragment(missing)

    flags = []
    start = _age_vector(pop_t, terminal_age).values if not pop_t.empty else np.full(terminal_age + 1, np.nan)
    end = _age_vector(pop_t1, terminal_age).values if not pop_t1.empty else np.full(terminal_age + 1, np.nan)
    if pop_t1.empty or pop_t.empty:
        flags.append("single_stock")
    gap = np.isnan(start) & np.isnan(end)
    if np.any(gap):
        raise MissingFragment([("population", region, sex, year, f"age {a}") for a in np.flatnonzero(gap)])

    dvec = _age_vector(dth, terminal_age)
    if np.any(np.isnan(dvec.values)):
        flags.append("deaths_missing_as_zero")
    _consistency(dvec, "deaths", flags)

    ds = RegionDataset(region, sex, year, terminal_age, start, end, dvec.values,
                       unknown_deaths=dvec.unknown, total_deaths=dvec.total, flags=flags)
    if births:
        _attach_births(df, ds)
    return ds


def _attach_births(df, ds: RegionDataset):
    bsub = _select(df, "births", ds.region, "T", ds.year)
    if bsub.empty:
        return
    singles = sorted(int(a) for a in bsub["age"] if a.isdigit())
    if not singles:
        return
    lo, hi = singles[0], singles[-1]
    ages = np.arange(lo, hi + 1)
    labels = dict(zip(bsub["age"], bsub["value"]))
    values = np.array([labels.get(str(a), np.nan) for a in ages])
    if np.any(np.isnan(values)):
        ds.flags.append("births_missing_as_zero")
    fem_t = _select(df, "population", ds.region, "F", ds.year)
    fem_t1 = _select(df, "population", ds.region, "F", ds.year + 1)
    if fem_t.empty and fem_t1.empty:
        raise MissingFragment([("population", ds.region, "F", ds.year)])

    def fem(sub):
        lab = dict(zip(sub["age"], sub["value"]))
        return np.array([lab.get(str(a), np.nan) for a in ages])

    fs, fe = fem(fem_t), fem(fem_t1)
    if np.any(np.isnan(fs) & np.isnan(fe)):
        raise MissingFragment([("population", ds.region, "F", ds.year, "fertile ages")])
    bvec = AgeVector(values, labels.get("UNK", np.nan), labels.get("TOTAL", np.nan))
    # open classes (<15, 50+) are part of TOTAL but not of the single-age range
    open_classes = {k: v for k, v in labels.items() if (k.startswith("<") or k.endswith("+")) and not np.isnan(v)}
    if not np.isnan(bvec.total):
        check = AgeVector(values, bvec.unknown, bvec.total - sum(open_classes.values()))
        _consistency(check, "births", ds.flags)
    ds.births = values
    ds.birth_ages = ages
    ds.female_pop_start = fs
    ds.female_pop_end = fe
    ds.unknown_births = bvec.unknown
    ds.total_births = bvec.total
    ds.births_open_classes = open_classes


def assemble(df: pd.DataFrame, region: str, sex: str, year: int, terminal_age: int = DEFAULT_TERMINAL_AGE):
    """(MortalitySchedule, FertilityInput or None) for one region/sex/year."""
    ds = assemble_dataset(df, region, sex, year, terminal_age)
    return ds.mortality_schedule(), ds.fertility_input()


def reference_life_table(df: pd.DataFrame, region: str, sex: str, year: int,
                         terminal_age: int = DEFAULT_TERMINAL_AGE) -> dict:
    """Published life-table columns (M_x, l_x, L_x, T_x, E_x, q_x) by age."""
    out = {}
    for indic, name in _LIFETABLE_COLUMNS.items():
        sub = _select(df, f"lifetable:{indic}", region, sex, year)
        if sub.empty:
            continue
        labels = dict(zip(sub["age"], sub["value"]))
        vals = np.array([labels.get(str(a), np.nan) for a in range(terminal_age)]
                        + [labels.get(f"{terminal_age}+", np.nan)])
        out[name] = vals
    if not out:
        raise MissingFragment([("lifetable", region, sex, year)])
    return out


def cells(df: pd.DataFrame, measure: str = "deaths"):
    """Sorted (region, sex, year) triples present for ``measure``."""
    sub = df[df["measure"] == measure][["region", "sex", "year"]].drop_duplicates()
    return sorted(sub.itertuples(index=False, name=None))


def event_time_series(df: pd.DataFrame, measure: str = "deaths", sex: str | None = None,
                      terminal_age: int = DEFAULT_TERMINAL_AGE) -> dict:
    """year -> counts over (region, sex, single age) cells complete in every year."""
    sub = df[(df["measure"] == measure) & df["age"].str.fullmatch(r"\d+")]
    if sex is not None:
        sub = sub[sub["sex"] == sex]
    sub = sub[sub["age"].astype(int) < terminal_age]
    wide = sub.pivot_table(index=["region", "sex", "age"], columns="year", values="value", aggfunc="first")
    wide = wide.dropna(axis=0, how="any")
    return {int(y): wide[y].to_numpy() for y in wide.columns}
