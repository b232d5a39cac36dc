"""Shared fixtures: a small synthetic extract in Eurostat bulk TSV layout."""

import gzip
import sys

import numpy as np
import pytest

from demonoise.simulate import synthetic_schedule

REGIONS = {"AA11": 4e4, "AA12": 2e5}
YEARS = (2019, 2020, 2021, 2022, 2023)


def _pop_codes():
    return ["Y_LT1"] + [f"Y{a}" for a in range(1, 100)] + ["Y_OPEN"]


def _death_codes():
    return ["Y_LT1"] + [f"Y{a}" for a in range(1, 85)] + ["Y_GE85"]


def _fmt(v, flag=""):
    return f"{int(v)} {flag}".strip() if flag else f"{int(v)}"


def make_extract(root, regions=REGIONS, years=YEARS, seed=0, gz=True):
    """Write d2jan (population), magec (deaths) and fagec (births) files.

    Population is 1 January of each year plus the following year.  Deaths
    carry UNK/TOTAL rows; births use open classes below 15 and above 49.
    Returns {"paths": [...], "truth": {...}} with the exact arrays written.
    """
    rng = np.random.default_rng(seed)
    pop_years = tuple(years) + (years[-1] + 1,)
    pop_lines, death_lines, birth_lines = [], [], []
    truth = {}
    for region, size in regions.items():
        base = synthetic_schedule(size)
        split = {"M": 0.49, "F": 0.51}
        for y in pop_years:
            stock = {}
            for sex, share in split.items():
                # 100 single ages + open class: spread the terminal class over 85..99
                ages = np.concatenate([base.avg_population[:85], base.avg_population[85] * np.full(15, 1 / 16)])
                scale = share * (1 + 0.01 * (y - 2019))
                s = np.rint(ages * scale * rng.uniform(0.98, 1.02, ages.size)) + 5
                stock[sex] = np.concatenate([s, [np.rint(base.avg_population[85] * share / 16)]])
            stock["T"] = stock["M"] + stock["F"]
            truth[("pop", region, y)] = stock
        for y in years:
            deaths = {}
            for sex, share in split.items():
                deaths[sex] = rng.poisson(base.deaths * share + 0.3)
                deaths[sex][-1] = max(deaths[sex][-1], 1)
            deaths["T"] = deaths["M"] + deaths["F"]
            truth[("deaths", region, y)] = deaths
            births = rng.poisson(size * 0.0004, size=35)
            births[0] = max(births[0], 1)
            truth[("births", region, y)] = births

    years_desc = sorted(pop_years, reverse=True)
    header = "freq,unit,sex,age,geo\\TIME_PERIOD\t" + "\t".join(str(y) for y in years_desc)
    pop_lines.append(header)
    for region in regions:
        for sex in ("F", "M", "T"):
            for i, code in enumerate(_pop_codes()):
                vals = [_fmt(truth[("pop", region, y)][sex][i]) for y in years_desc]
                pop_lines.append(f"A,NR,{sex},{code},{region}\t" + "\t".join(vals))

    years_desc = sorted(years, reverse=True)
    header = "freq,unit,sex,age,geo\\TIME_PERIOD\t" + "\t".join(str(y) for y in years_desc)
    death_lines.append(header)
    for region in regions:
        for sex in ("F", "M", "T"):
            for i, code in enumerate(_death_codes()):
                vals = []
                for y in years_desc:
                    flag = "p" if (y == years[-1] and i == 3) else ""
                    vals.append(_fmt(truth[("deaths", region, y)][sex][i], flag))
                death_lines.append(f"A,NR,{sex},{code},{region}\t" + "\t".join(vals))
            unk = [_fmt(2) for _ in years_desc]
            death_lines.append(f"A,NR,{sex},UNK,{region}\t" + "\t".join(unk))
            tot = [_fmt(truth[("deaths", region, y)][sex].sum() + 2) for y in years_desc]
            death_lines.append(f"A,NR,{sex},TOTAL,{region}\t" + "\t".join(tot))

    header = "freq,unit,age,geo\\TIME_PERIOD\t" + "\t".join(str(y) for y in years_desc)
    birth_lines.append(header)
    for region in regions:
        for i, a in enumerate(range(15, 50)):
            vals = [_fmt(truth[("births", region, y)][i]) for y in years_desc]
            birth_lines.append(f"A,NR,Y{a},{region}\t" + "\t".join(vals))
        birth_lines.append(f"A,NR,Y_LT15,{region}\t" + "\t".join(_fmt(1) for _ in years_desc))
        birth_lines.append(f"A,NR,Y_GE50,{region}\t" + "\t".join(":" for _ in years_desc))
        tot = [_fmt(truth[("births", region, y)].sum() + 1) for y in years_desc]
        birth_lines.append(f"A,NR,TOTAL,{region}\t" + "\t".join(tot))

    paths = []
    for name, lines in (("demo_r_d2jan", pop_lines), ("demo_r_magec", death_lines), ("demo_r_fagec", birth_lines)):
        text = "\n".join(lines) + "\n"
        if gz:
            path = root / f"{name}.tsv.gz"
            with gzip.open(path, "wt", encoding="utf-8") as fh:
                fh.write(text)
        else:
            path = root / f"{name}.tsv"
            path.write_text(text, encoding="utf-8")
        paths.append(path)
    return {"paths": paths, "truth": truth}


@pytest.fixture(scope="session")
def extract(tmp_path_factory):
    return make_extract(tmp_path_factory.mktemp("eurostat"))


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text(
        "region,sex,age,year,measure,value\n"
        "XX1,T,0,2023,population,100\n"
        "XX1,T,1,2023,population,100\n"
        "XX1,T,2+,2023,population,100\n"
        "XX1,T,0,2023,deaths,0\n"
        "XX1,T,1,2023,deaths,0\n"
        "XX1,T,2+,2023,deaths,100\n",
        encoding="utf-8",
    )
    return path


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
