"""Single-age period life tables with exponential survivorship.

Rates are crude ``M_x = D_x / B_x``, survivorship follows
``l_{x+1} = l_x * exp(-M_x)`` from a radix of 100 000, and the open-ended
terminal class contributes ``L_xbar = l_xbar / M_xbar`` person-years.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import TerminalRateZero

RADIX = 100_000.0
DEFAULT_TERMINAL_AGE = 85
SEXES = ("T", "M", "F")


@dataclass(frozen=True)
class MortalitySchedule:
    """Deaths and average population by single age 0..terminal for one cell.

    The last entry of each array is the open-ended terminal class.
    ``flags`` carries data-quality notes (e.g. ``deaths_missing_as_zero``)
    that downstream reports surface unchanged.
    """

    deaths: np.ndarray
    avg_population: np.ndarray
    region: str = ""
    sex: str = "T"
    year: int = 0
    flags: tuple = field(default=())

    def __post_init__(self):
        deaths = np.asarray(self.deaths)
        pop = np.asarray(self.avg_population, dtype=np.float64)
        if deaths.ndim != 1 or pop.ndim != 1:
            raise ValueError("deaths and avg_population must be 1-d")
        if deaths.shape != pop.shape:
            raise ValueError(
                f"deaths ({deaths.size}) and avg_population ({pop.size}) differ in length"
            )
        if deaths.size < 2:
            raise ValueError("need at least one age below the terminal class")
        if self.sex not in SEXES:
            raise ValueError(f"sex must be one of {SEXES}, got {self.sex!r}")
        if np.any(deaths < 0):
            raise ValueError(f"negative death counts for {self.region}/{self.sex}")
        if not np.all(deaths == np.round(deaths)):
            raise ValueError("death counts must be integers")
        if not np.all(pop > 0):
            bad = np.flatnonzero(~(pop > 0)).tolist()
            raise ValueError(
                f"average population must be positive ({self.region}/{self.sex}, ages {bad})"
            )
        if np.any(deaths > pop):
            bad = np.flatnonzero(deaths > pop).tolist()
            raise ValueError(
                f"death rate above 1 per person-year ({self.region}/{self.sex}, ages {bad})"
            )
        deaths = deaths.astype(np.int64)
        deaths.flags.writeable = False
        pop = pop.copy()
        pop.flags.writeable = False
        object.__setattr__(self, "deaths", deaths)
        object.__setattr__(self, "avg_population", pop)
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def terminal_age(self) -> int:
        return self.deaths.size - 1

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.deaths.size)

    @property
    def total_population(self) -> float:
        return float(self.avg_population.sum())


@dataclass(frozen=True)
class LifeTable:
    mortality_rate: np.ndarray
    survivorship: np.ndarray
    person_years: np.ndarray
    cumulative_person_years: np.ndarray
    life_expectancy: np.ndarray

    @property
    def terminal_age(self) -> int:
        return self.mortality_rate.size - 1

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.mortality_rate.size)

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame(
            {
                "age": self.ages,
                "M_x": self.mortality_rate,
                "l_x": self.survivorship,
                "L_x": self.person_years,
                "T_x": self.cumulative_person_years,
                "E_x": self.life_expectancy,
            }
        )


def mortality_rates(schedule: MortalitySchedule) -> np.ndarray:
    return schedule.deaths / schedule.avg_population


def _check_rates(rates, region=None, sex=None):
    rates = np.ascontiguousarray(rates, dtype=np.float64)
    if rates.ndim != 1 or rates.size == 0:
        raise ValueError("rates must be a non-empty 1-d array")
    if np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise ValueError("rates must be finite and non-negative")
    if not rates[-1] > 0:
        raise TerminalRateZero(region, sex)
    if rates.size < 2:
        raise ValueError("rates must cover at least two ages")
    return rates


def life_table_from_rates(rates, region=None, sex=None) -> LifeTable:
    rates = _check_rates(rates, region, sex)
    ell, L, T, E = _kernels.life_table(rates, RADIX)
    return LifeTable(rates, ell, L, T, E)


def build_life_table(schedule: MortalitySchedule) -> LifeTable:
    """Life table for ``schedule``; raises TerminalRateZero if D_xbar is 0."""
    if schedule.deaths[-1] == 0:
        raise TerminalRateZero(schedule.region, schedule.sex)
    return life_table_from_rates(mortality_rates(schedule), schedule.region, schedule.sex)


def life_expectancy_from_rates(rates) -> np.ndarray:
    """E_x from the rates alone, by summing exponentials of partial rate sums.

    Evaluates, for x below the terminal class,

        E_x = 1/2 + sum_{n=x+1}^{xbar-1} exp(-sum_{k=x}^{n-1} M_k)
                  + (1/2 + 1/M_xbar) exp(-sum_{k=x}^{xbar-1} M_k)

    and E_xbar = 1/M_xbar.  No survivorship recursion is involved, so this
    serves as an independent check on :func:`build_life_table`.
    """
    rates = _check_rates(rates)
    xbar = rates.size - 1
    # row x holds M_x..M_{xbar-1} behind leading zeros, so each row's cumsum
    # is partial[x, n] = sum_{k=x}^{n} M_k
    partial = np.cumsum(np.triu(np.broadcast_to(rates[:xbar], (xbar, xbar))), axis=1)
    inner = np.triu(np.exp(-partial[:, :-1])).sum(axis=1)
    out = np.empty(rates.size)
    out[:xbar] = 0.5 + inner + (0.5 + 1.0 / rates[xbar]) * np.exp(-partial[:, -1])
    out[xbar] = 1.0 / rates[xbar]
    return out
