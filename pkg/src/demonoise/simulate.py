"""Monte-Carlo checks of the closed-form uncertainties.

``validate_delta_ex`` perturbs the death counts of a schedule many times with
table noise, rebuilds E_x for each replicate and compares the spread with the
analytic noise-only uncertainty.  ``poisson_diagnostic`` compares the
year-to-year spread of event counts with the Poisson estimate sqrt(count).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .ckm import build_ptable, perturb_batch, stream_key
from .errors import InsufficientYears, ReplicateDegenerate, TerminalRateZero
from .lifetable import RADIX, MortalitySchedule, build_life_table
from .uncertainty import NoiseConfig, life_expectancy_uncertainty_arrays

DEFAULT_REPLICATES = 361
VALIDATION_CONFIG = NoiseConfig(variance=2.0, max_deviation=5, small_count_threshold=2)


@dataclass
class SimulationReport:
    region: str
    sex: str
    year: int
    replicates: int
    ages: np.ndarray
    e_original: np.ndarray
    analytic: np.ndarray
    sd: np.ndarray
    sd_pooled: np.ndarray
    variance: float
    max_deviation: int
    small_count_threshold: int
    seed: int
    zero_fix: bool
    terminal_clamps: int = 0
    flags: tuple = field(default=())

    @property
    def rel_diff(self) -> np.ndarray:
        """analytic / sampled s.d. - 1 (NaN where the sampled s.d. is zero)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.analytic / self.sd - 1.0
        out[self.sd == 0] = np.nan
        return out

    def config(self) -> dict:
        return {
            "region": self.region,
            "sex": self.sex,
            "year": self.year,
            "replicates": self.replicates,
            "variance": self.variance,
            "max_deviation": self.max_deviation,
            "small_count_threshold": self.small_count_threshold,
            "seed": self.seed,
            "zero_fix": self.zero_fix,
            "terminal_clamps": self.terminal_clamps,
            "flags": list(self.flags),
        }

    def rows(self):
        rel = self.rel_diff
        for i, age in enumerate(self.ages):
            yield {
                "age": int(age),
                "E_x": float(self.e_original[i]),
                "analytic_delta": float(self.analytic[i]),
                "sd": float(self.sd[i]),
                "sd_pooled": float(self.sd_pooled[i]),
                "rel_diff": None if math.isnan(rel[i]) else float(rel[i]),
            }

    def to_json(self) -> str:
        return json.dumps({"config": self.config(), "ages": list(self.rows())}, indent=2)

    def summary(self) -> dict:
        rel = np.abs(self.rel_diff)
        rel = rel[np.isfinite(rel)]
        return {
            "max_abs_rel_diff": float(rel.max()) if rel.size else float("nan"),
            "share_within_5pct": float(np.mean(rel < 0.05)) if rel.size else float("nan"),
            "share_within_10pct": float(np.mean(rel < 0.10)) if rel.size else float("nan"),
        }


def replicate_keys(seed: int, replicates: int, start: int = 0) -> np.ndarray:
    return np.array([stream_key((seed, r)) for r in range(start, start + replicates)], dtype=np.uint64)


def sample_life_expectancies(schedule: MortalitySchedule, table, keys):
    """E_x for each perturbed replicate of the death counts.

    Returns (E matrix of shape (replicates, ages), number of clamped terminal
    counts).  Perturbed terminal deaths below one are clamped to one so that
    every replicate has a finite terminal person-years value.
    """
    deaths = perturb_batch(schedule.deaths, table, keys, schedule.ages)
    low = deaths[:, -1] < 1
    deaths[low, -1] = 1
    rates = np.ascontiguousarray(deaths / schedule.avg_population[None, :])
    return _kernels.life_expectancy_batch(rates, RADIX), int(low.sum())


def validate_delta_ex(
    schedule: MortalitySchedule,
    cfg: NoiseConfig = VALIDATION_CONFIG,
    replicates: int = DEFAULT_REPLICATES,
    seed: int = 0,
    zero_fix: bool = True,
) -> SimulationReport:
    if replicates < 2:
        raise ValueError("need at least two replicates")
    if schedule.deaths[-1] == 0:
        raise TerminalRateZero(schedule.region, schedule.sex)
    lt = build_life_table(schedule)
    ptable = build_ptable(cfg)
    E, clamps = sample_life_expectancies(schedule, ptable, replicate_keys(seed, replicates))
    if np.all(E == E[0]):
        raise ReplicateDegenerate(
            f"all {replicates} replicates identical for {schedule.region}/{schedule.sex} (V={cfg.variance})"
        )
    sd = E.std(axis=0, ddof=1)
    sd_pooled = np.vstack([lt.life_expectancy[None, :], E]).std(axis=0, ddof=1)
    _, analytic, _, _ = life_expectancy_uncertainty_arrays(schedule, cfg, lt, zero_fix=zero_fix)
    return SimulationReport(
        region=schedule.region,
        sex=schedule.sex,
        year=schedule.year,
        replicates=replicates,
        ages=schedule.ages,
        e_original=lt.life_expectancy,
        analytic=analytic,
        sd=sd,
        sd_pooled=sd_pooled,
        variance=cfg.variance,
        max_deviation=cfg.max_deviation,
        small_count_threshold=cfg.small_count_threshold,
        seed=seed,
        zero_fix=zero_fix,
        terminal_clamps=clamps,
        flags=schedule.flags,
    )


# ---------------------------------------------------------------------------
# Poisson diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoissonDiagnostic:
    median: float
    lower_quartile: float
    upper_quartile: float
    n_cells: int
    n_years: int

    def as_dict(self):
        return asdict(self)


def poisson_ratios(time_series) -> np.ndarray:
    """Per-cell ratio of the empirical s.d. over years to sqrt(mean count).

    ``time_series`` maps year -> counts (any shape, same for all years) or is
    an array with years along the first axis.  Cells with zero mean are
    dropped.
    """
    if isinstance(time_series, dict):
        years = sorted(time_series)
        data = np.stack([np.asarray(time_series[y], dtype=np.float64).ravel() for y in years])
    else:
        data = np.asarray(time_series, dtype=np.float64)
        data = data.reshape(data.shape[0], -1)
    if data.shape[0] < 3:
        raise InsufficientYears(f"need at least 3 years, got {data.shape[0]}")
    mean = data.mean(axis=0)
    keep = mean > 0
    sd = data[:, keep].std(axis=0, ddof=1)
    return sd / np.sqrt(mean[keep])


def poisson_diagnostic(time_series) -> PoissonDiagnostic:
    ratios = poisson_ratios(time_series)
    n_years = len(time_series) if isinstance(time_series, dict) else np.asarray(time_series).shape[0]
    if ratios.size == 0:
        nan = float("nan")
        return PoissonDiagnostic(nan, nan, nan, 0, n_years)
    q1, med, q3 = np.quantile(ratios, [0.25, 0.5, 0.75])
    return PoissonDiagnostic(float(med), float(q1), float(q3), int(ratios.size), n_years)


# ---------------------------------------------------------------------------
# synthetic inputs
# ---------------------------------------------------------------------------

def synthetic_schedule(
    total_population: float = 1e5,
    terminal_age: int = 85,
    seed: int | None = None,
    min_deaths: int = 1,
    region: str = "SYN",
    sex: str = "T",
    year: int = 2023,
) -> MortalitySchedule:
    """Gompertz-Makeham schedule with a roughly stationary age structure.

    Deaths are the expected counts rounded to integers (or Poisson draws when
    ``seed`` is given), floored at ``min_deaths``.
    """
    ages = np.arange(terminal_age + 1)
    rate = 5e-4 + 3e-5 * np.exp(0.095 * ages)
    rate[0] = 3e-3
    # survivors-based age structure, terminal class holds everyone older
    surv = np.exp(-np.concatenate([[0.0], np.cumsum(rate[:-1])]))
    weights = surv.copy()
    weights[-1] = surv[-1] / rate[-1]
    pop = total_population * weights / weights.sum()
    expected = rate * pop
    if seed is None:
        deaths = np.rint(expected)
    else:
        deaths = np.random.default_rng(seed).poisson(expected).astype(np.float64)
    deaths = np.maximum(deaths, min_deaths)
    return MortalitySchedule(deaths.astype(np.int64), pop, region=region, sex=sex, year=year)
