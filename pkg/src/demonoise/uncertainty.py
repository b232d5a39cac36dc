"""Closed-form uncertainties of crude rates, TFR and life expectancies.

Three flavours are reported for every indicator:

* noise: from fixed-variance count noise (variance ``V`` on every input count),
* stat: from Poisson fluctuation of the event counts (variance = count),
* combined: both in quadrature.

Crude-rate formulas default to the small-rate approximation (noise on the
denominator population ignored); ``mode="exact"`` keeps that term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyRange, InfeasibleConfig, TerminalRateZero, ZeroCount
from .lifetable import LifeTable, MortalitySchedule, build_life_table

MODES = ("approx", "exact")


@dataclass(frozen=True)
class NoiseConfig:
    """Noise setup: variance ``V`` per count, support ``|v| <= max_deviation``,
    no perturbed counts in ``1..small_count_threshold``."""

    variance: float = 1.0
    max_deviation: int = 5
    small_count_threshold: int = 0
    preserve_zeros: bool = True

    def __post_init__(self):
        if not (self.variance >= 0 and math.isfinite(self.variance)):
            raise ValueError(f"variance must be finite and >= 0, got {self.variance}")
        if int(self.max_deviation) != self.max_deviation or self.max_deviation < 1:
            raise ValueError(f"max_deviation must be an integer >= 1, got {self.max_deviation}")
        if int(self.small_count_threshold) != self.small_count_threshold or self.small_count_threshold < 0:
            raise ValueError("small_count_threshold must be an integer >= 0")
        if self.max_deviation ** 2 < self.variance:
            raise InfeasibleConfig(
                f"variance {self.variance} unreachable with max deviation {self.max_deviation}"
            )
        object.__setattr__(self, "max_deviation", int(self.max_deviation))
        object.__setattr__(self, "small_count_threshold", int(self.small_count_threshold))

    @property
    def delta(self) -> float:
        return math.sqrt(self.variance)

    def with_variance(self, variance: float) -> "NoiseConfig":
        d = max(self.max_deviation, math.ceil(math.sqrt(variance)))
        return NoiseConfig(variance, d, self.small_count_threshold, self.preserve_zeros)


@dataclass(frozen=True)
class FertilityInput:
    births: np.ndarray
    female_stock: np.ndarray
    ages: np.ndarray
    region: str = ""
    year: int = 0
    flags: tuple = ()

    def __post_init__(self):
        births = np.asarray(self.births)
        stock = np.asarray(self.female_stock, dtype=np.float64)
        ages = np.asarray(self.ages, dtype=np.int64)
        if not (births.shape == stock.shape == ages.shape) or births.ndim != 1:
            raise ValueError("births, female_stock and ages must be 1-d and of equal length")
        if ages.size and np.any(np.diff(ages) != 1):
            raise ValueError("fertile ages must be contiguous")
        if np.any(births < 0) or not np.all(births == np.round(births)):
            raise ValueError("births must be non-negative integers")
        if not np.all(stock > 0):
            raise ValueError(f"female stock must be positive ({self.region})")
        object.__setattr__(self, "births", births.astype(np.int64))
        object.__setattr__(self, "female_stock", stock)
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def rates(self) -> np.ndarray:
        return self.births / self.female_stock

    def index(self, age: int) -> int:
        i = int(age) - int(self.ages[0]) if self.ages.size else -1
        if not 0 <= i < self.ages.size:
            raise KeyError(f"age {age} outside fertile range")
        return i


@dataclass(frozen=True)
class UncertaintyBreakdown:
    """Noise-only, statistical and combined uncertainty of one indicator value.

    ``rel`` optionally carries the relative triple when it is available in a
    closed form that is more precise than ``abs / value``; relative accessors
    raise :class:`ZeroCount` when the indicator value is zero.
    """

    value: float
    noise_abs: float
    stat_abs: float
    combined_abs: float
    rel: tuple | None = None

    def _rel(self, i, absolute):
        if self.rel is not None:
            return self.rel[i]
        if self.value == 0:
            raise ZeroCount("relative uncertainty undefined for a zero indicator value")
        return absolute / abs(self.value)

    @property
    def noise_rel(self) -> float:
        return self._rel(0, self.noise_abs)

    @property
    def stat_rel(self) -> float:
        return self._rel(1, self.stat_abs)

    @property
    def combined_rel(self) -> float:
        return self._rel(2, self.combined_abs)

    @property
    def admixture(self) -> float:
        """Relative excess of combined over statistical uncertainty."""
        if self.stat_abs == 0:
            if self.combined_abs == 0:
                return 0.0
            raise ZeroCount("admixture undefined without statistical uncertainty")
        return self.combined_abs / self.stat_abs - 1.0

    def as_dict(self) -> dict:
        out = {
            "value": self.value,
            "noise_abs": self.noise_abs,
            "stat_abs": self.stat_abs,
            "combined_abs": self.combined_abs,
        }
        for name in ("noise_rel", "stat_rel", "combined_rel", "admixture"):
            try:
                out[name] = getattr(self, name)
            except ZeroCount:
                out[name] = None
        return out


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


# ---------------------------------------------------------------------------
# generic propagation
# ---------------------------------------------------------------------------

def propagate_linear(gradient, sigmas) -> float:
    """sqrt(sum_i (df/dx_i)^2 sigma_i^2) for uncorrelated inputs."""
    g = np.asarray(gradient, dtype=np.float64)
    s = np.asarray(sigmas, dtype=np.float64)
    if g.shape != s.shape:
        raise ValueError(f"gradient {g.shape} and sigmas {s.shape} differ in shape")
    return float(np.sqrt(np.sum((g * s) ** 2)))


def propagate_product(rel_uncertainties) -> float:
    """Relative uncertainty of a product/ratio of independent factors."""
    d = np.asarray(rel_uncertainties, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("relative uncertainties must be non-negative")
    return float(np.sqrt(np.sum(d * d)))


# ---------------------------------------------------------------------------
# crude rates
# ---------------------------------------------------------------------------

def crude_rate_uncertainty(count, denominator, cfg: NoiseConfig, mode="approx") -> UncertaintyBreakdown:
    """Uncertainty of ``count / denominator`` with noisy count (and optionally
    noisy denominator in exact mode)."""
    _check_mode(mode)
    if count < 0:
        raise ValueError("count must be non-negative")
    if not denominator > 0:
        raise ValueError("denominator must be positive")
    count = float(count)
    w = float(denominator)
    delta = cfg.delta
    value = count / w
    if mode == "exact":
        noise_abs = delta * (math.hypot(1.0, value) / w)
    else:
        noise_abs = delta * (1.0 / w)
    stat_abs = math.sqrt(count) / w
    combined_abs = math.hypot(noise_abs, stat_abs)
    rel = None
    if count > 0:
        if mode == "exact":
            noise_rel = delta * math.hypot(1.0 / count, 1.0 / w)
        else:
            noise_rel = delta * (1.0 / count)
        stat_rel = 1.0 / math.sqrt(count)
        rel = (noise_rel, stat_rel, math.hypot(noise_rel, stat_rel))
    return UncertaintyBreakdown(value, noise_abs, stat_abs, combined_abs, rel)


def fertility_rate_uncertainty(inp: FertilityInput, age: int, cfg: NoiseConfig, mode="approx") -> UncertaintyBreakdown:
    i = inp.index(age)
    return crude_rate_uncertainty(inp.births[i], inp.female_stock[i], cfg, mode)


def mortality_rate_uncertainty(deaths, avg_population, cfg: NoiseConfig, mode="approx") -> UncertaintyBreakdown:
    return crude_rate_uncertainty(deaths, avg_population, cfg, mode)


def total_fertility_rate_uncertainty(inp: FertilityInput, cfg: NoiseConfig, mode="approx") -> UncertaintyBreakdown:
    _check_mode(mode)
    if inp.ages.size == 0:
        raise EmptyRange("no fertile ages in input")
    b = inp.births.astype(np.float64)
    w = inp.female_stock
    f = float(np.sum(b / w))
    inv_w2 = 1.0 / (w * w)
    unit = np.sum(inv_w2)
    if mode == "exact":
        unit += np.sum(b * b * inv_w2 * inv_w2)
    noise_abs = cfg.delta * math.sqrt(unit)
    stat_abs = math.sqrt(float(np.sum(b * inv_w2)))
    return UncertaintyBreakdown(f, noise_abs, stat_abs, math.hypot(noise_abs, stat_abs))


# ---------------------------------------------------------------------------
# life expectancy
# ---------------------------------------------------------------------------

def _sensitivities(table: LifeTable) -> np.ndarray:
    """s_z with dE_x/dM_z = s_z / l_x for every z >= x."""
    ell = table.survivorship
    E = table.life_expectancy
    m_term = table.mortality_rate[-1]
    s = np.empty_like(ell)
    s[:-1] = -ell[1:] * (0.5 + E[1:])
    s[-1] = -ell[-1] / (m_term * m_term)
    return s


def gradient_ex(table: LifeTable, x: int) -> np.ndarray:
    """dE_x/dM_z for z = x..xbar."""
    if not 0 <= x <= table.terminal_age:
        raise IndexError(f"age {x} outside 0..{table.terminal_age}")
    return _sensitivities(table)[x:] / table.survivorship[x]


def life_expectancy_uncertainty_arrays(
    schedule: MortalitySchedule,
    cfg: NoiseConfig,
    table: LifeTable | None = None,
    mode="approx",
    zero_fix=False,
):
    """Vectorised form of :func:`life_expectancy_uncertainty`.

    Returns ``(E, noise_abs, stat_abs, combined_abs)`` arrays over ages.
    """
    _check_mode(mode)
    if schedule.deaths[-1] == 0:
        raise TerminalRateZero(schedule.region, schedule.sex)
    if table is None:
        table = build_life_table(schedule)
    D = schedule.deaths.astype(np.float64)
    B = schedule.avg_population
    s2 = _sensitivities(table) ** 2
    # Var(M_z) per unit noise variance
    unit = 1.0 / (B * B)
    if mode == "exact":
        unit = unit + D * D / (B * B * B * B)
    if zero_fix:
        unit = unit.copy()
        unit[:-1][D[:-1] == 0] = 0.0
    ell = np.ascontiguousarray(table.survivorship)
    noise_abs = cfg.delta * np.sqrt(_kernels.ex_variance(ell, np.ascontiguousarray(s2 * unit)))
    stat_abs = np.sqrt(_kernels.ex_variance(ell, np.ascontiguousarray(s2 * D / (B * B))))
    combined_abs = np.hypot(noise_abs, stat_abs)
    return table.life_expectancy, noise_abs, stat_abs, combined_abs


def life_expectancy_uncertainty(
    schedule: MortalitySchedule,
    table: LifeTable | None = None,
    cfg: NoiseConfig | None = None,
    mode="approx",
    zero_fix=False,
) -> list[UncertaintyBreakdown]:
    """Per-age uncertainty of E_x from noisy and Poisson-distributed deaths.

    With ``zero_fix`` the noise term of every non-terminal age with zero
    deaths is dropped, mirroring noise methods that never perturb zeros.
    """
    cfg = cfg or NoiseConfig()
    E, noise, stat, comb = life_expectancy_uncertainty_arrays(schedule, cfg, table, mode, zero_fix)
    return [UncertaintyBreakdown(float(e), float(n), float(s), float(c)) for e, n, s, c in zip(E, noise, stat, comb)]


# ---------------------------------------------------------------------------
# admixture
# ---------------------------------------------------------------------------

def admixture(count_or_breakdown, cfg: NoiseConfig) -> float:
    """Relative excess of combined over purely statistical uncertainty.

    For a crude-rate event count ``x`` this is ``sqrt(1 + V/x) - 1``; a
    breakdown is handled through its absolute uncertainties.
    """
    if isinstance(count_or_breakdown, UncertaintyBreakdown):
        return count_or_breakdown.admixture
    x = float(count_or_breakdown)
    if x <= 0:
        raise ZeroCount("admixture needs a positive event count")
    return math.expm1(0.5 * math.log1p(cfg.variance / x))


def admixture_linear(count, cfg: NoiseConfig) -> float:
    """Leading-order expansion V / (2x) of :func:`admixture`."""
    x = float(count)
    if x <= 0:
        raise ZeroCount("admixture needs a positive event count")
    return cfg.variance / (2.0 * x)
