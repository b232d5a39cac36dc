"""Uncertainty of demographic indicators under bounded integer count noise.

Core pieces:

* life tables from single-age deaths and mid-year populations
* closed-form noise, statistical and combined uncertainties for crude rates,
  TFR and period life expectancy
* a perturbation table with mean-zero, fixed-variance integer noise
* a Monte-Carlo check of the life-expectancy formula and a Poisson diagnostic
* readers for Eurostat bulk TSV files
"""

__version__ = "0.1.0"

from .ckm import PerturbationTable, build_ptable, perturb, perturb_batch
from .errors import (
    DemoNoiseError,
    EmptyRange,
    InfeasibleConfig,
    IngestError,
    InsufficientYears,
    ReplicateDegenerate,
    TerminalRateZero,
    ZeroCount,
)
from .lifetable import LifeTable, MortalitySchedule, build_life_table, life_table_from_rates
from .simulate import poisson_diagnostic, synthetic_schedule, validate_delta_ex
from .uncertainty import (
    FertilityInput,
    NoiseConfig,
    UncertaintyBreakdown,
    admixture,
    crude_rate_uncertainty,
    gradient_ex,
    life_expectancy_uncertainty,
    propagate_linear,
    propagate_product,
    total_fertility_rate_uncertainty,
)

__all__ = [
    "DemoNoiseError", "EmptyRange", "FertilityInput", "InfeasibleConfig", "IngestError",
    "InsufficientYears", "LifeTable", "MortalitySchedule", "NoiseConfig", "PerturbationTable",
    "ReplicateDegenerate", "TerminalRateZero", "UncertaintyBreakdown", "ZeroCount", "admixture",
    "build_life_table", "build_ptable", "crude_rate_uncertainty", "gradient_ex",
    "life_expectancy_uncertainty", "life_table_from_rates", "perturb", "perturb_batch",
    "poisson_diagnostic", "propagate_linear", "propagate_product", "synthetic_schedule",
    "total_fertility_rate_uncertainty", "validate_delta_ex",
]
