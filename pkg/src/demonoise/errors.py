"""Exception types raised across the package."""


class DemoNoiseError(Exception):
    """Base class for all package errors."""


class TerminalRateZero(DemoNoiseError):
    """The open-ended terminal age class has no deaths, so L_xbar diverges."""

    def __init__(self, region=None, sex=None, message=None):
        self.region = region
        self.sex = sex
        where = ""
        if region is not None or sex is not None:
            where = f" (region={region}, sex={sex})"
        super().__init__(message or f"terminal mortality rate is zero{where}")


class ZeroCount(DemoNoiseError):
    """A relative quantity was requested for a zero underlying count."""


class EmptyRange(DemoNoiseError):
    """An aggregate over ages was requested for an empty age range."""


class InfeasibleConfig(DemoNoiseError):
    """Noise parameters cannot be realised by any perturbation table."""

    def __init__(self, message, row=None):
        self.row = row
        super().__init__(message if row is None else f"{message} (row {row})")


class ReplicateDegenerate(DemoNoiseError):
    """All Monte-Carlo replicates are identical, so no spread can be estimated."""


class InsufficientYears(DemoNoiseError):
    """A time series is too short for the Poisson diagnostic."""


class IngestError(DemoNoiseError):
    """Base class for input parsing problems."""


class MalformedHeader(IngestError):
    pass


class UnknownAgeCode(IngestError):
    def __init__(self, code):
        self.code = code
        super().__init__(f"unknown age code {code!r}")


class NonNumericValue(IngestError):
    def __init__(self, raw, line, column):
        self.raw = raw
        self.line = line
        self.column = column
        super().__init__(f"non-numeric value {raw!r} at line {line}, column {column}")


class MissingFragment(IngestError):
    """Required input data is absent for a (dataset, region, sex, year)."""

    def __init__(self, missing):
        self.missing = list(missing)
        parts = ", ".join("/".join(str(p) for p in m) for m in self.missing)
        super().__init__(f"missing input fragments: {parts}")
