"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration errors exit 2,
data/input errors exit 3, numeric faults exit 4.
"""


class GfnomaError(Exception):
    """Base class for all package errors."""


class ConfigError(GfnomaError):
    """Invalid configuration value or inconsistent experiment setup."""


class InputError(GfnomaError):
    """Malformed runtime input (shapes, files, bit strings)."""


class StateError(GfnomaError):
    """Objects used together that were not built together (net vs frame)."""


class NumericError(GfnomaError):
    """Numerical failure during computation (NaN, divergence)."""


class DecompositionError(NumericError):
    """Matrix factorization failed (not positive definite)."""


class RankDeficiencyError(DecompositionError):
    """Unregularized normal equations are singular."""

    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(
            f"normal equations rank deficient: pivot {pivot} is {value:.3e} (<= 0)"
        )
