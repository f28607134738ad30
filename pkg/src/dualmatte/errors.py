"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
InputOutputError -> 3, NumericError and its subclasses -> 4.
"""


class DualmatteError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DualmatteError):
    """Invalid configuration: unknown key, bad value, inconsistent options."""


class InputOutputError(DualmatteError):
    """File missing, unreadable, undecodable, or unwritable."""


class NumericError(DualmatteError):
    """Numeric or validation failure during computation."""


class DimensionMismatchError(NumericError):
    """Operands have incompatible shapes."""


class DegenerateBackingError(NumericError):
    """Backing colors too close to separate foreground from background."""


class NonFiniteComputationError(NumericError):
    """NaN or infinity appeared where finite values are required."""


class TrainingDivergedError(NumericError):
    """Training produced a non-finite loss; last good checkpoint is retained."""
