"""Exception types shared across the package.

The CLI maps these onto process exit codes: validation/configuration/shape
problems exit 2, numerical failures exit 3, file-format problems exit 4.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ValidationError(ValueError):
    """Input values violate a documented precondition."""


class ConfigurationError(ValueError):
    """A config object is internally inconsistent or unusable."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input, e.g. normalizing a zero vector."""


class PlacementError(ValidationError):
    """Blob placement could not be satisfied within the attempt budget."""


class NonFiniteError(ArithmeticError):
    """A NaN or Inf appeared where every value must be finite."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its convergence criterion."""


class TrainingError(RuntimeError):
    """Training aborted, e.g. a parameter received a non-finite gradient."""


class FormatError(Exception):
    """A file does not conform to its binary or JSON schema."""
