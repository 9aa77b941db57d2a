"""Exception types shared across the package."""


class RisnetLabError(Exception):
    """Base class for all package errors."""


class ShapeError(RisnetLabError, ValueError):
    """Operands have incompatible dimensions."""


class ConfigError(RisnetLabError, ValueError):
    """A configuration value violates its constraints."""


class ContractError(RisnetLabError, ValueError):
    """A call violates an operation precondition."""


class CorruptDatasetError(RisnetLabError, ValueError):
    """An on-disk dataset is inconsistent with its manifest."""


class EvaluationError(RisnetLabError, ArithmeticError):
    """A function produced a non-finite value where a finite one is required."""


class NumericalError(RisnetLabError, ArithmeticError):
    """Training or evaluation hit a non-finite intermediate result."""
