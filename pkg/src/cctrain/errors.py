"""Exception hierarchy shared by every cctrain module."""


class CCTrainError(Exception):
    """Base class for all errors raised by cctrain."""


class SchemaError(CCTrainError, ValueError):
    """Input file is missing a column or has ragged rows."""


class IntegrityError(CCTrainError, ValueError):
    """Rows of a series are inconsistent (gaps in t, label changes)."""


class DomainError(CCTrainError, ValueError):
    """A value lies outside its admissible domain."""


class SpecError(CCTrainError, ValueError):
    """A synthetic-data spec cannot be realised."""


class ContractError(CCTrainError, ValueError):
    """A function precondition was violated by the caller."""


class ConfigError(CCTrainError, ValueError):
    """Run configuration failed validation."""


class SchedulingError(CCTrainError, RuntimeError):
    """The curriculum reached a state it cannot train from."""


class UndefinedMetricError(CCTrainError, ValueError):
    """A metric is undefined for the given inputs (e.g. one class only)."""


class NumericError(CCTrainError, ArithmeticError):
    """A non-finite value appeared during a forward or backward pass."""

    def __init__(self, message: str, step: int | None = None, stage: int | None = None):
        super().__init__(message)
        self.message = message
        self.step = step
        self.stage = stage  # filled in by the scheduler as the error propagates

    def __str__(self) -> str:
        parts = [self.message]
        if self.stage is not None:
            parts.append(f"stage={self.stage}")
        if self.step is not None:
            parts.append(f"step={self.step}")
        return " ".join(parts)
