"""Exception types shared across the package."""


class MirnnError(Exception):
    """Base class for all package errors."""


class ConfigError(MirnnError):
    """Invalid or degenerate configuration value(s)."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class BindingError(MirnnError):
    """An input or parameter referenced by a graph was not bound."""


class ShapeError(MirnnError):
    """Array shapes incompatible with the requested operation."""


class EvaluationOverflowError(MirnnError):
    """A graph node produced NaN or Inf during evaluation."""


class UnsupportedOrderError(MirnnError):
    """Derivative order above what the engine contracts to provide."""


class PartitionError(MirnnError):
    """Degenerate or inconsistent time partition / conditioning chain."""


class DomainError(MirnnError):
    """A query point lies outside the region where it is defined."""


class DegenerateTargetError(MirnnError):
    """Reference values carry no signal (zero variance or zero norm)."""


class DivergenceError(MirnnError):
    """Training produced a non-finite loss or gradient."""


class MissingArtifactError(MirnnError):
    """A required file (checkpoint, config) does not exist."""
