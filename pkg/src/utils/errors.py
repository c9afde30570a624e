"""Exception types raised by the harness."""


class ChainHarnessError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ChainHarnessError, ValueError):
    """A point or matrix does not have the expected shape."""


class DomainError(ChainHarnessError, ValueError):
    """Invalid domain description or a point outside the admissible region."""


class PartitionError(ChainHarnessError, ValueError):
    pass


class ScaleError(ChainHarnessError, ValueError):
    """The scale functions delta/rho violate the boundary-cell rule."""


class GeneratorError(ChainHarnessError):
    pass


class ThresholdError(ChainHarnessError):
    """A threshold polynomial has no usable positive root."""


class SimulationError(ChainHarnessError):
    pass


class ConfigError(ChainHarnessError, ValueError):
    """Run-config schema violation; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ArtifactError(ChainHarnessError):
    """A prior pipeline stage has not produced the files a later stage reads."""
