"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """Invalid experiment configuration or config file."""


class DataFormatError(ValueError):
    """A data file does not follow its declared format."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite or exploding loss.

    Carries the last finite checkpoint so callers can salvage the run.
    """

    def __init__(self, message, params=None, clusters=None, reports=None):
        super().__init__(message)
        self.params = params
        self.clusters = clusters
        self.reports = reports
