"""Exception hierarchy shared by every module."""


class HyperDPError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(HyperDPError):
    """Invalid configuration or arguments."""


class DataError(HyperDPError):
    """Problem with input data."""


class ParseError(DataError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class EmptyDatasetError(DataError):
    pass


class InsufficientDataError(DataError):
    """Too few observations for a statistical test or an evaluation."""


class SamplingError(HyperDPError):
    """A pair sample cannot be drawn from the requested universe."""

    def __init__(self, message, universe_size):
        self.universe_size = universe_size
        super().__init__(message)


class TrainingDivergedError(HyperDPError):
    def __init__(self, iteration, message="non-finite factor detected"):
        self.iteration = iteration
        super().__init__(f"{message} after iteration {iteration}")


class FailedCellsError(HyperDPError):
    """Raised when an analysis needs cells that failed during the sweep."""
