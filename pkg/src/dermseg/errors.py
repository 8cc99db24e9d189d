"""Exception hierarchy shared by the whole pipeline.

The CLI maps these onto process exit codes, so every raise site should pick
the class by *what went wrong*, not where: bad parameters or violated
invariants -> ValidationError, broken/missing/mismatched inputs on disk ->
DataError, a predictor breaking its behavioral contract -> PredictorContractError.
"""


class DermsegError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(DermsegError):
    """Invalid parameter, configuration, or violated type invariant."""


class DimensionError(ValidationError):
    """Rasters or lists whose shapes/lengths do not line up."""


class DataError(DermsegError):
    """Unreadable, missing, or internally contradictory input data."""


class PredictorContractError(DermsegError):
    """A plugged-in predictor violated the probability-map contract."""
