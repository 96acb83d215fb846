"""Exception hierarchy shared by every module of the package."""


class RelAttnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RelAttnError, ValueError):
    pass


class ConfigError(RelAttnError, ValueError):
    pass


class DegenerateRowError(RelAttnError, ValueError):
    """A softmax row had every position masked out."""

    def __init__(self, row: int):
        super().__init__(f"row {row} is fully masked; softmax is undefined")
        self.row = row


class DivergedError(RelAttnError, FloatingPointError):
    """Loss or gradient became non-finite during fitting."""

    def __init__(self, message: str, epoch: int | None = None, slot: str | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.slot = slot


class DataError(RelAttnError, ValueError):
    """Malformed or missing input data."""


class DiagnosticUndefinedError(RelAttnError, ValueError):
    pass


class UnsupportedError(RelAttnError, ValueError):
    pass
