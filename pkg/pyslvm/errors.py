class SLVMError(Exception):
    """Base class of all pyslvm errors. `exit_code` is what the command line returns."""

    exit_code = 1


class ConfigError(SLVMError, ValueError):
    exit_code = 2


class DataError(SLVMError, ValueError):
    exit_code = 3


class IngestionError(DataError):
    pass


class LabelValidationError(DataError):
    pass


class SamplingError(DataError):
    pass


class CacheFormatError(DataError):
    pass


class ProtocolError(DataError):
    """Raised when an episode or registry entry violates the fold protocol."""


class ShapeError(SLVMError, ValueError):
    pass


class DegenerateSupportError(ShapeError):
    pass


class FreezeViolationError(SLVMError):
    exit_code = 4


class DivergenceError(SLVMError):
    exit_code = 5

    def __init__(self, message: str, step: int):
        super().__init__(f'{message} (step {step})')
        self.step = step
