"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes (see ``bgrppg.cli``).
"""


class RppgError(Exception):
    """Base class for all package errors."""


class InputError(RppgError, ValueError):
    """Input data violates a documented precondition."""


class PartitionError(InputError):
    pass


class BackgroundError(InputError):
    pass


class TilingError(InputError):
    pass


class InputTooShortError(InputError):
    pass


class NoPulseError(RppgError):
    """No usable power inside the heart-rate band."""


class OutOfBandPeakError(NoPulseError):
    """The in-band maximum is only leakage from a stronger out-of-band peak."""


class DegenerateSignalError(RppgError, ValueError):
    pass


class UndefinedCorrelationError(RppgError, ValueError):
    pass


class ContractError(RppgError, ValueError):
    """Shape or pairing contract between tensors violated."""


class ScenarioSaturationError(RppgError):
    pass


class FormatError(RppgError):
    """Malformed on-disk artifact (STM1, PGCK, CSV, PPM)."""


class ConfigError(RppgError):
    """Configuration document failed schema validation."""


class DivergenceError(RppgError):
    def __init__(self, epoch, message="non-finite loss"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


class GradCheckAborted(RppgError):
    pass
