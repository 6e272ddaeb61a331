"""Exception taxonomy shared by every module.

CLI exit-code mapping (see cli.py): usage errors exit 1, data/format errors
exit 2, everything else exits 3.
"""


class AublendError(Exception):
    """Base class for all library errors."""


class ShapeError(AublendError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(AublendError):
    """A hyperparameter or option combination is invalid."""


class ContractError(AublendError):
    """An API precondition was violated (e.g. backward on a consumed graph)."""


class NonFiniteError(AublendError):
    """A NaN or Inf appeared in a tensor value."""


class ValidationError(AublendError):
    """Domain data failed validation (AU ids, weights, registry contents)."""


class FormatError(AublendError):
    """A file is malformed: bad magic, truncation, checksum, field mismatch."""


class TrainingDiverged(AublendError):
    """Training produced a non-finite loss; message carries the epoch."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch
