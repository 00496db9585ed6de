"""Exception hierarchy shared by every module.

Each class carries an ``exit_code`` so the command line can map failures to
distinct process exit statuses.
"""
from __future__ import annotations


class BiactError(Exception):
    exit_code = 1


class UsageError(BiactError):
    exit_code = 2


class ConfigurationError(BiactError):
    exit_code = 3


class DimensionError(ConfigurationError):
    pass


class FormatError(BiactError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    exit_code = 4

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    pass


class CorruptionError(FormatError):
    pass


class SequencingError(BiactError):
    exit_code = 5


class EpisodeStateError(BiactError):
    exit_code = 5


class PairingError(BiactError):
    exit_code = 5


class SimulationIntegrityError(BiactError):
    exit_code = 6


class ExecutionFault(BiactError):
    exit_code = 7


class UnderrunFault(ExecutionFault):
    pass


class DemonstrationFault(BiactError):
    exit_code = 8
