"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2,
TrainingDivergedError -> 3, NoIcvError -> 4.
"""


class FetalsegError(Exception):
    """Base class for all package-specific errors."""


class VolumeFormatError(FetalsegError):
    """Malformed .mvol header, payload size mismatch, or unknown payload kind."""


class ConfigError(FetalsegError):
    """Invalid configuration file or parameter combination."""


class TrainingDivergedError(FetalsegError):
    """Non-finite loss or gradients encountered during optimization."""


class NoIcvError(FetalsegError):
    """The intracranial-volume mask is empty after connected-component filtering."""
