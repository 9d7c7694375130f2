"""Exception hierarchy; exit_code drives the CLI process status."""


class CascadeForestError(Exception):
    exit_code = 1


class ConfigError(CascadeForestError):
    """Bad configuration: invalid literals, threshold ordering, grid setup."""

    exit_code = 2


class DataError(CascadeForestError):
    """Bad input data: missing files, checksum mismatch, malformed cells."""

    exit_code = 3


class TrainingError(CascadeForestError):
    """Runtime failure while training or evaluating."""

    exit_code = 4


class InvalidInputError(TrainingError):
    """Operation called with arguments violating its preconditions."""
