"""Exception hierarchy shared by every megasplat module.

Each class carries a ``prefix`` and an ``exit_code`` so the command line can
report failures as a single machine-parsable line.
"""


class MegasplatError(Exception):
    """Base class for all megasplat errors."""

    prefix = "error"
    exit_code = 1


class InvalidParameterError(MegasplatError, ValueError):
    """A numeric parameter violates its domain (e.g. a zero-norm quaternion)."""

    prefix = "invalid-parameter"
    exit_code = 3

    def __init__(self, message: str, index: int | None = None) -> None:
        self.index = index
        if index is not None:
            message = f"{message} (index {index})"
        super().__init__(message)


class ConfigurationError(MegasplatError):
    """Network or pipeline components are wired with inconsistent shapes."""

    prefix = "configuration"
    exit_code = 4


class DimensionMismatchError(MegasplatError, ValueError):
    """Two arrays that must share a shape do not."""

    prefix = "dimension-mismatch"
    exit_code = 5


class StateError(MegasplatError, RuntimeError):
    """An operation needs state that was never produced (e.g. a forward cache)."""

    prefix = "state"
    exit_code = 6


class EmptyCloudError(MegasplatError, ValueError):
    """An operation needs at least one Gaussian."""

    prefix = "empty-cloud"
    exit_code = 7


class DatasetError(MegasplatError):
    """Base class for dataset problems."""

    prefix = "dataset"
    exit_code = 10


class ManifestError(DatasetError):
    """``cameras.json`` is missing fields or internally inconsistent."""

    prefix = "malformed-manifest"
    exit_code = 11


class MissingFileError(DatasetError, FileNotFoundError):
    """A referenced file does not exist."""

    prefix = "missing-file"
    exit_code = 12


class ArchiveError(MegasplatError):
    """Base class for model archive problems."""

    prefix = "archive"
    exit_code = 20


class ArchiveMagicError(ArchiveError):
    """The file does not start with the archive magic."""

    prefix = "archive-magic"
    exit_code = 21


class ArchiveVersionError(ArchiveError):
    """The archive was written by an unsupported format version."""

    prefix = "archive-version"
    exit_code = 22


class ArchiveChecksumError(ArchiveError):
    """The CRC32 of the decompressed payload does not match."""

    prefix = "archive-checksum"
    exit_code = 23


class ArchiveFormatError(ArchiveError):
    """The payload is truncated or its sections do not parse."""

    prefix = "archive-format"
    exit_code = 24
