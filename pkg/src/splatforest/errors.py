"""Exception types shared across the package."""


class StructureError(Exception):
    """A node id or pointer does not address a valid node."""


class FormatError(Exception):
    """A file on disk does not conform to its expected layout."""


class TrainAbort(RuntimeError):
    """Training hit a non-recoverable numerical state (non-finite loss)."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
