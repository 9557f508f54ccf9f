"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class InvalidStateError(RuntimeError):
    """An operation was requested in a state where it is not allowed."""


class FormatError(RuntimeError):
    """A persisted file is malformed or unsupported.

    ``offset`` is the byte offset at which the problem was detected, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
