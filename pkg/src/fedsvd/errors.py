"""Exception hierarchy shared by every fedsvd module."""


class FedSvdError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(FedSvdError, ValueError):
    """A numeric value lies outside the domain of an operation."""


class ArgumentError(FedSvdError, ValueError):
    """An argument is structurally invalid (empty, negative, degenerate)."""


class ShapeError(FedSvdError, ValueError):
    """Array dimensions do not agree."""


class IngestError(FedSvdError):
    """A data file could not be parsed."""


class FormatError(IngestError):
    """A data file is structurally malformed (e.g. ragged rows)."""


class EncodingError(FedSvdError, ValueError):
    """A label cannot be mapped onto the class list."""


class ProtocolError(FedSvdError):
    """A wire frame or payload is malformed.

    ``offset`` is the byte position at which decoding stopped, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TransportError(FedSvdError):
    """The connection to a peer failed."""


class RemoteError(FedSvdError):
    """The peer answered with an error frame."""
