"""Exceptions for malformed or corrupted data."""


class FormatError(ValueError):
    """Input bytes do not follow the expected format."""


class TruncatedStream(FormatError):
    """A decoder ran past the end of its input."""


class BitCountMismatch(FormatError):
    """A payload decoded to a different number of bits or bytes than declared."""
