"""Typed errors raised by the scoring engine.

Every invariant violation surfaces as a subclass of MaxSimError, so callers
can catch one base class or match on the specific failure.
"""


class MaxSimError(Exception):
    """Base class for all engine errors."""


class DimMismatch(MaxSimError):
    def __init__(self, dim_q, dim_d):
        super().__init__(f"embedding widths differ: query dim {dim_q} vs document dim {dim_d}")
        self.dim_q = dim_q
        self.dim_d = dim_d


class NaNInput(MaxSimError):
    """Non-finite value found where validated input is required."""

    def __init__(self, location):
        super().__init__(f"non-finite input at {location}")
        self.location = location


class EmptyDocument(MaxSimError):
    def __init__(self, index):
        super().__init__(f"document {index} has no valid tokens")
        self.index = index


class ShapeMismatch(MaxSimError):
    pass


class BadTileConfig(MaxSimError):
    pass


class IndexOutOfRange(MaxSimError):
    pass


class StaleCsr(MaxSimError):
    """CSR inverse does not belong to the arguments it is applied to."""


class StaleArgmin(MaxSimError):
    """Saved nearest-neighbour indices do not match the point sets."""


class KTooLarge(MaxSimError):
    def __init__(self, k, corpus_size):
        super().__init__(f"top-{k} requested from a corpus of {corpus_size} documents")
        self.k = k
        self.corpus_size = corpus_size


class IoError(MaxSimError):
    pass


class BadMagic(IoError):
    pass


class VersionUnsupported(IoError):
    def __init__(self, version):
        super().__init__(f"unsupported embedding file version {version}")
        self.version = version


class TruncatedPayload(IoError):
    def __init__(self, expected, actual):
        super().__init__(f"payload truncated: expected {expected} bytes, file holds {actual}")
        self.expected = expected
        self.actual = actual
