"""Exception types shared across the package."""


class WordspotError(Exception):
    """Base class for all errors raised by this package."""


class EmptyLabel(WordspotError):
    """A label or query contains no alphabet symbols after normalization."""


class DegenerateBox(WordspotError):
    """A box has non-positive width or height."""


class ZeroVector(WordspotError):
    """A vector that must have positive norm is (numerically) zero."""


class NonBinaryTarget(WordspotError):
    """A target vector expected to be binary contains other values."""


class DimensionMismatch(WordspotError):
    """Input dimensions do not match the network or loss expectations."""


class EmptyCorpus(WordspotError):
    """A training corpus contains no usable crops."""


class NoPositives(WordspotError):
    """No proposal matched any ground-truth box above the positive threshold."""


class WordTooLarge(WordspotError):
    """A word crop does not fit on the layout canvas."""


class NoRelevantInstances(WordspotError):
    """A retrieval query has no ground-truth instances to match."""


class UnknownPage(WordspotError):
    """A page id is not present in the index."""


class VersionMismatch(WordspotError):
    """A persisted file has an unsupported magic number or version."""


class CorruptIndex(WordspotError):
    """An index file failed checksum or structural validation."""


class CorruptModel(WordspotError):
    """A model checkpoint failed structural validation."""


class ConfigError(WordspotError):
    """A project configuration document is malformed."""
