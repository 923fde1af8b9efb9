"""Segmentation-free word search for scanned handwritten pages.

Pipeline: region proposals from connected components under varied binary
closings, a trainable wordness scorer + descriptor network over fixed-size
bilinear crops, text embeddings (pyramidal character histogram or DCT of a
one-hot character matrix), cosine retrieval with per-page NMS, plus
training, evaluation, CLI, and an HTTP search service.
"""

__version__ = "0.1.0"

from .embeddings import (  # noqa: F401
    DIGITS_AND_LOWERCASE,
    Alphabet,
    DctowConfig,
    PhocConfig,
    dctow,
    embed_label,
    normalize_label,
    phoc,
)
from .errors import WordspotError  # noqa: F401
from .geometry import Box  # noqa: F401
