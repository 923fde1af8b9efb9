"""Text-side word embeddings.

Two fixed (non-learned) embeddings map a text string to a vector that serves
both as a training target for the region embedder and as the query vector at
search time:

* ``phoc``  - binary histogram of character occurrences over a spatial
  pyramid of sub-intervals (540-d with the default alphabet and levels 1-5).
* ``dctow`` - the first few DCT-II coefficients of the word's one-hot
  character matrix, taken along the word-length axis (108-d by default).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.fft import dct as _scipy_dct

from .errors import EmptyLabel

DIGITS_AND_LOWERCASE = "0123456789abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class Alphabet:
    """Ordered symbol set; index of a symbol is its channel in all embeddings."""

    chars: str = DIGITS_AND_LOWERCASE

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("alphabet symbols must be unique")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.chars)})

    def __len__(self) -> int:
        return len(self.chars)

    def __contains__(self, c: str) -> bool:
        return c in self._index

    def index(self, c: str) -> int:
        return self._index[c]


@dataclass(frozen=True)
class PhocConfig:
    levels: tuple[int, ...] = (1, 2, 3, 4, 5)
    alphabet: Alphabet = field(default_factory=Alphabet)

    def __post_init__(self):
        if not self.levels or any(l < 1 for l in self.levels):
            raise ValueError("levels must be positive integers")

    @property
    def dim(self) -> int:
        return len(self.alphabet) * sum(self.levels)


@dataclass(frozen=True)
class DctowConfig:
    r: int = 3
    alphabet: Alphabet = field(default_factory=Alphabet)

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be a positive integer")

    @property
    def dim(self) -> int:
        return self.r * len(self.alphabet)


EmbeddingConfig = Union[PhocConfig, DctowConfig]


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-length real vector plus a tag naming the space it lives in."""

    values: np.ndarray
    kind: str  # "phoc" | "dctow" | "learned"

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def normalize_label(raw: str, alphabet: Alphabet | None = None) -> str:
    """Lowercase ``raw`` and drop every symbol not in the alphabet.

    Raises EmptyLabel if nothing survives; historical transcriptions are full
    of punctuation, so out-of-alphabet symbols are dropped rather than errors.
    """
    alphabet = alphabet or Alphabet()
    out = "".join(c for c in raw.lower() if c in alphabet)
    if not out:
        raise EmptyLabel(f"no alphabet symbols left in {raw!r}")
    return out


def phoc(word: str, cfg: PhocConfig | None = None) -> EmbeddingVector:
    """Binary pyramidal histogram of characters.

    Character k of an m-character word occupies the interval [k/m, (k+1)/m).
    At pyramid level L the word is split into L equal regions, and the
    character's bit in region r is set iff at least half of its occupancy
    interval overlaps the region.  The comparison is done in integers
    (intervals scaled by m*L), so region assignment is exact.
    """
    cfg = cfg or PhocConfig()
    if not word:
        raise EmptyLabel("cannot embed an empty word")
    K = len(cfg.alphabet)
    vec = np.zeros(cfg.dim, dtype=np.float64)
    m = len(word)
    offset = 0  # region offset of the current level, in units of K
    for level in cfg.levels:
        for k, c in enumerate(word):
            idx = cfg.alphabet.index(c)
            # char interval [k*level, (k+1)*level), region [r*m, (r+1)*m),
            # both in 1/(m*level) units; assign iff 2*overlap >= level.
            for r in range(level):
                overlap = min((k + 1) * level, (r + 1) * m) - max(k * level, r * m)
                if 2 * overlap >= level:
                    vec[(offset + r) * K + idx] = 1.0
        offset += level
    return EmbeddingVector(vec, "phoc")


def dctow(word: str, cfg: DctowConfig | None = None) -> EmbeddingVector:
    """Truncated DCT of the word's one-hot character matrix.

    Builds the m x K one-hot matrix, applies an orthonormal DCT-II along the
    word-length axis independently per alphabet channel, and keeps the first
    r coefficients of each channel.  Words shorter than r characters are
    zero-padded in the missing coefficients.  The output is flattened
    frequency-major: all K channels of coefficient 0, then coefficient 1, ...
    """
    cfg = cfg or DctowConfig()
    if not word:
        raise EmptyLabel("cannot embed an empty word")
    K = len(cfg.alphabet)
    m = len(word)
    onehot = np.zeros((m, K), dtype=np.float64)
    for k, c in enumerate(word):
        onehot[k, cfg.alphabet.index(c)] = 1.0
    coeffs = _scipy_dct(onehot, axis=0, norm="ortho")[: cfg.r]
    if m < cfg.r:
        pad = np.zeros((cfg.r - m, K), dtype=np.float64)
        coeffs = np.vstack([coeffs, pad])
    return EmbeddingVector(coeffs.reshape(-1), "dctow")


def embed_label(word: str, cfg: EmbeddingConfig) -> EmbeddingVector:
    """Dispatch to the embedding named by the config type."""
    if isinstance(cfg, PhocConfig):
        return phoc(word, cfg)
    if isinstance(cfg, DctowConfig):
        return dctow(word, cfg)
    raise TypeError(f"unsupported embedding config: {type(cfg).__name__}")


def embedding_kind(cfg: EmbeddingConfig) -> str:
    return "phoc" if isinstance(cfg, PhocConfig) else "dctow"
