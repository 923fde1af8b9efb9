import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wordspot.embeddings import (
    DIGITS_AND_LOWERCASE,
    Alphabet,
    DctowConfig,
    PhocConfig,
    dctow,
    embed_label,
    embedding_kind,
    normalize_label,
    phoc,
)
from wordspot.errors import EmptyLabel

ALPHA = Alphabet()


def random_words(n, rng, min_len=1, max_len=30):
    out = []
    for _ in range(n):
        m = int(rng.integers(min_len, max_len + 1))
        out.append("".join(rng.choice(list(DIGITS_AND_LOWERCASE), size=m)))
    return out


# -- oracles ----------------------------------------------------------------


def phoc_oracle(word, levels=(1, 2, 3, 4, 5), alphabet=ALPHA):
    """Interval-overlap construction in exact rational arithmetic."""
    K = len(alphabet)
    vec = np.zeros(K * sum(levels))
    m = len(word)
    offset = 0
    for lv in levels:
        for r in range(lv):
            r0, r1 = Fraction(r, lv), Fraction(r + 1, lv)
            for k, ch in enumerate(word):
                o0, o1 = Fraction(k, m), Fraction(k + 1, m)
                overlap = min(o1, r1) - max(o0, r0)
                if overlap >= (o1 - o0) / 2:
                    vec[(offset + r) * K + alphabet.index(ch)] = 1.0
        offset += lv
    return vec


def dctow_oracle(word, r=3, alphabet=ALPHA):
    """Direct O(m^2) orthonormal DCT-II summation."""
    K = len(alphabet)
    m = len(word)
    onehot = np.zeros((m, K))
    for i, ch in enumerate(word):
        onehot[i, alphabet.index(ch)] = 1.0
    out = np.zeros(r * K)
    for f in range(min(r, m)):
        s = math.sqrt(1.0 / m) if f == 0 else math.sqrt(2.0 / m)
        for c in range(K):
            acc = 0.0
            for n in range(m):
                acc += onehot[n, c] * math.cos(math.pi * (2 * n + 1) * f / (2 * m))
            out[f * K + c] = s * acc
    return out


# -- alphabet ---------------------------------------------------------------


class TestAlphabet:
    def test_default_is_36_symbols(self):
        assert len(ALPHA) == 36
        assert ALPHA.chars == DIGITS_AND_LOWERCASE

    def test_lookup_roundtrip(self):
        for i, ch in enumerate(ALPHA.chars):
            assert ALPHA.index(ch) == i

    def test_duplicate_symbols_rejected(self):
        with pytest.raises(ValueError):
            Alphabet("aab")

    def test_contains(self):
        assert "a" in ALPHA
        assert "A" not in ALPHA


class TestNormalizeLabel:
    def test_lowercases(self):
        assert normalize_label("Washington") == "washington"

    def test_strips_non_alphabet(self):
        assert normalize_label("1719.") == "1719"

    def test_empty_result_raises(self):
        with pytest.raises(EmptyLabel):
            normalize_label("!!!")


# -- phoc -------------------------------------------------------------------


class TestPhoc:
    def test_dim_540_all_lengths(self):
        for m in range(1, 31):
            vec = phoc("a" * m)
            assert vec.dim == 540
            assert vec.values.shape == (540,)

    def test_values_binary(self):
        rng = np.random.default_rng(0)
        for word in random_words(50, rng):
            v = phoc(word).values
            assert set(np.unique(v)) <= {0.0, 1.0}

    def test_ab_level2_regions(self):
        # level 2 block starts after the level-1 block of 36 entries
        v = phoc("ab").values
        K = 36
        a, b = ALPHA.index("a"), ALPHA.index("b")
        assert v[K + a] == 1.0 and v[K + b] == 0.0  # region 0
        assert v[2 * K + b] == 1.0 and v[2 * K + a] == 0.0  # region 1

    def test_aa_equals_a_at_level1(self):
        va = phoc("a").values[:36]
        vaa = phoc("aa").values[:36]
        assert np.array_equal(va, vaa)

    def test_permutation_sensitive_above_level1(self):
        vab, vba = phoc("ab").values, phoc("ba").values
        assert np.array_equal(vab[:36], vba[:36])
        assert not np.array_equal(vab[36:108], vba[36:108])

    def test_oracle_equivalence_1000_words(self):
        rng = np.random.default_rng(42)
        for word in random_words(1000, rng):
            got = phoc(word).values
            want = phoc_oracle(word)
            assert np.max(np.abs(got - want)) < 1e-12, word

    def test_empty_word_rejected(self):
        with pytest.raises(EmptyLabel):
            phoc("")

    def test_kind_tag(self):
        assert phoc("abc").kind == "phoc"
        assert embedding_kind(PhocConfig()) == "phoc"


# -- dctow ------------------------------------------------------------------


class TestDctow:
    def test_dim_108_all_lengths(self):
        for m in range(1, 31):
            vec = dctow("b" * m)
            assert vec.dim == 108
            assert vec.values.shape == (108,)

    def test_single_char_unit_coefficient(self):
        v = dctow("a").values
        a = ALPHA.index("a")
        assert v[a] == pytest.approx(1.0, abs=1e-12)
        mask = np.ones(108, dtype=bool)
        mask[a] = False
        assert np.all(v[mask] == 0.0)

    def test_ab_vs_ba_coefficient_blocks(self):
        vab, vba = dctow("ab").values, dctow("ba").values
        K = 36
        assert np.allclose(vab[:K], vba[:K], atol=1e-12)
        # frequency-1 blocks flip sign between the two orders
        a, b = ALPHA.index("a"), ALPHA.index("b")
        assert vab[K + a] == pytest.approx(-vba[K + a])
        assert vab[K + b] == pytest.approx(-vba[K + b])
        assert not np.allclose(vab[K : 2 * K], vba[K : 2 * K], atol=1e-6)

    def test_coefficient0_is_scaled_count_vector(self):
        rng = np.random.default_rng(3)
        for word in random_words(100, rng):
            m = len(word)
            counts = np.zeros(36)
            for ch in word:
                counts[ALPHA.index(ch)] += 1
            block0 = dctow(word).values[:36]
            assert np.allclose(block0 * math.sqrt(m), counts, atol=1e-9)

    def test_zero_padding_short_words(self):
        v = dctow("z").values  # m=1 < r=3: frequencies 1 and 2 all zero
        assert np.all(v[36:] == 0.0)
        v2 = dctow("zz").values  # m=2 < r=3: frequency 2 all zero
        assert np.all(v2[72:] == 0.0)

    def test_oracle_equivalence_1000_words(self):
        rng = np.random.default_rng(7)
        for word in random_words(1000, rng):
            got = dctow(word).values
            want = dctow_oracle(word)
            assert np.max(np.abs(got - want)) < 1e-12, word

    def test_kind_tag(self):
        assert dctow("abc").kind == "dctow"
        assert embedding_kind(DctowConfig()) == "dctow"


# -- shared -----------------------------------------------------------------


class TestEmbedLabel:
    def test_dispatch(self):
        assert embed_label("cat", PhocConfig()).dim == 540
        assert embed_label("cat", DctowConfig()).dim == 108

    def test_determinism_bit_identical(self):
        for word in ("stone", "x", "007history"):
            assert np.array_equal(phoc(word).values, phoc(word).values)
            assert np.array_equal(dctow(word).values, dctow(word).values)


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=DIGITS_AND_LOWERCASE, min_size=1, max_size=30))
def test_dims_exact_property(word):
    assert phoc(word).values.shape == (540,)
    assert dctow(word).values.shape == (108,)


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet=DIGITS_AND_LOWERCASE, min_size=1, max_size=12))
def test_phoc_matches_rational_oracle_property(word):
    assert np.array_equal(phoc(word).values, phoc_oracle(word))
