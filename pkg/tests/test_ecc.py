"""SECDED code tests: single-bit correction, double-bit detection."""

from itertools import combinations

import numpy as np
from hypothesis import given, strategies as st

from cotsim.ecc import secded_encode, secded_decode

WORDS = [0x00000000, 0xFFFFFFFF, 0xDEADBEEF, 0x00000001, 0x80000000,
         0x55555555, 0xAAAAAAAA, 0x12345678]


def test_clean_words_decode_ok():
    for word in WORDS:
        parity = secded_encode(word)
        assert secded_decode(word, parity) == (word, "ok")


def test_every_single_data_bit_corrected():
    for word in WORDS:
        parity = secded_encode(word)
        for bit in range(32):
            got, status = secded_decode(word ^ (1 << bit), parity)
            assert status == "corrected"
            assert got == word


def test_parity_bit_flip_reported_without_touching_data():
    word = 0xCAFED00D
    parity = secded_encode(word)
    for bit in range(7):
        got, status = secded_decode(word, parity ^ (1 << bit))
        assert status == "corrected"
        assert got == word


def test_all_double_data_flips_detected():
    word = 0x0F0F0F0F
    parity = secded_encode(word)
    for b1, b2 in combinations(range(32), 2):
        corrupted = word ^ (1 << b1) ^ (1 << b2)
        got, status = secded_decode(corrupted, parity)
        assert status == "double"
        assert got == corrupted  # no silent miscorrection


def test_random_words_single_flip_roundtrip():
    rng = np.random.default_rng(5)
    for _ in range(200):
        word = int(rng.integers(0, 1 << 32))
        bit = int(rng.integers(0, 32))
        got, status = secded_decode(word ^ (1 << bit), secded_encode(word))
        assert (got, status) == (word, "corrected")


@given(st.integers(min_value=0, max_value=(1 << 32) - 1))
def test_encode_is_deterministic_and_seven_bits(word):
    parity = secded_encode(word)
    assert 0 <= parity < 128
    assert parity == secded_encode(word)
