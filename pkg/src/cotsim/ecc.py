"""SECDED code over 32-bit words: Hamming(38,32) plus an overall parity bit.

Used by the scrubber's algorithmic repair mode: one flipped bit per word
is correctable, two flipped bits are detected but not correctable.
"""

from __future__ import annotations

_PARITY_POSITIONS = (1, 2, 4, 8, 16, 32)
_DATA_POSITIONS = [p for p in range(1, 40) if p & (p - 1)][:32]


def _word_to_codebits(word: int) -> dict[int, int]:
    bits = {}
    for i, pos in enumerate(_DATA_POSITIONS):
        bits[pos] = (word >> i) & 1
    return bits


def secded_encode(word: int) -> int:
    """Parity byte for a 32-bit word: bits 0..5 = Hamming checks, bit 6 = overall."""
    bits = _word_to_codebits(word)
    parity = 0
    for i, k in enumerate(_PARITY_POSITIONS):
        p = 0
        for pos, b in bits.items():
            if pos & k:
                p ^= b
        bits[k] = p
        parity |= p << i
    overall = 0
    for b in bits.values():
        overall ^= b
    parity |= overall << 6
    return parity


def secded_decode(word: int, parity: int) -> tuple[int, str]:
    """Decode a possibly corrupted word against its stored parity byte.

    Returns (corrected word, status) with status one of:
    "ok", "corrected" (single-bit error fixed), "double" (uncorrectable).
    """
    bits = _word_to_codebits(word)
    for i, k in enumerate(_PARITY_POSITIONS):
        bits[k] = (parity >> i) & 1
    stored_overall = (parity >> 6) & 1

    syndrome = 0
    for k in _PARITY_POSITIONS:
        check = 0
        for pos, b in bits.items():
            if pos & k:
                check ^= b
        if check:
            syndrome |= k
    overall = stored_overall
    for b in bits.values():
        overall ^= b

    if syndrome == 0:
        # overall != 0 means the overall parity bit itself flipped
        return word, "ok" if overall == 0 else "corrected"
    if overall == 0:
        return word, "double"
    if syndrome in _PARITY_POSITIONS:
        return word, "corrected"
    if syndrome not in _DATA_POSITIONS:
        # multi-bit error aliasing onto an unused code position
        return word, "double"
    idx = _DATA_POSITIONS.index(syndrome)
    return word ^ (1 << idx), "corrected"
