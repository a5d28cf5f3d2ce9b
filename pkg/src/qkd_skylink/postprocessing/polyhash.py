"""Polynomial-evaluation universal hashing over GF(p), p = 2^64 - 59."""

from __future__ import annotations

import numpy as np

PRIME64 = (1 << 64) - 59


def poly_eval(words, key: int, p: int = PRIME64) -> int:
    """Horner evaluation of sum_i w_i key^(L-i) mod p (no constant term)."""
    acc = 0
    key %= p
    for w in words:
        acc = (acc + int(w)) * key % p
    return acc


def byte_words(data: bytes) -> list[int]:
    """7-byte little-endian words followed by a length word (keeps prefixes distinct)."""
    words = [int.from_bytes(data[i:i + 7], "little") for i in range(0, len(data), 7)]
    words.append(len(data) | (1 << 60))
    return words


def bit_words(bits: np.ndarray) -> list[int]:
    """Pack a 0/1 array into 56-bit words followed by a length word."""
    packed = np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()
    words = [int.from_bytes(packed[i:i + 7], "little") for i in range(0, len(packed), 7)]
    words.append(int(np.asarray(bits).size) | (1 << 60))
    return words


def hash_bits(bits: np.ndarray, key: int) -> int:
    return poly_eval(bit_words(bits), key)
