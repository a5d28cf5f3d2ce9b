"""Toeplitz-hash privacy amplification over GF(2)."""

from __future__ import annotations

import numpy as np

from ..errors import DomainError
from ..seeding import make_rng
from .keys import KeyMaterial


def toeplitz_defining_bits(seed: int, n: int, m: int) -> np.ndarray:
    """The m + n - 1 bits fixing an m x n Toeplitz matrix: ``T[i, j] = t[i - j + n - 1]``."""
    return make_rng(seed, "toeplitz").integers(0, 2, size=m + n - 1, dtype=np.uint8)


def toeplitz_columns_rows(t: np.ndarray, n: int, m: int):
    """First column and first row of the matrix defined by ``t``."""
    return t[n - 1:n - 1 + m].copy(), t[n - 1::-1][:n].copy()


def toeplitz_multiply(t: np.ndarray, x: np.ndarray, m: int) -> np.ndarray:
    """``T x mod 2`` via FFT convolution; rounding stays exact for n well below 2^40."""
    n = x.size
    size = 1 << int(np.ceil(np.log2(max(2, n + m - 1 + n - 1))))
    conv = np.fft.irfft(np.fft.rfft(t.astype(float), size) * np.fft.rfft(x.astype(float), size), size)
    return (np.rint(conv[n - 1:n - 1 + m]).astype(np.int64) & 1).astype(np.uint8)


def toeplitz_pa(key: KeyMaterial, seed: int, out_len: int) -> KeyMaterial:
    """Compress ``key`` to ``out_len`` bits with a seeded Toeplitz matrix."""
    n = len(key)
    if int(out_len) != out_len or out_len < 1:
        raise DomainError("out_len must be a positive integer")
    if out_len > n:
        raise DomainError(f"cannot extract {out_len} bits from {n}")
    t = toeplitz_defining_bits(seed, n, out_len)
    return KeyMaterial(toeplitz_multiply(t, key.bits, out_len), "final", 0, None)
