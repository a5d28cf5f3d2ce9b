"""Labeled seed derivation.

Every random stream in a run is derived from one master seed::

    derive_seed(master, label, index) =
        little-endian u64 of BLAKE2b-64("{master}:{label}:{index}")

so a stage can be re-run in isolation and still draw the same numbers.
"""

from __future__ import annotations

import hashlib

import numpy as np

U64_MASK = (1 << 64) - 1


def derive_seed(master: int, label: str, index: int = 0) -> int:
    """Return the 64-bit seed for stream ``(label, index)`` under ``master``."""
    token = f"{int(master) & U64_MASK}:{label}:{int(index)}".encode()
    return int.from_bytes(hashlib.blake2b(token, digest_size=8).digest(), "little")


def make_rng(seed: int, label: str | None = None, index: int = 0) -> np.random.Generator:
    """Numpy generator for ``seed`` (optionally re-derived through ``label``)."""
    if label is not None:
        seed = derive_seed(seed, label, index)
    return np.random.Generator(np.random.PCG64(int(seed) & U64_MASK))


def chunk_uniforms(seed: int, label: str, chunk_index: int, shape) -> np.ndarray:
    """Uniforms for one aligned chunk of slots.

    Uses the counter-based Philox generator keyed by the derived seed, so the
    numbers for chunk ``k`` never depend on how many chunks were drawn before.
    """
    key = derive_seed(seed, label, chunk_index)
    return np.random.Generator(np.random.Philox(key=key)).random(shape)


def slot_uniforms(seed: int, label: str, slots: np.ndarray, width: int, chunk: int = 1 << 16) -> np.ndarray:
    """Uniforms of shape (len(slots), width) that depend only on (seed, label, slot)."""
    slots = np.asarray(slots, dtype=np.int64)
    out = np.empty((slots.size, width))
    if slots.size == 0:
        return out
    first, last = int(slots[0]), int(slots[-1])
    if last - first + 1 == slots.size and np.all(np.diff(slots) == 1):
        pos = 0
        for c in range(first // chunk, last // chunk + 1):
            lo = max(first, c * chunk)
            hi = min(last + 1, (c + 1) * chunk)
            out[pos:pos + hi - lo] = chunk_uniforms(seed, label, c, (chunk, width))[lo - c * chunk:hi - c * chunk]
            pos += hi - lo
        return out
    chunks = slots // chunk
    for c in np.unique(chunks):
        sel = np.flatnonzero(chunks == c)
        out[sel] = chunk_uniforms(seed, label, int(c), (chunk, width))[slots[sel] - c * chunk]
    return out
