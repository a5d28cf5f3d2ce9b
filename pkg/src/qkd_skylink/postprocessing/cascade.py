"""Cascade information reconciliation with exact leakage accounting.

Pass 1 uses blocks of ``round(0.73 / qber)`` bits in natural order; each later
pass doubles the block size over a fresh public permutation. An odd block is
bisected (one disclosed parity per halving step). Every correction flips the
parity of the containing block in each earlier pass, and any block that turns
odd is bisected in turn. After the scheduled passes both sides compare a
disclosed 64-bit polynomial hash; on mismatch further passes run up to
``max_passes``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import AlignmentError, ConfigurationError, ReconciliationError
from ..seeding import make_rng
from .keys import KeyMaterial
from .polyhash import PRIME64, hash_bits

VERIFY_HASH_BITS = 64


def initial_block_size(qber: float) -> int:
    return max(4, int(round(0.73 / qber)))


@dataclass
class CascadeStats:
    block_sizes: list = field(default_factory=list)
    parities_per_pass: list = field(default_factory=list)
    corrections: int = 0
    verification_rounds: int = 0

    @property
    def parity_bits(self) -> int:
        return sum(self.parities_per_pass)

    @property
    def leakage_bits(self) -> int:
        return self.parity_bits + VERIFY_HASH_BITS * self.verification_rounds


class _Pass:
    __slots__ = ("order", "where", "size", "alice_prefix", "bob_seq", "alice_par", "bob_par")

    def __init__(self, order, size, alice, bob):
        n = order.size
        self.order = order
        self.where = np.empty(n, dtype=np.int64)
        self.where[order] = np.arange(n)
        self.size = size
        a = alice[order]
        self.alice_prefix = np.concatenate([[0], np.cumsum(a) & 1]).astype(np.int8).tolist()
        self.bob_seq = bob[order].tolist()
        nblocks = -(-n // size)
        self.alice_par = [self._alice_range(b * size, min(n, (b + 1) * size)) for b in range(nblocks)]
        self.bob_par = [sum(self.bob_seq[b * size:(b + 1) * size]) & 1 for b in range(nblocks)]

    def _alice_range(self, lo, hi):
        return self.alice_prefix[hi] ^ self.alice_prefix[lo]

    def block_range(self, b, n):
        return b * self.size, min(n, (b + 1) * self.size)


class _Session:
    def __init__(self, alice: np.ndarray, bob: np.ndarray):
        self.alice = alice
        self.bob = bob.copy()
        self.n = alice.size
        self.passes: list[_Pass] = []
        self.disclosed = 0

    def add_pass(self, order, size):
        p = _Pass(order, size, self.alice, self.bob)
        self.passes.append(p)
        self.disclosed += len(p.alice_par)
        return p

    def bisect(self, p: _Pass, lo: int, hi: int) -> int:
        """Locate one error in pass-order range [lo, hi) of odd relative parity."""
        seq = p.bob_seq
        while hi - lo > 1:
            mid = lo + (hi - lo) // 2
            self.disclosed += 1
            if p._alice_range(lo, mid) != (sum(seq[lo:mid]) & 1):
                hi = mid
            else:
                lo = mid
        return int(p.order[lo])

    def flip(self, pos: int, pending: list):
        self.bob[pos] ^= 1
        for idx, p in enumerate(self.passes):
            t = int(p.where[pos])
            p.bob_seq[t] ^= 1
            b = t // p.size
            p.bob_par[b] ^= 1
            if p.bob_par[b] != p.alice_par[b]:
                pending.append((idx, b))

    def settle(self, pending: list) -> int:
        fixed = 0
        while pending:
            idx, b = pending.pop()
            p = self.passes[idx]
            if p.bob_par[b] == p.alice_par[b]:
                continue
            lo, hi = p.block_range(b, self.n)
            self.flip(self.bisect(p, lo, hi), pending)
            fixed += 1
        return fixed


def cascade_correct(
    alice: KeyMaterial,
    bob: KeyMaterial,
    qber: float,
    passes: int = 4,
    seed: int = 0,
    max_passes: int | None = None,
):
    """Reconcile Bob's key to Alice's.

    Returns ``(corrected_bob, leakage_bits, stats)``; the corrected key
    carries Bob's prior leakage plus everything disclosed here. Raises
    :class:`ReconciliationError` if the verification hash still differs
    after ``max_passes`` (default ``passes + 8``).
    """
    if len(alice) != len(bob):
        raise AlignmentError("keys differ in length")
    if not 0 < qber <= 0.15:
        raise ConfigurationError(f"Cascade needs qber in (0, 0.15], got {qber}")
    if int(passes) != passes or passes < 2:
        raise ConfigurationError("passes must be an integer >= 2")
    max_passes = passes + 8 if max_passes is None else max_passes
    if max_passes < passes:
        raise ConfigurationError("max_passes must be >= passes")

    n = len(alice)
    rng = make_rng(seed, "cascade")
    session = _Session(alice.bits.astype(np.int8), bob.bits.astype(np.int8))
    stats = CascadeStats()
    size = initial_block_size(qber)
    hash_rng = make_rng(seed, "cascade_verify")

    done = 0
    while True:
        target = passes if done < passes else done + 1
        while done < target:
            order = np.arange(n) if done == 0 else rng.permutation(n)
            before = session.disclosed
            block = min(size << done, n) if n else 1
            p = session.add_pass(order, block)
            pending = [(len(session.passes) - 1, b) for b in range(len(p.alice_par)) if p.alice_par[b] != p.bob_par[b]]
            stats.corrections += session.settle(pending)
            stats.block_sizes.append(block)
            stats.parities_per_pass.append(session.disclosed - before)
            done += 1
        key = int(hash_rng.integers(1, PRIME64 - 1, dtype=np.uint64)) if n else 1
        stats.verification_rounds += 1
        corrected = session.bob.astype(np.uint8)
        if hash_bits(alice.bits, key) == hash_bits(corrected, key):
            break
        if done >= max_passes:
            raise ReconciliationError(f"verification hash mismatch after {done} Cascade passes")

    leak = stats.leakage_bits
    out = KeyMaterial(corrected, "corrected", bob.leakage_bits + leak, bob.source_slots)
    return out, leak, stats


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)
