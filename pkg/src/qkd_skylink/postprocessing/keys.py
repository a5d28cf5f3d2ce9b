"""Key material, sifting and disclosed-sample QBER estimation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import AlignmentError, ConfigurationError, InsufficientDataError
from ..link import NO_CLICK, DetectionBlock
from ..seeding import make_rng
from ..transmitter import QUANTUM, SIGNAL, FrameBlock

STAGES = ("raw", "sifted", "corrected", "final")
MIN_QBER_SAMPLE = 50


@dataclass(frozen=True, eq=False)
class KeyMaterial:
    bits: np.ndarray
    stage: str = "raw"
    leakage_bits: int = 0
    source_slots: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))
        if self.stage not in STAGES:
            raise ConfigurationError(f"unknown key stage {self.stage!r}")
        if self.leakage_bits < 0:
            raise ConfigurationError("leakage_bits must be >= 0")
        if self.bits.size and self.bits.max() > 1:
            raise ConfigurationError("key bits must be 0 or 1")

    def __len__(self):
        return self.bits.size

    def __eq__(self, other):
        if not isinstance(other, KeyMaterial):
            return NotImplemented
        return (
            self.stage == other.stage
            and self.leakage_bits == other.leakage_bits
            and np.array_equal(self.bits, other.bits)
            and (
                (self.source_slots is None and other.source_slots is None)
                or (
                    self.source_slots is not None
                    and other.source_slots is not None
                    and np.array_equal(self.source_slots, other.source_slots)
                )
            )
        )

    def with_leakage(self, extra: int) -> "KeyMaterial":
        return replace(self, leakage_bits=self.leakage_bits + int(extra))


def sift_mask(alice_frames: FrameBlock, bob_records: DetectionBlock) -> np.ndarray:
    if len(alice_frames) != len(bob_records) or not np.array_equal(alice_frames.slot, bob_records.slot):
        raise AlignmentError("detection records are not aligned slot-for-slot with the transmitted frames")
    return (
        (bob_records.outcome != NO_CLICK)
        & (alice_frames.role == QUANTUM)
        & (alice_frames.intensity_class == SIGNAL)
        & (alice_frames.basis == bob_records.bob_basis)
    )


def sift(alice_frames: FrameBlock, bob_records: DetectionBlock):
    """Keep clicked, basis-matched, signal-class quantum slots on both sides."""
    keep = sift_mask(alice_frames, bob_records)
    slots = alice_frames.slot[keep]
    alice = KeyMaterial(alice_frames.bit[keep], "sifted", 0, slots.copy())
    bob = KeyMaterial(bob_records.bit[keep], "sifted", 0, slots.copy())
    return alice, bob


def qber_sample_positions(n: int, sample_fraction: float, seed: int) -> np.ndarray:
    if not 0 < sample_fraction < 1:
        raise ConfigurationError("sample_fraction must lie in (0, 1)")
    m = int(round(sample_fraction * n))
    if m < MIN_QBER_SAMPLE:
        raise InsufficientDataError(f"QBER sample of {m} bits is below {MIN_QBER_SAMPLE}")
    return np.sort(make_rng(seed, "qber_sample").permutation(n)[:m])


def estimate_qber(alice: KeyMaterial, bob: KeyMaterial, sample_fraction: float, seed: int):
    """Disclose a random sample, estimate QBER from it and drop it from both keys.

    Returns ``(qber, alice_remaining, bob_remaining)``; each disclosed bit is
    charged as one bit of leakage.
    """
    if len(alice) != len(bob):
        raise AlignmentError("keys differ in length")
    if len(alice) < 100:
        raise InsufficientDataError(f"need at least 100 sifted bits, have {len(alice)}")
    pos = qber_sample_positions(len(alice), sample_fraction, seed)
    qber = float(np.mean(alice.bits[pos] != bob.bits[pos]))
    keep = np.ones(len(alice), dtype=bool)
    keep[pos] = False

    def rest(k: KeyMaterial) -> KeyMaterial:
        slots = None if k.source_slots is None else k.source_slots[keep]
        return KeyMaterial(k.bits[keep], k.stage, k.leakage_bits + pos.size, slots)

    return qber, rest(alice), rest(bob)
