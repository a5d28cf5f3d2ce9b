"""Photon transport and threshold detection, with an optional intercept-resend
eavesdropper.

Bob's receiver is an abstract two-basis measurement with one threshold
detector per outcome. Measuring a pulse of phase ``phi`` in basis ``b`` sends
each photon to the bit-0 detector with probability ``cos^2((phi - b*pi/2)/2)``,
then an intrinsic misalignment flips it with probability ``error_prob``.
Dark counts are split evenly between the two detectors. Double clicks are
squashed to a uniformly random bit.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, LengthMismatchError
from .seeding import slot_uniforms
from .transmitter import QUANTUM, FrameBlock, PulseFrame, encode_phase
from .turbulence import TransmittanceSeries

NO_CLICK, CLICK, DOUBLE_CLICK = 0, 1, 2
OUTCOME_NAMES = ("no_click", "click", "double_click")
DETECTION_CSV_HEADER = ("slot", "bob_basis", "outcome", "bit")


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 0.5
    dark_count_prob_per_slot: float = 1e-6
    error_prob: float = 0.01

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigurationError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.efficiency <= 1:
            out.append("detector.efficiency must lie in (0, 1]")
        if not 0 <= self.dark_count_prob_per_slot < 1:
            out.append("detector.dark_count_prob_per_slot must lie in [0, 1)")
        if not 0 <= self.error_prob < 0.5:
            out.append("detector.error_prob must lie in [0, 0.5)")
        return out

    @property
    def branch_dark_prob(self) -> float:
        return 1.0 - math.sqrt(1.0 - self.dark_count_prob_per_slot)


def click_probability(mu, eta_total, det: DetectorModel):
    """P(at least one detector fires) for a weak coherent pulse of mean ``mu``."""
    d = det.dark_count_prob_per_slot
    # d + (1 - d)(1 - e^-x): same value as 1 - (1 - d)e^-x, exact at x = 0
    return d - (1.0 - d) * np.expm1(-np.asarray(mu) * np.asarray(eta_total) * det.efficiency)


@dataclass(frozen=True)
class DetectionRecord:
    slot: int
    bob_basis: int
    outcome: int
    bit: int


@dataclass(frozen=True, eq=False)
class DetectionBlock:
    """Bob's records (``bit`` is -1 without a click) plus the simulator's hidden
    photon-number bookkeeping, which post-processing never reads."""

    slot: np.ndarray
    bob_basis: np.ndarray
    outcome: np.ndarray
    bit: np.ndarray
    photon_number: np.ndarray

    def __len__(self):
        return self.slot.size

    def __getitem__(self, i) -> DetectionRecord:
        return DetectionRecord(int(self.slot[i]), int(self.bob_basis[i]), int(self.outcome[i]), int(self.bit[i]))

    def __eq__(self, other):
        if not isinstance(other, DetectionBlock):
            return NotImplemented
        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in dataclasses.fields(self))

    @property
    def clicked(self) -> np.ndarray:
        return self.outcome != NO_CLICK

    def select(self, index) -> "DetectionBlock":
        return DetectionBlock(**{f.name: getattr(self, f.name)[index] for f in dataclasses.fields(self)})

    @classmethod
    def concatenate(cls, blocks) -> "DetectionBlock":
        return cls(**{f.name: np.concatenate([getattr(b, f.name) for b in blocks]) for f in dataclasses.fields(cls)})

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DETECTION_CSV_HEADER)
            for s, b, o, bit in zip(self.slot, self.bob_basis, self.outcome, self.bit):
                w.writerow([int(s), int(b), OUTCOME_NAMES[o], "" if bit < 0 else int(bit)])




def _poisson_inverse(u: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Poisson(mu) variates by CDF inversion, one uniform each."""
    n = np.zeros(u.shape, dtype=np.int64)
    pmf = np.exp(-mu)
    cdf = pmf.copy()
    k = 0
    k_max = int(np.max(mu, initial=0.0) + 12 * math.sqrt(np.max(mu, initial=0.0)) + 30)
    active = u >= cdf
    while np.any(active) and k < k_max:
        k += 1
        pmf = pmf * mu / k
        cdf = cdf + pmf
        n[active] = k
        active &= u >= cdf
    return n


def _bit0_probability(phase, bob_basis, error_prob):
    c = np.cos((phase - bob_basis * (np.pi / 2.0)) / 2.0) ** 2
    return (1.0 - error_prob) * c + error_prob * (1.0 - c)


def intercept_resend(frame, seed: int, resend_mu: float = 0.5):
    """Eve measures in a uniformly random basis and resends what she saw.

    Accepts a :class:`PulseFrame` or a :class:`FrameBlock`; reference frames
    pass through untouched. Alice's labels (basis, bit) are kept; only the
    physical state (phase, photon number) is replaced.
    """
    single = isinstance(frame, PulseFrame)
    slots = np.atleast_1d(np.asarray(frame.slot, dtype=np.int64))
    u = slot_uniforms(seed, "eve", slots, 2)
    eve_basis = (u[:, 0] >= 0.5).astype(np.int8)
    p0 = _bit0_probability(np.atleast_1d(frame.phase_rad), eve_basis, 0.0)
    eve_bit = (u[:, 1] >= p0).astype(np.int8)
    quantum = np.atleast_1d(np.asarray(frame.role)) == QUANTUM
    phase = np.where(quantum, encode_phase(eve_bit, eve_basis), np.atleast_1d(frame.phase_rad))
    mu = np.where(quantum, resend_mu, np.atleast_1d(frame.mean_photon_number))
    if single:
        return dataclasses.replace(frame, phase_rad=float(phase[0]), mean_photon_number=float(mu[0]))
    return dataclasses.replace(frame, phase_rad=phase, mean_photon_number=mu)


def _series_values(series, n: int, slot_rate_hz: float | None, name: str) -> np.ndarray:
    if isinstance(series, TransmittanceSeries):
        if slot_rate_hz is None:
            raise ConfigurationError(f"{name}: slot_rate_hz required with a time series")
        if series.duration_s * slot_rate_hz + 1e-9 < n:
            raise LengthMismatchError(f"{name} covers {series.duration_s:.6g} s, frames need {n / slot_rate_hz:.6g} s")
        return series.at(np.arange(n) / slot_rate_hz)
    arr = np.broadcast_to(np.asarray(series, dtype=float), (n,)) if np.ndim(series) == 0 else np.asarray(series, dtype=float)
    if arr.size < n:
        raise LengthMismatchError(f"{name} has {arr.size} samples for {n} frames")
    return arr[:n]


def transmit_and_detect(
    frames: FrameBlock,
    eta_series,
    coupling_series,
    det: DetectorModel,
    eve: str | None = None,
    seed: int = 0,
    slot_rate_hz: float | None = None,
    resend_mu: float = 0.5,
) -> DetectionBlock:
    """Sample Bob's outcome for every frame.

    ``eta_series`` and ``coupling_series`` are per-frame arrays (or scalars),
    or :class:`TransmittanceSeries` indexed by frame time ``i / slot_rate_hz``.
    Each slot consumes a fixed set of uniforms keyed by its slot number, so
    its outcome depends only on its frame, its channel values and the seed.
    Reference frames go to the phase-reference receiver and are recorded
    as no-click.
    """
    n = len(frames)
    eta = _series_values(eta_series, n, slot_rate_hz, "eta_series")
    coupling = _series_values(coupling_series, n, slot_rate_hz, "coupling_series")
    if eve not in (None, "none", "intercept_resend"):
        raise ConfigurationError(f"unknown eavesdropper {eve!r}")
    if eve == "intercept_resend":
        frames = intercept_resend(frames, seed, resend_mu)

    slots = np.asarray(frames.slot, dtype=np.int64)
    u = slot_uniforms(seed, "detect", slots, 6)
    quantum = frames.role == QUANTUM
    mu = np.where(quantum, frames.mean_photon_number, 0.0)
    bob_basis = (u[:, 0] >= 0.5).astype(np.int8)
    n_ph = _poisson_inverse(u[:, 1], mu)

    hit0 = np.zeros(n, dtype=bool)
    hit1 = np.zeros(n, dtype=bool)
    lit = np.flatnonzero(n_ph > 0)
    if lit.size:
        k = n_ph[lit]
        p_det = np.clip(eta[lit] * coupling[lit] * det.efficiency, 0.0, 1.0)
        p0 = _bit0_probability(frames.phase_rad[lit], bob_basis[lit], det.error_prob)
        q0, q1 = p_det * p0, p_det * (1.0 - p0)
        none = (1.0 - p_det) ** k
        only0 = (1.0 - q1) ** k - none
        only1 = (1.0 - q0) ** k - none
        up = u[lit, 2]
        hit0[lit] = (up >= none) & ((up < none + only0) | (up >= none + only0 + only1))
        hit1[lit] = up >= none + only0

    d = det.branch_dark_prob
    click0 = (hit0 | (u[:, 3] < d)) & quantum
    click1 = (hit1 | (u[:, 4] < d)) & quantum
    outcome = np.where(click0 & click1, DOUBLE_CLICK, np.where(click0 | click1, CLICK, NO_CLICK)).astype(np.int8)
    bit = np.full(n, -1, dtype=np.int8)
    bit[click1 & ~click0] = 1
    bit[click0 & ~click1] = 0
    dbl = outcome == DOUBLE_CLICK
    bit[dbl] = (u[dbl, 5] >= 0.5).astype(np.int8)
    return DetectionBlock(slots.copy(), bob_basis, outcome, bit, n_ph)
