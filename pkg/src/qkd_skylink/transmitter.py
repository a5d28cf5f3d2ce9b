"""Satellite BB84 transmitter: frame generation, modulation with calibration
error, SOA/VOA output control, drift-compensating calibration, optical-power
monitoring and telemetry.

Frames are handled either one at a time (:class:`PulseFrame`) or as a
column-oriented :class:`FrameBlock`; every operation accepts both.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import median_filter

from .errors import ConfigurationError, InsufficientDataError, ProtocolViolationError
from .seeding import make_rng, slot_uniforms

REFERENCE, QUANTUM = 0, 1
SIGNAL, DECOY, VACUUM = 0, 1, 2
INTENSITY_NAMES = ("signal", "decoy", "vacuum")
ROLE_NAMES = ("reference", "quantum")
DEFAULT_EXTINCTION = 1e-4


@dataclass(frozen=True)
class ProtocolParams:
    qubit_rate_hz: float = 2.25e9
    basis_probabilities: tuple = (0.5, 0.5)
    intensity_levels: Mapping[str, float] = field(
        default_factory=lambda: {"signal": 0.5, "decoy": 0.1, "vacuum": 0.0}
    )
    intensity_probabilities: tuple = (0.8, 0.1, 0.1)
    wavelength_m: float = 1550e-9
    reference_interval: int = 1000
    reference_mean_photons: float = 1e5

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigurationError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not self.qubit_rate_hz > 0:
            out.append("protocol.qubit_rate_hz must be positive")
        bp = tuple(self.basis_probabilities)
        if len(bp) != 2 or any(p < 0 or p > 1 for p in bp) or not math.isclose(sum(bp), 1.0, abs_tol=1e-9):
            out.append(f"protocol.basis_probabilities must be two probabilities summing to 1, got {bp}")
        ip = tuple(self.intensity_probabilities)
        if len(ip) != 3 or any(p < 0 or p > 1 for p in ip) or not math.isclose(sum(ip), 1.0, abs_tol=1e-9):
            out.append(f"protocol.intensity_probabilities must be three probabilities summing to 1, got {ip}")
        lv = dict(self.intensity_levels)
        if set(lv) != set(INTENSITY_NAMES):
            out.append("protocol.intensity_levels needs exactly signal, decoy, vacuum")
        elif not lv["signal"] > lv["decoy"] > lv["vacuum"] >= 0:
            out.append("protocol.intensity_levels must satisfy signal > decoy > vacuum >= 0")
        elif lv["signal"] > 1:
            out.append("protocol.intensity_levels.signal must not exceed one photon per pulse")
        if not self.wavelength_m > 0:
            out.append("protocol.wavelength_m must be positive")
        if int(self.reference_interval) != self.reference_interval or self.reference_interval < 1:
            out.append("protocol.reference_interval must be a positive integer")
        if not self.reference_mean_photons > 1:
            out.append("protocol.reference_mean_photons must exceed 1")
        return out

    @property
    def mu(self) -> np.ndarray:
        """Mean photon numbers indexed by intensity class."""
        lv = self.intensity_levels
        return np.array([lv["signal"], lv["decoy"], lv["vacuum"]], dtype=float)


@dataclass(frozen=True)
class PulseFrame:
    slot: int
    role: int
    basis: int
    bit: int
    intensity_class: int
    mean_photon_number: float
    phase_rad: float


@dataclass(frozen=True, eq=False)
class FrameBlock:
    """Column arrays for a run of consecutive frames."""

    slot: np.ndarray
    role: np.ndarray
    basis: np.ndarray
    bit: np.ndarray
    intensity_class: np.ndarray
    mean_photon_number: np.ndarray
    phase_rad: np.ndarray

    def __len__(self):
        return self.slot.size

    def __getitem__(self, i) -> PulseFrame:
        return PulseFrame(
            int(self.slot[i]), int(self.role[i]), int(self.basis[i]), int(self.bit[i]),
            int(self.intensity_class[i]), float(self.mean_photon_number[i]), float(self.phase_rad[i]),
        )

    def __eq__(self, other):
        if not isinstance(other, FrameBlock):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in dataclasses.fields(self)
        )

    def select(self, index) -> "FrameBlock":
        return FrameBlock(**{f.name: getattr(self, f.name)[index] for f in dataclasses.fields(self)})

    @classmethod
    def concatenate(cls, blocks: Sequence["FrameBlock"]) -> "FrameBlock":
        return cls(**{
            f.name: np.concatenate([getattr(b, f.name) for b in blocks]) for f in dataclasses.fields(cls)
        })

    @property
    def quantum(self) -> np.ndarray:
        return self.role == QUANTUM

    # Binary layout, little-endian:
    #   b"QKDF" | u16 version=1 | u64 count | count records of
    #   u64 slot, u8 role, u8 basis, u8 bit, u8 intensity_class, f64 mu, f64 phase
    _DTYPE = np.dtype([
        ("slot", "<u8"), ("role", "u1"), ("basis", "u1"), ("bit", "u1"),
        ("intensity_class", "u1"), ("mean_photon_number", "<f8"), ("phase_rad", "<f8"),
    ])
    _HEAD = struct.Struct("<4sHQ")

    def to_bytes(self) -> bytes:
        rec = np.empty(len(self), dtype=self._DTYPE)
        for name in self._DTYPE.names:
            rec[name] = getattr(self, name)
        return self._HEAD.pack(b"QKDF", 1, len(self)) + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FrameBlock":
        magic, version, count = cls._HEAD.unpack_from(data)
        if magic != b"QKDF" or version != 1:
            raise ConfigurationError("not a version-1 frame block")
        rec = np.frombuffer(data, dtype=cls._DTYPE, count=count, offset=cls._HEAD.size)
        return cls(
            slot=rec["slot"].astype(np.int64), role=rec["role"].astype(np.int8),
            basis=rec["basis"].astype(np.int8), bit=rec["bit"].astype(np.int8),
            intensity_class=rec["intensity_class"].astype(np.int8),
            mean_photon_number=rec["mean_photon_number"].copy(), phase_rad=rec["phase_rad"].copy(),
        )


def encode_phase(bit, basis):
    """Phase-encoded BB84: phase = pi/2 * (2*bit + basis)."""
    return (np.pi / 2.0) * (2 * np.asarray(bit) + np.asarray(basis))


def generate_block(params: ProtocolParams, length: int, seed: int, start_slot: int = 0) -> FrameBlock:
    """BB84 frames for slots ``start_slot .. start_slot+length-1``.

    Every ``reference_interval + 1``-th slot carries a bright reference pulse.
    Randomness is drawn per aligned chunk of slots, so a slot's frame does
    not depend on where a block starts.
    """
    if int(length) != length or length < 1:
        raise ConfigurationError("length must be a positive integer")
    problems = params.problems()
    if problems:
        raise ConfigurationError("; ".join(problems))
    slots = np.arange(start_slot, start_slot + length, dtype=np.int64)
    u = slot_uniforms(seed, "qrng", slots, 3)
    role = np.where(slots % (params.reference_interval + 1) == params.reference_interval, REFERENCE, QUANTUM)
    basis = (u[:, 0] >= params.basis_probabilities[0]).astype(np.int8)
    bit = (u[:, 1] >= 0.5).astype(np.int8)
    cum = np.cumsum(params.intensity_probabilities)
    cls = np.minimum(np.searchsorted(cum, u[:, 2], side="right"), 2).astype(np.int8)
    cls[role == REFERENCE] = SIGNAL
    mu = params.mu[cls]
    mu[role == REFERENCE] = params.reference_mean_photons
    return FrameBlock(slots, role.astype(np.int8), basis, bit, cls, mu, encode_phase(bit, basis))




@dataclass(frozen=True)
class CalibrationState:
    phase_bias_rad: float = 0.0
    amplitude_bias: float = 1.0
    phase_drift_rms: float = 0.0
    amplitude_drift_rms: float = 0.0
    photodiode_reading: float = 1.0
    step: int = 0

    def __post_init__(self):
        vals = (self.phase_bias_rad, self.amplitude_bias, self.phase_drift_rms,
                self.amplitude_drift_rms, self.photodiode_reading)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigurationError("calibration state must be finite")
        if self.photodiode_reading < 0:
            raise ConfigurationError("photodiode_reading must be >= 0")
        if self.phase_drift_rms < 0 or self.amplitude_drift_rms < 0:
            raise ConfigurationError("drift rms must be >= 0")


def apply_modulation(frame, cal: CalibrationState):
    """Emitted phase = intended + phase bias; photon number scaled by amplitude bias."""
    if cal.phase_bias_rad == 0.0 and cal.amplitude_bias == 1.0:
        return frame
    return dataclasses.replace(
        frame,
        phase_rad=frame.phase_rad + cal.phase_bias_rad,
        mean_photon_number=frame.mean_photon_number * cal.amplitude_bias,
    )


def calibration_step(
    cal: CalibrationState, target_phase_rad: float = 0.0, ctrl_gain: float = 0.5, seed: int = 0
) -> CalibrationState:
    """One photodiode feedback update followed by one random-walk drift step.

    The monitor reads the phase error against ``target_phase_rad`` and the
    amplitude error against unity; both are reduced by ``ctrl_gain``.
    """
    if not 0 < ctrl_gain <= 1:
        raise ConfigurationError("ctrl_gain must lie in (0, 1]")
    phase = cal.phase_bias_rad - ctrl_gain * (cal.phase_bias_rad - target_phase_rad)
    amp = cal.amplitude_bias - ctrl_gain * (cal.amplitude_bias - 1.0)
    if cal.phase_drift_rms > 0 or cal.amplitude_drift_rms > 0:
        w = make_rng(seed, "calibration_drift", cal.step).standard_normal(2)
        phase += cal.phase_drift_rms * w[0]
        amp += cal.amplitude_drift_rms * w[1]
    return dataclasses.replace(
        cal, phase_bias_rad=phase, amplitude_bias=amp, photodiode_reading=max(0.0, amp), step=cal.step + 1
    )


def set_output_level(
    frame,
    soa_on,
    voa_attenuation_db: float,
    soa_gain: float = 1.0,
    extinction: float = DEFAULT_EXTINCTION,
):
    """SOA switch (gain when on, extinction when off) followed by the VOA.

    Raises :class:`ProtocolViolationError` if a quantum frame leaves above one
    photon per pulse.
    """
    if np.any(np.asarray(voa_attenuation_db) < 0):
        raise ConfigurationError("VOA attenuation must be >= 0 dB")
    factor = np.where(soa_on, soa_gain, extinction) * 10.0 ** (-np.asarray(voa_attenuation_db) / 10.0)
    mu = frame.mean_photon_number * factor
    if np.ndim(mu) == 0:
        mu = float(mu)
    bad = (np.asarray(frame.role) == QUANTUM) & (np.asarray(mu) > 1.0)
    if np.any(bad):
        worst = float(np.max(np.asarray(mu)[bad]))
        raise ProtocolViolationError(f"quantum pulse leaves transmitter with mean photon number {worst:.4g} > 1")
    return dataclasses.replace(frame, mean_photon_number=mu)


@dataclass(frozen=True)
class OutputStage:
    """SOA/VOA settings that bring each role to its nominal output level.

    Quantum pulses run with the SOA off and ``quantum_voa_db`` of attenuation;
    reference pulses run with the SOA on and the VOA open.
    """

    soa_gain: float = 1.0
    extinction: float = DEFAULT_EXTINCTION
    quantum_voa_db: float = 3.0

    def drive_level(self, block: FrameBlock) -> FrameBlock:
        """Pre-SOA pulse energies that the output stage maps back to nominal."""
        q = block.role == QUANTUM
        up = np.where(q, 10.0 ** (self.quantum_voa_db / 10.0) / self.extinction, 1.0 / self.soa_gain)
        return dataclasses.replace(block, mean_photon_number=block.mean_photon_number * up)

    def emit(self, block: FrameBlock, cal: CalibrationState) -> FrameBlock:
        driven = apply_modulation(self.drive_level(block), cal)
        q = driven.role == QUANTUM
        return set_output_level(
            driven, ~q, np.where(q, self.quantum_voa_db, 0.0), self.soa_gain, self.extinction
        )


# ---------------------------------------------------------------- telemetry

PACKET_TYPES = ("housekeeping", "calibration", "alarm", "link_state")


@dataclass(frozen=True)
class TelemetryPacket:
    timestamp_s: float
    packet_type: str
    fields: Mapping[str, float]
    crc32: int

    @staticmethod
    def payload(timestamp_s: float, packet_type: str, fields: Mapping[str, float]) -> bytes:
        body = {"t_s": float(timestamp_s), "type": packet_type, "fields": {k: fields[k] for k in sorted(fields)}}
        return json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()

    @classmethod
    def build(cls, timestamp_s: float, packet_type: str, fields: Mapping[str, float]) -> "TelemetryPacket":
        if packet_type not in PACKET_TYPES:
            raise ConfigurationError(f"unknown packet type {packet_type!r}")
        clean = {str(k): _reading(v) for k, v in fields.items()}
        crc = zlib.crc32(cls.payload(timestamp_s, packet_type, clean))
        return cls(float(timestamp_s), packet_type, clean, crc)

    def is_valid(self) -> bool:
        return zlib.crc32(self.payload(self.timestamp_s, self.packet_type, self.fields)) == self.crc32

    def to_line(self) -> str:
        record = {"t_s": self.timestamp_s, "type": self.packet_type,
                  "fields": {k: self.fields[k] for k in sorted(self.fields)}, "crc32": self.crc32}
        return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)

    def to_bytes(self) -> bytes:
        return self.to_line().encode()

    @classmethod
    def from_line(cls, line) -> "TelemetryPacket":
        """Parse and CRC-check one log line; raises ``ValueError`` on corruption."""
        if isinstance(line, bytes):
            line = line.decode("utf-8", errors="strict")
        rec = json.loads(line)
        pkt = cls(float(rec["t_s"]), rec["type"], dict(rec["fields"]), int(rec["crc32"]))
        if not pkt.is_valid():
            raise ValueError("telemetry CRC mismatch")
        return pkt

    from_bytes = from_line


def _reading(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    if not math.isfinite(v):
        raise ConfigurationError("telemetry readings must be finite")
    return v


def telemetry_snapshot(cal: CalibrationState, counters: Mapping[str, float], t_s: float) -> TelemetryPacket:
    """Calibration and counter readings as one CRC-protected packet."""
    fields = {
        "phase_bias_rad": cal.phase_bias_rad,
        "amplitude_bias": cal.amplitude_bias,
        "photodiode_reading": cal.photodiode_reading,
        "calibration_step": cal.step,
    }
    for k, v in counters.items():
        fields[f"counter.{k}"] = v
    return TelemetryPacket.build(t_s, "calibration", fields)


class TelemetryLog:
    """Append-ordered packet log written as line-delimited JSON."""

    def __init__(self):
        self.packets: list[TelemetryPacket] = []

    def append(self, packet: TelemetryPacket) -> None:
        self.packets.append(packet)

    def __len__(self):
        return len(self.packets)

    def to_bytes(self) -> bytes:
        return "".join(p.to_line() + "\n" for p in self.packets).encode()

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path) -> "TelemetryLog":
        log = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                log.append(TelemetryPacket.from_line(line))
        return log


# ------------------------------------------------------------ hacking monitor

@dataclass(frozen=True)
class AlarmReport:
    flagged: np.ndarray
    regions: tuple
    packets: tuple
    robust_sigma: float

    @property
    def alarm_count(self) -> int:
        return len(self.regions)


def detect_anomaly(
    power_trace: Sequence[float],
    threshold_sigma: float,
    window: int = 21,
    sample_period_s: float = 1.0,
) -> AlarmReport:
    """Flag samples more than ``threshold_sigma`` robust deviations from the running median.

    The deviation scale is 1.4826 * MAD of the residual about the running
    median. One alarm packet is emitted per contiguous flagged region.
    """
    x = np.asarray(power_trace, dtype=float)
    if x.size < 10:
        raise InsufficientDataError(f"need at least 10 samples, got {x.size}")
    if not threshold_sigma > 0:
        raise ConfigurationError("threshold_sigma must be positive")
    resid = x - median_filter(x, size=min(window, x.size), mode="nearest")
    sigma = 1.4826 * float(np.median(np.abs(resid - np.median(resid))))
    if sigma > 0:
        flagged = np.abs(resid) > threshold_sigma * sigma
    else:
        flagged = resid != 0
    idx = np.flatnonzero(flagged)
    regions = []
    if idx.size:
        breaks = np.flatnonzero(np.diff(idx) > 1)
        starts = np.r_[idx[0], idx[breaks + 1]]
        ends = np.r_[idx[breaks], idx[-1]]
        regions = [(int(a), int(b)) for a, b in zip(starts, ends)]
    packets = tuple(
        TelemetryPacket.build(
            a * sample_period_s, "alarm",
            {"start_index": a, "end_index": b, "peak_deviation_sigma":
             float(np.max(np.abs(resid[a:b + 1]))) / sigma if sigma > 0 else 0.0},
        )
        for a, b in regions
    )
    return AlarmReport(idx, tuple(regions), packets, sigma)
