"""End-to-end pass simulation: configuration, orchestration, persistence and reports.

A run composes the pass geometry, the PAT state machine, an AO/channel
model evaluated once per channel epoch, the transmitter, the detector and
the classical post-processing. Every random stream is derived from the
scenario's master seed with :func:`qkd_skylink.seeding.derive_seed` using a
fixed label per stage, so a run is a pure function of its scenario.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .ao import LoopConfig, frozen_flow_screens, optimal_mode_radius_ratio, run_closed_loop
from .errors import (
    ConfigurationError,
    InsufficientDataError,
    ProtocolAbort,
    ScenarioValidationError,
    SkylinkError,
)
from .geometry import OrbitConfig, StationConfig, propagate_pass, static_loss_db
from .link import NO_CLICK, DetectorModel, transmit_and_detect
from .pat import PassTimeline, PatTiming, State, run_pass
from .postprocessing.auth import SharedSecret
from .postprocessing.cascade import cascade_correct
from .postprocessing.decoy import DecoyBounds, decoy_bounds
from .postprocessing.keyrate import secret_key_length
from .postprocessing.keys import KeyMaterial, estimate_qber, sift_mask
from .postprocessing.privacy import toeplitz_pa
from .postprocessing.store import Transcript, canonical_json, keystore_bytes
from .seeding import U64_MASK, derive_seed, make_rng
from .transmitter import (
    INTENSITY_NAMES,
    QUANTUM,
    CalibrationState,
    OutputStage,
    ProtocolParams,
    TelemetryLog,
    TelemetryPacket,
    calibration_step,
    generate_block,
    telemetry_snapshot,
)
from .turbulence import TurbulenceProfile, fried_parameter, scintillation_index, scintillation_series

log = logging.getLogger(__name__)

EAVESDROPPERS = ("none", "intercept_resend")


@dataclass(frozen=True)
class ChannelConfig:
    """Link-budget and sampling settings used by the harness.

    The channel and AO loop are evaluated once per ``epoch_s``: a burst of
    ``ao_steps_per_epoch`` loop frames at the epoch's elevation gives the
    epoch's fibre coupling, and lognormal fading is sampled at
    ``scintillation_rate_hz`` on top of the static loss.
    """

    pass_step_s: float = 1.0
    beam_divergence_urad: float = 8.0
    zenith_atm_loss_db: float = 0.5
    receiver_loss_db: float = 1.0
    epoch_s: float = 5.0
    ao_steps_per_epoch: int = 40
    ao_pupil_px: int = 64
    scintillation_rate_hz: float = 1000.0
    cloud_blockages: tuple = ()

    def problems(self) -> list[str]:
        out = []
        for name in ("pass_step_s", "beam_divergence_urad", "epoch_s", "scintillation_rate_hz"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                out.append(f"channel.{name} must be a positive number")
        for name in ("zenith_atm_loss_db", "receiver_loss_db"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                out.append(f"channel.{name} must be >= 0")
        for name, lo in (("ao_steps_per_epoch", 2), ("ao_pupil_px", 16)):
            v = getattr(self, name)
            if not isinstance(v, int) or v < lo:
                out.append(f"channel.{name} must be an integer >= {lo}")
        for b in self.cloud_blockages:
            if len(b) != 2 or not b[1] > b[0]:
                out.append(f"channel.cloud_blockages entry {list(b)} must be [start_s, end_s] with end > start")
        return out


@dataclass(frozen=True)
class PostConfig:
    qber_sample_fraction: float = 0.1
    cascade_passes: int = 4
    abort_qber: float = 0.11
    margin_bits: int = 0
    auth_masks: int = 256

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.qber_sample_fraction < 1:
            out.append("postprocessing.qber_sample_fraction must lie in (0, 1)")
        if not isinstance(self.cascade_passes, int) or self.cascade_passes < 2:
            out.append("postprocessing.cascade_passes must be an integer >= 2")
        if not 0 < self.abort_qber <= 0.15:
            out.append("postprocessing.abort_qber must lie in (0, 0.15]")
        if not isinstance(self.margin_bits, int) or self.margin_bits < 0:
            out.append("postprocessing.margin_bits must be a non-negative integer")
        if not isinstance(self.auth_masks, int) or self.auth_masks < 16:
            out.append("postprocessing.auth_masks must be an integer >= 16")
        return out


@dataclass(frozen=True)
class ScenarioConfig:
    orbit: OrbitConfig = field(default_factory=OrbitConfig)
    station: StationConfig = field(default_factory=StationConfig)
    turbulence: TurbulenceProfile = field(default_factory=TurbulenceProfile)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    detector: DetectorModel = field(default_factory=DetectorModel)
    loop: LoopConfig = field(default_factory=LoopConfig)
    pat: PatTiming = field(default_factory=PatTiming)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    postprocessing: PostConfig = field(default_factory=PostConfig)
    eavesdropper: str = "none"
    seed: int = 42
    scaled_slot_rate_hz: float = 1e5

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return dataclasses.replace(self, seed=int(seed))


_SECTIONS = {
    "orbit": OrbitConfig,
    "station": StationConfig,
    "turbulence": TurbulenceProfile,
    "protocol": ProtocolParams,
    "detector": DetectorModel,
    "loop": LoopConfig,
    "pat": PatTiming,
    "channel": ChannelConfig,
    "postprocessing": PostConfig,
}
_SCALARS = ("eavesdropper", "seed", "scaled_slot_rate_hz")
_TUPLE_FIELDS = {
    ("protocol", "basis_probabilities"),
    ("protocol", "intensity_probabilities"),
    ("channel", "cloud_blockages"),
}


def _section_errors(name: str, exc: Exception) -> list[str]:
    out = []
    for msg in str(exc).split("; "):
        out.append(msg if msg.startswith(f"{name}.") else f"{name}: {msg}")
    return out


def scenario_from_dict(data: Mapping[str, Any]) -> ScenarioConfig:
    """Build a validated config, collecting every problem before raising."""
    errors: list[str] = []
    if not isinstance(data, Mapping):
        raise ScenarioValidationError(["scenario must be a mapping of sections"])
    for key in data:
        if key not in _SECTIONS and key not in _SCALARS:
            errors.append(f"unknown top-level key {key!r}")
    built: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {}) or {}
        if not isinstance(raw, Mapping):
            errors.append(f"{name}: section must be a mapping")
            continue
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = [k for k in raw if k not in known]
        errors.extend(f"{name}.{k}: unknown field" for k in unknown)
        kwargs = {}
        for k, v in raw.items():
            if k not in known:
                continue
            if (name, k) in _TUPLE_FIELDS and isinstance(v, list):
                v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
            kwargs[k] = v
        try:
            obj = cls(**kwargs)
        except (ConfigurationError, ValueError, TypeError) as exc:
            errors.extend(_section_errors(name, exc))
            continue
        problems = obj.problems() if hasattr(obj, "problems") else []
        errors.extend(_section_errors(name, "; ".join(problems)) if problems else [])
        built[name] = obj

    eve = data.get("eavesdropper", "none")
    if eve not in EAVESDROPPERS:
        errors.append(f"eavesdropper must be one of {EAVESDROPPERS}, got {eve!r}")
    seed = data.get("seed", 42)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= U64_MASK:
        errors.append("seed must be an unsigned 64-bit integer")
    rate = data.get("scaled_slot_rate_hz", 1e5)
    if not isinstance(rate, (int, float)) or isinstance(rate, bool) or not math.isfinite(rate) or rate <= 0:
        errors.append("scaled_slot_rate_hz must be a positive number")
    elif "protocol" in built and rate > built["protocol"].qubit_rate_hz:
        errors.append("scaled_slot_rate_hz must not exceed protocol.qubit_rate_hz")
    if "channel" in built and "orbit" in built and "station" in built and not errors:
        profile = propagate_pass(built["orbit"], built["station"], built["channel"].pass_step_s)
        if not profile.visible:
            errors.append("orbit.max_elevation_deg is below station.elevation_mask_deg: no pass")
    if errors:
        raise ScenarioValidationError(errors)
    return ScenarioConfig(eavesdropper=eve, seed=seed, scaled_slot_rate_hz=float(rate), **built)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, Mapping):
        return {k: _plain(x) for k, x in v.items()}
    return v


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    out = {}
    for name in _SECTIONS:
        obj = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    for name in _SCALARS:
        out[name] = getattr(cfg, name)
    return out


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ScenarioValidationError([f"{where}: {getattr(exc, 'problem', None) or exc}"]) from exc
    try:
        return scenario_from_dict(data or {})
    except ScenarioValidationError as exc:
        raise ScenarioValidationError([f"{path}: {e}" for e in exc.errors]) from None


def save_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(cfg), sort_keys=False))


def default_scenario_path() -> Path:
    return Path(str(resources.files("qkd_skylink") / "data" / "default.scenario"))


def default_scenario() -> ScenarioConfig:
    return load_scenario(default_scenario_path())


# ------------------------------------------------------------------- report

REPORT_FIELDS = (
    "seed",
    "status",
    "failure_reason",
    "eavesdropper",
    "pass_duration_s",
    "availability_fraction",
    "mean_coupling_eta",
    "mean_channel_transmittance",
    "transmitted_slots",
    "quantum_frames",
    "detected_slots",
    "sifted_bits",
    "qber_sample_bits",
    "qber",
    "corrected_bits",
    "leakage_bits",
    "signal_mean_photons",
    "margin_bits",
    "gains",
    "qbers",
    "y1_lower",
    "e1_upper",
    "y0",
    "final_key_bits",
    "projected_key_rate_bps",
    "max_quantum_mean_photons",
)
REPORT_CSV_COLUMNS = tuple(
    c
    for f in REPORT_FIELDS
    for c in (
        [f"gain_{n}" for n in INTENSITY_NAMES] if f == "gains"
        else [f"qber_{n}" for n in INTENSITY_NAMES] if f == "qbers"
        else [f]
    )
)


@dataclass(frozen=True)
class PassReport:
    seed: int
    status: str
    failure_reason: str
    eavesdropper: str
    pass_duration_s: float
    availability_fraction: float
    mean_coupling_eta: float
    mean_channel_transmittance: float
    transmitted_slots: int
    quantum_frames: int
    detected_slots: int
    sifted_bits: int
    qber_sample_bits: int
    qber: float
    corrected_bits: int
    leakage_bits: int
    signal_mean_photons: float
    margin_bits: int
    gains: dict
    qbers: dict
    y1_lower: float
    e1_upper: float
    y0: float
    final_key_bits: int
    projected_key_rate_bps: float
    max_quantum_mean_photons: float

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in REPORT_FIELDS}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PassReport":
        return cls(**{f: d[f] for f in REPORT_FIELDS})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def recomputed_key_length(self) -> int:
        """Key length implied by the report's own fields (0 for aborted runs)."""
        if self.status != "ok":
            return 0
        bounds = DecoyBounds(self.y1_lower, self.e1_upper, self.y0)
        return secret_key_length(
            self.corrected_bits, self.qber, self.leakage_bits, bounds,
            self.gains, self.signal_mean_photons, self.margin_bits,
        )

    def is_consistent(self) -> bool:
        ok = (
            self.final_key_bits == self.recomputed_key_length()
            and self.sifted_bits <= self.detected_slots <= self.quantum_frames <= self.transmitted_slots
            and self.final_key_bits <= self.corrected_bits
        )
        if self.corrected_bits:
            ok = ok and self.corrected_bits + self.qber_sample_bits == self.sifted_bits
        return ok


def _report_csv(report: PassReport) -> str:
    row = []
    for f in REPORT_FIELDS:
        v = getattr(report, f)
        if isinstance(v, dict):
            row.extend(repr(float(v[n])) for n in INTENSITY_NAMES)
        elif isinstance(v, float):
            row.append(repr(float(v)))
        else:
            row.append(str(v))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_CSV_COLUMNS)
    w.writerow(row)
    return buf.getvalue()


def emit_report(report: PassReport, fmt: str, path) -> None:
    """Write ``report`` as ``json`` (lossless) or single-row ``csv``."""
    if fmt == "json":
        text = report.to_json()
    elif fmt == "csv":
        text = _report_csv(report)
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}")
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report to {path}: {exc.strerror}") from exc


def read_report(path) -> PassReport:
    return PassReport.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- the run


@dataclass
class RunArtifacts:
    report: PassReport
    telemetry: TelemetryLog
    transcript: Transcript | None
    keystore: bytes
    timeline: PassTimeline

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "report.json": self.report.to_json().encode(),
            "report.csv": _report_csv(self.report).encode(),
            "telemetry.jsonl": self.telemetry.to_bytes(),
            "transcript.jsonl": self.transcript.to_bytes() if self.transcript else b"",
            "keystore.bin": self.keystore,
        }
        for name, data in files.items():
            (out / name).write_bytes(data)
        self.timeline.write_csv(out / "timeline.csv")
        files["timeline.csv"] = (out / "timeline.csv").read_bytes()
        return files


@dataclass
class _Tally:
    sent: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    clicks: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    matched: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    errors: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))


def _epochs(intervals, epoch_s: float):
    for a, b in intervals:
        t = a
        while t < b - 1e-12:
            yield t, min(b, t + epoch_s)
            t += epoch_s


def _epoch_coupling(cfg: ScenarioConfig, zenith_deg: float, seed: int, ratio: float) -> float:
    ch, loop = cfg.channel, cfg.loop
    r0 = fried_parameter(cfg.turbulence, zenith_deg, cfg.protocol.wavelength_m)
    screens = frozen_flow_screens(
        r0, cfg.station.aperture_diameter_m, cfg.turbulence.wind_speed_mps,
        loop.rate_hz, ch.ao_steps_per_epoch, seed, ch.ao_pupil_px,
    )
    tel = run_closed_loop(screens, loop, seed=seed, mode_radius_ratio=ratio)
    # Skip the convergence transient: average over the second half of the burst.
    return float(np.mean(tel.coupling_eta[len(tel) // 2:]))


def _empty_report(cfg, status, reason, **kw) -> PassReport:
    base = dict(
        seed=cfg.seed, status=status, failure_reason=reason, eavesdropper=cfg.eavesdropper,
        pass_duration_s=0.0, availability_fraction=0.0, mean_coupling_eta=0.0,
        mean_channel_transmittance=0.0, transmitted_slots=0, quantum_frames=0, detected_slots=0,
        sifted_bits=0, qber_sample_bits=0, qber=0.0, corrected_bits=0, leakage_bits=0,
        signal_mean_photons=float(cfg.protocol.mu[0]), margin_bits=cfg.postprocessing.margin_bits,
        gains={n: 0.0 for n in INTENSITY_NAMES}, qbers={n: 0.0 for n in INTENSITY_NAMES},
        y1_lower=0.0, e1_upper=1.0, y0=0.0, final_key_bits=0, projected_key_rate_bps=0.0,
        max_quantum_mean_photons=0.0,
    )
    base.update(kw)
    return PassReport(**base)


def run_end_to_end_artifacts(cfg: ScenarioConfig) -> RunArtifacts:
    """Run one pass and return the report together with every persisted artifact."""
    seed = cfg.seed
    ch, pp, proto = cfg.channel, cfg.postprocessing, cfg.protocol
    telemetry = TelemetryLog()
    session_id = derive_seed(seed, "session")

    profile = propagate_pass(cfg.orbit, cfg.station, ch.pass_step_s)
    timeline, availability = run_pass(profile, ch.cloud_blockages, cfg.pat, derive_seed(seed, "pat"))
    for t, s in timeline.transitions:
        telemetry.append(TelemetryPacket.build(t, "link_state", {"state_index": list(State).index(s)}))

    times = np.array([s.t_s for s in profile])
    elevations = np.array([s.elevation_deg for s in profile])
    ratio = optimal_mode_radius_ratio()
    stage = OutputStage()
    cal = CalibrationState()
    tally = _Tally()
    alice_bits, bob_bits, key_slots = [], [], []
    next_slot = 0
    coupling_w, eta_w = 0.0, 0.0
    max_mu = 0.0
    det_seed = derive_seed(seed, "link")
    eve = None if cfg.eavesdropper == "none" else cfg.eavesdropper

    for k, (ta, tb) in enumerate(_epochs(timeline.intervals(State.QKD_ACTIVE), ch.epoch_s)):
        n = int(round(tb * cfg.scaled_slot_rate_hz)) - int(round(ta * cfg.scaled_slot_rate_hz))
        if n <= 0:
            continue
        mid = 0.5 * (ta + tb)
        elev = float(np.interp(mid, times, elevations))
        sample = dataclasses.replace(profile[0], elevation_deg=elev, slant_range_km=float(
            np.interp(mid, times, [s.slant_range_km for s in profile])))
        loss_db = static_loss_db(sample, ch.beam_divergence_urad * 1e-6, cfg.station, ch.zenith_atm_loss_db)
        eta_static = 10.0 ** (-(loss_db + ch.receiver_loss_db) / 10.0)
        zenith = 90.0 - elev
        fading = scintillation_series(
            eta_static, scintillation_index(cfg.turbulence, zenith), ch.scintillation_rate_hz,
            tb - ta, 1, derive_seed(seed, "fading", k),
        )
        coupling = _epoch_coupling(cfg, zenith, derive_seed(seed, "ao_epoch", k), ratio)

        frames = generate_block(proto, n, derive_seed(seed, "frames"), next_slot)
        next_slot += n
        cal = calibration_step(cal, seed=derive_seed(seed, "calibration"))
        emitted = stage.emit(frames, cal)
        q = emitted.role == QUANTUM
        if q.any():
            max_mu = max(max_mu, float(emitted.mean_photon_number[q].max()))
        eta = fading.at(np.arange(n) / cfg.scaled_slot_rate_hz)
        records = transmit_and_detect(emitted, eta, coupling, cfg.detector, eve, det_seed)
        coupling_w += coupling * n
        eta_w += float(eta.sum())

        cls = frames.intensity_class
        clicked = (records.outcome != NO_CLICK) & q
        match = clicked & (frames.basis == records.bob_basis)
        err = match & (frames.bit != records.bit)
        for c in range(3):
            sel = q & (cls == c)
            tally.sent[c] += int(sel.sum())
            tally.clicks[c] += int((clicked & sel).sum())
            tally.matched[c] += int((match & sel).sum())
            tally.errors[c] += int((err & sel).sum())
        keep = sift_mask(frames, records)
        alice_bits.append(frames.bit[keep].astype(np.uint8))
        bob_bits.append(records.bit[keep].astype(np.uint8))
        key_slots.append(frames.slot[keep])
        telemetry.append(telemetry_snapshot(
            cal, {"slots": n, "clicks": int(clicked.sum()), "coupling_eta": coupling}, ta))

    transmitted = next_slot
    quantum_frames = int(tally.sent.sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        gains_arr = np.where(tally.sent > 0, tally.clicks / np.maximum(tally.sent, 1), 0.0)
        qbers_arr = np.where(tally.matched > 0, tally.errors / np.maximum(tally.matched, 1), 0.0)
    gains = {n: float(g) for n, g in zip(INTENSITY_NAMES, gains_arr)}
    qbers = {n: float(e) for n, e in zip(INTENSITY_NAMES, qbers_arr)}
    common = dict(
        pass_duration_s=float(profile.duration_s),
        availability_fraction=float(availability),
        mean_coupling_eta=coupling_w / transmitted if transmitted else 0.0,
        mean_channel_transmittance=eta_w / transmitted if transmitted else 0.0,
        transmitted_slots=int(transmitted),
        quantum_frames=quantum_frames,
        detected_slots=int(tally.clicks.sum()),
        gains=gains,
        qbers=qbers,
        max_quantum_mean_photons=max_mu,
    )

    alice = KeyMaterial(np.concatenate(alice_bits) if alice_bits else np.zeros(0, np.uint8), "sifted", 0,
                        np.concatenate(key_slots) if key_slots else np.zeros(0, np.int64))
    bob = KeyMaterial(np.concatenate(bob_bits) if bob_bits else np.zeros(0, np.uint8), "sifted", 0,
                      alice.source_slots)
    common["sifted_bits"] = len(alice)

    secret = SharedSecret(make_rng(seed, "preshared").bytes(8 + 8 * pp.auth_masks))
    transcript = Transcript(secret)
    empty_store = keystore_bytes(KeyMaterial(np.zeros(0, np.uint8), "final"), session_id,
                                 {"seed": seed, "status": "aborted"})

    def abort(reason: str, **kw) -> RunArtifacts:
        log.warning("pass aborted: %s", reason)
        report = _empty_report(cfg, "aborted", reason, **{**common, **kw})
        return RunArtifacts(report, telemetry, transcript, empty_store, timeline)

    try:
        transcript.send("bob->alice", "detections_and_bases", np.packbits(np.zeros(len(alice), np.uint8)).tobytes())
        transcript.send("alice->bob", "basis_match_and_decoy_classes", bytes((quantum_frames + 7) // 8))
        qber, a_rest, b_rest = estimate_qber(alice, bob, pp.qber_sample_fraction, derive_seed(seed, "qber"))
        sample_bits = len(alice) - len(a_rest)
        transcript.send("alice->bob", "qber_sample", bytes((2 * sample_bits + 7) // 8), sample_bits)
        common.update(qber=qber, qber_sample_bits=sample_bits)
        if qber > pp.abort_qber:
            return abort(f"qber {qber:.4f} exceeds abort threshold {pp.abort_qber}", leakage_bits=sample_bits)
        # Block sizes come from a pessimistic QBER: with few or no sampled
        # errors the point estimate would give blocks spanning the whole key,
        # where an even number of errors is invisible to every pass.
        ec_qber = min(0.15, max(qber, 3.0 / sample_bits))
        corrected, leak, stats = cascade_correct(
            a_rest, b_rest, ec_qber, pp.cascade_passes, derive_seed(seed, "cascade"))
        for i, bits in enumerate(stats.parities_per_pass):
            transcript.send("alice->bob", f"cascade_parities_{i}", bytes((bits + 7) // 8), bits)
        for _ in range(stats.verification_rounds):
            transcript.send("alice->bob", "verification_hash", bytes(8), 64)
        bounds = decoy_bounds(gains, qbers, proto)
        total_leak = corrected.leakage_bits
        common.update(corrected_bits=len(corrected), leakage_bits=total_leak,
                      y1_lower=bounds.y1_lower, e1_upper=bounds.e1_upper, y0=bounds.y0)
        length = secret_key_length(len(corrected), qber, total_leak, bounds, gains,
                                   float(proto.mu[0]), pp.margin_bits)
        if length == 0:
            return abort("secret key length is zero")
        pa_seed = derive_seed(seed, "privacy")
        transcript.send("alice->bob", "privacy_amplification_seed", pa_seed.to_bytes(8, "little"))
        final_a = toeplitz_pa(a_rest, pa_seed, length)
        final_b = toeplitz_pa(corrected, pa_seed, length)
        if final_a != final_b:
            return abort("final keys differ after privacy amplification")
    except InsufficientDataError as exc:
        return abort(f"insufficient data: {exc}")
    except ProtocolAbort as exc:
        return abort(f"{type(exc).__name__}: {exc}")

    active = sum(b - a for a, b in timeline.intervals(State.QKD_ACTIVE))
    scale = proto.qubit_rate_hz / cfg.scaled_slot_rate_hz
    rate = length / active * scale if active > 0 else 0.0
    report = _empty_report(cfg, "ok", "", **common, final_key_bits=length, projected_key_rate_bps=rate)
    meta = {"seed": seed, "final_key_bits": length, "qber": qber,
            "scenario_sha256": scenario_digest(cfg)}
    store = keystore_bytes(final_a, session_id, meta)
    return RunArtifacts(report, telemetry, transcript, store, timeline)


def run_end_to_end(cfg: ScenarioConfig) -> PassReport:
    return run_end_to_end_artifacts(cfg).report


def scenario_digest(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(canonical_json(scenario_to_dict(cfg)).encode()).hexdigest()
