import dataclasses
import json

import pytest

from qkd_skylink.errors import ConfigurationError, ScenarioValidationError
from qkd_skylink.link import DetectorModel
from qkd_skylink.mission import (
    REPORT_CSV_COLUMNS,
    PassReport,
    default_scenario,
    emit_report,
    load_scenario,
    read_report,
    run_end_to_end,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from qkd_skylink.pat import State
from qkd_skylink.postprocessing.store import parse_keystore
from qkd_skylink.transmitter import ProtocolParams


def fast(cfg, **kw):
    """Coarser channel epochs and a lower slot rate so a pass runs in seconds."""
    ch = dataclasses.replace(cfg.channel, epoch_s=25.0, ao_steps_per_epoch=16)
    kw.setdefault("scaled_slot_rate_hz", 2e4)
    return dataclasses.replace(cfg, channel=ch, **kw)


def test_default_scenario_values():
    cfg = default_scenario()
    assert cfg.seed == 42 and cfg.eavesdropper == "none"
    assert cfg.protocol == ProtocolParams()
    assert cfg.protocol.qubit_rate_hz == 2.25e9
    assert cfg.station.aperture_diameter_m == 0.8 and cfg.station.uplink_beam_count == 4
    assert cfg.loop.rate_hz == 2000.0


def test_save_load_round_trip(tmp_path):
    cfg = default_scenario().with_seed(7)
    cfg = dataclasses.replace(cfg, channel=dataclasses.replace(cfg.channel, cloud_blockages=((100.0, 120.0),)))
    save_scenario(cfg, tmp_path / "s.scenario")
    assert load_scenario(tmp_path / "s.scenario") == cfg


def test_validation_names_field(tmp_path):
    data = scenario_to_dict(default_scenario())
    data["protocol"]["basis_probabilities"] = [0.6, 0.6]
    with pytest.raises(ScenarioValidationError) as exc:
        scenario_from_dict(data)
    assert any("basis_probabilities" in e for e in exc.value.errors)


def test_validation_collects_every_error():
    data = scenario_to_dict(default_scenario())
    data["protocol"]["basis_probabilities"] = [0.6, 0.6]
    data["detector"]["efficiency"] = 2.0
    data["eavesdropper"] = "pns"
    data["seed"] = -1
    data["bogus"] = 1
    data["loop"]["colour"] = "red"
    with pytest.raises(ScenarioValidationError) as exc:
        scenario_from_dict(data)
    errs = "\n".join(exc.value.errors)
    for needle in ("basis_probabilities", "detector", "eavesdropper", "seed", "bogus", "colour"):
        assert needle in errs
    assert len(exc.value.errors) >= 6


def test_no_visible_pass_rejected():
    data = scenario_to_dict(default_scenario())
    data["orbit"]["max_elevation_deg"] = 5.0
    with pytest.raises(ScenarioValidationError) as exc:
        scenario_from_dict(data)
    assert any("no pass" in e for e in exc.value.errors)


def test_yaml_syntax_error_has_position(tmp_path):
    p = tmp_path / "bad.scenario"
    p.write_text("orbit:\n  altitude_km: [1, 2\n")
    with pytest.raises(ScenarioValidationError) as exc:
        load_scenario(p)
    assert str(p) in exc.value.errors[0] and ":" in exc.value.errors[0]


def test_default_run_report(default_runs):
    cfg, run1, _, _ = default_runs
    r = run1.report
    assert r.status == "ok" and r.failure_reason == ""
    assert r.is_consistent()
    assert r.final_key_bits == r.recomputed_key_length() > 0
    assert r.sifted_bits <= r.detected_slots <= r.quantum_frames <= r.transmitted_slots
    assert r.final_key_bits <= r.corrected_bits
    assert r.max_quantum_mean_photons <= 1.0
    # projected rate normalised to the configured qubit rate
    active = sum(b - a for a, b in run1.timeline.intervals(State.QKD_ACTIVE))
    scale = cfg.protocol.qubit_rate_hz / cfg.scaled_slot_rate_hz
    assert r.projected_key_rate_bps == pytest.approx(r.final_key_bits / active * scale, rel=1e-12)
    # frames only go out while the link is QKD_ACTIVE
    assert r.transmitted_slots == pytest.approx(active * cfg.scaled_slot_rate_hz, abs=len(run1.timeline.intervals()) + 1)
    assert PassReport.from_dict(json.loads(r.to_json())) == r
    assert "np." not in r.to_json()
    sid, key, meta = parse_keystore(run1.keystore)
    assert len(key) == r.final_key_bits and meta["final_key_bits"] == r.final_key_bits


def test_default_run_determinism(default_runs, tmp_path):
    _, run1, run2, _ = default_runs
    f1 = run1.write(tmp_path / "a")
    f2 = run2.write(tmp_path / "b")
    assert set(f1) == {"report.json", "report.csv", "telemetry.jsonl", "transcript.jsonl", "keystore.bin", "timeline.csv"}
    assert f1 == f2


def test_transcript_accounts_for_leakage(default_runs):
    _, run1, _, _ = default_runs
    assert run1.transcript.leakage_bits == run1.report.leakage_bits


def test_intercept_resend_aborts():
    r = run_end_to_end(fast(default_scenario(), eavesdropper="intercept_resend", scaled_slot_rate_hz=5e4))
    assert r.status == "aborted" and r.final_key_bits == 0
    n = r.qber_sample_bits
    assert n > 1000
    assert abs(r.qber - 0.25) <= 3 * (0.25 * 0.75 / n) ** 0.5 + 0.01
    assert "qber" in r.failure_reason


def test_low_noise_run_yields_key():
    cfg = fast(default_scenario())
    cfg = dataclasses.replace(cfg, detector=DetectorModel(efficiency=0.5, dark_count_prob_per_slot=1e-6, error_prob=0.0))
    r = run_end_to_end(cfg)
    assert r.qber < 0.01
    assert r.final_key_bits > 0 and r.is_consistent()


def test_cloud_blockage_reduces_exposure():
    base = fast(default_scenario())
    cloudy = dataclasses.replace(base, channel=dataclasses.replace(base.channel, cloud_blockages=((150.0, 200.0),)))
    a, b = run_end_to_end(base), run_end_to_end(cloudy)
    assert b.availability_fraction < a.availability_fraction
    assert b.transmitted_slots < a.transmitted_slots


def test_seed_changes_output():
    a = run_end_to_end(fast(default_scenario()))
    b = run_end_to_end(fast(default_scenario().with_seed(43)))
    assert a.to_json() != b.to_json()


@pytest.fixture(scope="module")
def report():
    d = json.loads(json.dumps(PassReport.from_dict(
        {**{f: 0 for f in REPORT_CSV_COLUMNS}, "status": "ok", "failure_reason": "", "eavesdropper": "none",
         "gains": {"signal": 0.1, "decoy": 0.02, "vacuum": 1e-6},
         "qbers": {"signal": 0.01, "decoy": 0.02, "vacuum": 0.5}, "qber": 0.0125, "e1_upper": 0.3,
         "y1_lower": 0.5, "y0": 1e-6, "signal_mean_photons": 0.5, "projected_key_rate_bps": 1234.5}
    ).to_dict()))
    return PassReport.from_dict(d)


def test_emit_json_round_trip(report, tmp_path):
    emit_report(report, "json", tmp_path / "r.json")
    assert read_report(tmp_path / "r.json") == report
    emit_report(report, "json", tmp_path / "r2.json")
    assert (tmp_path / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_emit_csv_header(report, tmp_path):
    emit_report(report, "csv", tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert tuple(lines[0].split(",")) == REPORT_CSV_COLUMNS
    assert len(lines) == 2 and len(lines[1].split(",")) == len(REPORT_CSV_COLUMNS)


def test_emit_errors(report, tmp_path):
    with pytest.raises(ConfigurationError):
        emit_report(report, "xml", tmp_path / "r.xml")
    with pytest.raises(OSError) as exc:
        emit_report(report, "json", tmp_path / "missing" / "r.json")
    assert "missing" in str(exc.value)
