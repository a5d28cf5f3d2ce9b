import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qkd_skylink.errors import ConfigurationError, LengthMismatchError
from qkd_skylink.link import (
    CLICK,
    DOUBLE_CLICK,
    NO_CLICK,
    DetectionBlock,
    DetectorModel,
    click_probability,
    intercept_resend,
    transmit_and_detect,
)
from qkd_skylink.oracles import enumerate_bb84
from qkd_skylink.postprocessing import sift
from qkd_skylink.transmitter import QUANTUM, REFERENCE, SIGNAL, VACUUM, FrameBlock, ProtocolParams, generate_block
from qkd_skylink.turbulence import TransmittanceSeries

IDEAL = DetectorModel(efficiency=1.0, dark_count_prob_per_slot=0.0, error_prob=0.0)
SIGNAL_ONLY = ProtocolParams(intensity_probabilities=(1.0, 0.0, 0.0), reference_interval=10**9)


def uniform_frames(n, mu, start=0, seed=0):
    b = generate_block(SIGNAL_ONLY, n, seed, start)
    return FrameBlock(b.slot, b.role, b.basis, b.bit, b.intensity_class, np.full(n, float(mu)), b.phase_rad)


def test_click_probability_examples():
    det = DetectorModel(efficiency=1.0, dark_count_prob_per_slot=0.0, error_prob=0.0)
    assert click_probability(0.0, 0.3, DetectorModel(dark_count_prob_per_slot=1e-5)) == pytest.approx(1e-5, abs=0)
    assert click_probability(0.5, 1.0, det) == pytest.approx(1 - math.exp(-0.5), abs=1e-15)
    assert click_probability(0.5, 1.0, det) == pytest.approx(0.3935, abs=1e-4)


@given(st.floats(0, 2), st.floats(0, 2), st.floats(0.01, 1))
def test_click_probability_monotone(mu1, mu2, eta):
    det = DetectorModel()
    lo, hi = sorted((mu1, mu2))
    assert click_probability(lo, eta, det) <= click_probability(hi, eta, det)
    assert click_probability(hi, eta / 2, det) <= click_probability(hi, eta, det)


def test_click_rate_monte_carlo():
    det = DetectorModel(efficiency=0.2, dark_count_prob_per_slot=1e-6, error_prob=0.0)
    n_total, clicks = 0, 0
    for k in range(10):
        f = uniform_frames(10**6, 0.5, start=k * 10**6)
        clicks += int(np.sum(transmit_and_detect(f, 0.04, 1.0, det, seed=3).clicked))
        n_total += len(f)
    p = float(click_probability(0.5, 0.04, det))
    assert abs(clicks - n_total * p) <= 3 * math.sqrt(n_total * p * (1 - p))


def test_noiseless_channel_has_zero_qber():
    f = uniform_frames(600_000, 0.5, seed=1)
    rec = transmit_and_detect(f, 1.0, 1.0, IDEAL, seed=1)
    a, b = sift(f, rec)
    assert len(a) > 100_000
    assert np.array_equal(a.bits, b.bits)


@settings(max_examples=10)
@given(st.floats(1e-4, 1.0), st.floats(0.05, 1.0))
def test_losses_cause_erasures_not_errors(eta, coupling):
    f = uniform_frames(20_000, 0.5, seed=2)
    rec = transmit_and_detect(f, eta, coupling, IDEAL, seed=2)
    a, b = sift(f, rec)
    assert np.array_equal(a.bits, b.bits)


def test_vacuum_frames_never_click():
    f = uniform_frames(50_000, 0.0)
    rec = transmit_and_detect(f, 1.0, 1.0, IDEAL, seed=4)
    assert not np.any(rec.clicked)


def test_reference_frames_recorded_as_no_click():
    b = generate_block(ProtocolParams(reference_interval=9), 1000, seed=5)
    rec = transmit_and_detect(b, 1.0, 1.0, IDEAL, seed=5)
    assert np.all(rec.outcome[b.role == REFERENCE] == NO_CLICK)
    assert np.all(rec.bit[~rec.clicked] == -1)


def test_double_clicks_squashed_to_random_bit():
    f = uniform_frames(100_000, 50.0, seed=6)  # bright pulses: many double clicks in the wrong basis
    rec = transmit_and_detect(f, 1.0, 1.0, IDEAL, seed=6)
    dbl = rec.outcome == DOUBLE_CLICK
    assert dbl.sum() > 1000
    assert np.all(f.basis[dbl] != rec.bob_basis[dbl])
    assert abs(np.mean(rec.bit[dbl]) - 0.5) < 0.02


def test_slot_independence():
    f = uniform_frames(20_000, 0.5, seed=7)
    whole = transmit_and_detect(f, 0.3, 1.0, DetectorModel(), seed=8)
    part = transmit_and_detect(f.select(slice(5000, 9000)), 0.3, 1.0, DetectorModel(), seed=8)
    assert part == whole.select(slice(5000, 9000))


def test_series_length_checks():
    f = uniform_frames(1000, 0.5)
    with pytest.raises(LengthMismatchError):
        transmit_and_detect(f, np.ones(999), 1.0, IDEAL)
    with pytest.raises(LengthMismatchError):
        transmit_and_detect(f, TransmittanceSeries(100.0, [0.5] * 5, 0.05), 1.0, IDEAL, slot_rate_hz=1e4)
    out = transmit_and_detect(f, TransmittanceSeries(100.0, [0.5] * 10, 0.05), 1.0, IDEAL, slot_rate_hz=1e4)
    assert len(out) == 1000
    with pytest.raises(ConfigurationError):
        transmit_and_detect(f, 1.0, 1.0, IDEAL, eve="beam_splitter")


def test_detector_validation():
    for kw in ({"efficiency": 0.0}, {"dark_count_prob_per_slot": 1.0}, {"error_prob": 0.5}):
        with pytest.raises(ConfigurationError):
            DetectorModel(**kw)


def test_intercept_resend_matched_basis_preserves_bit():
    f = uniform_frames(200_000, 0.5, seed=9)
    out = intercept_resend(f, seed=10)
    # Eve's resent phase reveals her basis and bit.
    eve_bit = (np.round(out.phase_rad / (np.pi / 2)).astype(int) // 2) % 2
    eve_basis = np.round(out.phase_rad / (np.pi / 2)).astype(int) % 2
    same = eve_basis == f.basis
    assert np.all(eve_bit[same] == f.bit[same])
    diff = ~same
    assert diff.sum() > 90_000
    assert abs(np.mean(eve_bit[diff]) - 0.5) < 0.005
    assert np.all(out.mean_photon_number == 0.5)


def test_intercept_resend_reference_passthrough():
    b = generate_block(ProtocolParams(reference_interval=4), 100, seed=11)
    out = intercept_resend(b, seed=1)
    ref = b.role == REFERENCE
    assert np.array_equal(out.phase_rad[ref], b.phase_rad[ref])
    assert np.array_equal(out.mean_photon_number[ref], b.mean_photon_number[ref])
    single = intercept_resend(b[1], seed=1)
    assert single.phase_rad == out.phase_rad[1]


def test_intercept_resend_qber_quarter():
    oracle = float(enumerate_bb84(True)["qber"])
    assert oracle == 0.25
    a_bits, b_bits = [], []
    for k in range(3):
        f = uniform_frames(10**6, 0.5, start=k * 10**6, seed=12)
        a, b = sift(f, transmit_and_detect(f, 1.0, 1.0, IDEAL, eve="intercept_resend", seed=13))
        a_bits.append(a.bits)
        b_bits.append(b.bits)
    a, b = np.concatenate(a_bits), np.concatenate(b_bits)
    n = a.size
    q = float(np.mean(a != b))
    assert abs(q - oracle) <= 3 * math.sqrt(oracle * (1 - oracle) / n)


def test_csv_export(tmp_path):
    f = uniform_frames(50, 5.0, seed=14)
    rec = transmit_and_detect(f, 1.0, 1.0, IDEAL, seed=14)
    rec.write_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "slot,bob_basis,outcome,bit" and len(lines) == 51
    assert {ln.split(",")[2] for ln in lines[1:]} <= {"no_click", "click", "double_click"}
