import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import load_fixture
from qkd_skylink.errors import ConfigurationError
from qkd_skylink.link import DetectorModel
from qkd_skylink.postprocessing import (
    DecoyBounds,
    decoy_bounds,
    h2,
    secret_key_length,
    simplified_rate,
    simulate_decoy_counts,
)
from qkd_skylink.postprocessing.decoy import StatisticsInconsistencyWarning, outcome_probabilities, photon_number_pmf
from qkd_skylink.transmitter import ProtocolParams

P = ProtocolParams()
ZERO = {"signal": 0.0, "decoy": 0.0, "vacuum": 0.0}


def test_ideal_channel_bounds():
    gains = {k: 1 - math.exp(-m) for k, m in zip(("signal", "decoy", "vacuum"), P.mu)}
    b = decoy_bounds(gains, ZERO, P)
    assert b.y1_lower >= 0.99
    assert b.e1_upper <= 0.01


def test_bounds_sound_on_simulated_channel():
    det = DetectorModel(efficiency=0.5, dark_count_prob_per_slot=1e-5, error_prob=0.02)
    for seed in range(20):
        c = simulate_decoy_counts(P, 1e-2, det, 10**9, seed)
        b = decoy_bounds(c.gains, c.qbers, P)
        assert b.y1_lower <= c.y1_true <= 1
        assert b.e1_upper >= c.e1_true


def test_vacuum_yield_is_dark_count():
    d = 1e-4
    det = DetectorModel(efficiency=0.5, dark_count_prob_per_slot=d, error_prob=0.0)
    n = 10**8
    c = simulate_decoy_counts(P, 1e-2, det, n, seed=3)
    n_vac = n * P.intensity_probabilities[2]
    assert abs(c.gains["vacuum"] - d) <= 3 * math.sqrt(d * (1 - d) / n_vac) + 1e-12
    b = decoy_bounds(c.gains, c.qbers, P)
    assert b.y0 == c.gains["vacuum"]


def test_outcome_probabilities_normalised():
    det = DetectorModel()
    parts = outcome_probabilities(np.arange(10), 0.3, det)
    assert np.allclose(sum(parts), 1.0)
    assert photon_number_pmf(0.5, 40).sum() == pytest.approx(1.0, abs=1e-15)


def test_inconsistent_statistics_warn_and_clamp():
    with pytest.warns(StatisticsInconsistencyWarning):
        b = decoy_bounds({"signal": 0.5, "decoy": 0.0, "vacuum": 0.0}, ZERO, P)
    assert b.y1_lower == 0.0 and b.e1_upper == 1.0


def test_bounds_need_vacuum_class():
    with pytest.raises(ConfigurationError):
        decoy_bounds(ZERO, ZERO, ProtocolParams(intensity_levels={"signal": 0.5, "decoy": 0.1, "vacuum": 0.01}))
    with pytest.raises(ConfigurationError):
        decoy_bounds({"signal": 0.1}, ZERO, P)


def test_entropy_and_rate_values():
    fx = load_fixture("rate_threshold.json")["values"]
    assert h2(0.05) == pytest.approx(fx["h2_0.05"], abs=1e-12)
    assert h2(0.5) == 1.0 and h2(0.0) == 0.0 and h2(1.0) == 0.0
    assert simplified_rate(0.05, 1.16) == pytest.approx(fx["rate_q05_f116"], abs=1e-12)
    assert simplified_rate(0.05, 1.16) == pytest.approx(0.3814, abs=1e-4)


def test_rate_zero_crossing():
    fx = load_fixture("rate_threshold.json")["values"]
    q = fx["zero_crossing_qber"]
    assert q == pytest.approx(0.110, abs=0.001)
    assert simplified_rate(q - 1e-6) > 0 > simplified_rate(q + 1e-6)


PERFECT = DecoyBounds(1.0, 0.0, 0.0)


def test_perfect_channel_length():
    assert secret_key_length(12345, 0.0, 0, PERFECT) == 12345


def test_length_zero_cases():
    assert secret_key_length(10**6, 0.12, 0, DecoyBounds(0.9, 0.12, 0.0)) == 0
    assert secret_key_length(10**6, 0.01, 0, DecoyBounds(0.9, 0.5, 0.0)) == 0
    assert secret_key_length(0, 0.01, 0, PERFECT) == 0
    assert secret_key_length(100, 0.0, 10**6, PERFECT) == 0


@given(st.floats(0, 0.5), st.floats(0, 0.5), st.integers(0, 10**5), st.integers(0, 10**5))
def test_length_monotone(q1, q2, l1, l2):
    lo_q, hi_q = sorted((q1, q2))
    lo_l, hi_l = sorted((l1, l2))
    b = DecoyBounds(0.9, 0.03, 1e-6)
    n = 10**5
    assert secret_key_length(n, lo_q, lo_l, b) >= secret_key_length(n, hi_q, lo_l, b)
    assert secret_key_length(n, lo_q, lo_l, b) >= secret_key_length(n, lo_q, hi_l, b)


def test_single_photon_share_reduces_length():
    b = DecoyBounds(0.02, 0.02, 1e-6)
    gains = {"signal": 0.0125}
    full = secret_key_length(10**5, 0.02, 15_000, b)
    part = secret_key_length(10**5, 0.02, 15_000, b, gains, 0.5)
    assert 0 < part < full
