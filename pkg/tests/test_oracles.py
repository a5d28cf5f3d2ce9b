import json
from fractions import Fraction

import pytest

from conftest import load_fixture
from qkd_skylink.ao import flat_coupling, optimal_mode_radius_ratio
from qkd_skylink.oracles import build_fixtures, enumerate_bb84, main, rate_zero_crossing


def test_bb84_enumeration():
    clean, eve = enumerate_bb84(False), enumerate_bb84(True)
    assert clean["sift_fraction"] == Fraction(1, 2) and clean["qber"] == 0
    assert eve["sift_fraction"] == Fraction(1, 2) and eve["qber"] == Fraction(1, 4)


def test_rate_zero_crossing():
    assert rate_zero_crossing() == pytest.approx(0.110, abs=0.001)


def test_committed_fixtures_are_current():
    for name, fx in build_fixtures().items():
        assert load_fixture(name) == json.loads(json.dumps(fx)), name


def test_fixture_values_used_by_code():
    assert Fraction(load_fixture("bb84_eve.json")["values"]["qber"]) == Fraction(1, 4)
    assert Fraction(load_fixture("bb84_no_eve.json")["values"]["qber"]) == 0
    fx = load_fixture("coupling_optimum.json")["values"]
    assert flat_coupling(optimal_mode_radius_ratio()) == pytest.approx(fx["peak_efficiency"], abs=1e-9)
    assert fx["peak_efficiency"] == pytest.approx(0.81, abs=0.01)


def test_main_writes_fixtures(tmp_path):
    assert main([str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("*.json"))) == len(build_fixtures())
