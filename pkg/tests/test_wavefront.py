import numpy as np
import pytest
from hypothesis import given, strategies as st

from qkd_skylink.errors import ConfigurationError
from qkd_skylink.oracles import noll_table, pupil_grid, zernike_grid
from qkd_skylink.turbulence import generate_phase_screen
from qkd_skylink.wavefront import WavefrontScreen, circular_mask
from qkd_skylink.zernike import noll_to_nm, zernike, zernike_cube


def test_noll_indices_match_independent_table():
    table = noll_table(40)
    for j, nm in enumerate(table, start=1):
        assert noll_to_nm(j) == nm
    assert table[:6] == [(0, 0), (1, 1), (1, -1), (2, 0), (2, -2), (2, 2)]


@pytest.mark.parametrize("j", range(1, 37))
def test_zernike_matches_jacobi_form(j):
    rho, theta, mask = pupil_grid(48, 0.02, 0.96)
    n, m = noll_to_nm(j)
    assert np.allclose(zernike(j, rho, theta)[mask], zernike_grid(n, m, rho, theta)[mask], atol=1e-10)


def test_zernike_cube_nearly_orthonormal():
    cube = zernike_cube(128, 0.8 / 128, 0.8, 20)
    mask = circular_mask(128, 0.8 / 128, 0.8)
    gram = np.einsum("ixy,jxy->ij", cube, cube) / mask.sum()
    assert np.allclose(gram, np.eye(20), atol=0.03)


def test_screen_validation():
    with pytest.raises(ConfigurationError):
        WavefrontScreen(np.zeros((4, 5)), 0.1)
    with pytest.raises(ConfigurationError):
        WavefrontScreen(np.zeros((4, 4)), 0.0)


def test_pupil_rms_ignores_piston():
    s = WavefrontScreen(np.full((32, 32), 3.0), 0.025, 0.8)
    assert s.pupil_rms() == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 2**63 - 1), st.floats(0.01, 1.0))
def test_binary_round_trip(seed, r0):
    s = generate_phase_screen(16, 0.05, r0, seed % 1000)
    s = WavefrontScreen(s.phase_rad, 0.05, 0.8, r0, seed)
    back = WavefrontScreen.from_bytes(s.to_bytes(), 0.8)
    assert back == s
    assert back.seed == seed and back.r0_m == r0


def test_save_load(tmp_path):
    s = generate_phase_screen(32, 0.02, 0.1, 8)
    s.save(tmp_path / "s.wfs")
    data = (tmp_path / "s.wfs").read_bytes()
    assert data[:4] == b"WFS1" and len(data) == 4 + 4 + 8 + 8 + 8 + 32 * 32 * 8
    assert WavefrontScreen.load(tmp_path / "s.wfs") == s
