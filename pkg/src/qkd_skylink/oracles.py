"""Brute-force reference implementations used to check the main code paths.

Nothing here imports the simulator modules it is meant to check; each
oracle is written from the textbook definition and favours clarity over
speed (sizes up to n = 4096). ``python -m qkd_skylink.oracles <dir>``
regenerates the JSON fixtures used by the test suite.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar
from scipy.special import eval_jacobi

ORACLE_SIZE_CAP = 4096
MU_EARTH_KM3_S2 = 398600.4418


@dataclass(frozen=True)
class OracleResult:
    name: str
    inputs_digest: str
    values: dict
    tolerance: float

    def to_json(self) -> dict:
        return {"name": self.name, "inputs_digest": self.inputs_digest,
                "values": self.values, "tolerance": self.tolerance}


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


# ------------------------------------------------------------------ BB84


def _measure(prep_basis: int, prep_bit: int, meas_basis: int):
    """Outcome distribution {bit: probability} for an ideal BB84 measurement."""
    if prep_basis == meas_basis:
        return {prep_bit: Fraction(1)}
    return {0: Fraction(1, 2), 1: Fraction(1, 2)}


def enumerate_bb84(eve_present: bool) -> dict:
    """Exact sifted fraction and QBER by enumerating every equiprobable branch.

    Branches are (Alice basis, Alice bit, [Eve basis], Bob basis); Eve
    measures and resends the state she observed.
    """
    sifted = Fraction(0)
    errors = Fraction(0)
    eve_bases = (0, 1) if eve_present else (None,)
    branches = list(itertools.product((0, 1), (0, 1), eve_bases, (0, 1)))
    weight = Fraction(1, len(branches))
    for a_basis, a_bit, e_basis, b_basis in branches:
        if e_basis is None:
            arriving = [((a_basis, a_bit), Fraction(1))]
        else:
            arriving = [((e_basis, bit), p) for bit, p in _measure(a_basis, a_bit, e_basis).items()]
        if a_basis != b_basis:
            continue
        for (basis, bit), p in arriving:
            for b_bit, q in _measure(basis, bit, b_basis).items():
                sifted += weight * p * q
                if b_bit != a_bit:
                    errors += weight * p * q
    return {"sift_fraction": sifted, "qber": errors / sifted}


# ------------------------------------------------------------------ GF(2)


def dense_gf2_mul(matrix: Sequence[Sequence[int]], vector: Sequence[int]) -> list[int]:
    """Textbook mod-2 matrix-vector product."""
    rows = [list(r) for r in matrix]
    v = list(vector)
    if any(len(r) != len(v) for r in rows):
        raise ValueError(f"matrix columns do not match vector length {len(v)}")
    if len(v) > ORACLE_SIZE_CAP:
        raise ValueError(f"oracle capped at n = {ORACLE_SIZE_CAP}")
    out = []
    for r in rows:
        acc = 0
        for a, b in zip(r, v):
            acc ^= (int(a) & 1) & (int(b) & 1)
        out.append(acc)
    return out


def toeplitz_matrix(defining_bits: Sequence[int], rows: int, cols: int) -> list[list[int]]:
    """Dense m x n Toeplitz matrix with ``T[i][j] = t[i - j + n - 1]``."""
    if len(defining_bits) != rows + cols - 1:
        raise ValueError("need rows + cols - 1 defining bits")
    return [[int(defining_bits[i - j + cols - 1]) for j in range(cols)] for i in range(rows)]


# ---------------------------------------------------------------- Zernike


def noll_table(count: int) -> list[tuple[int, int]]:
    """(n, m) for Noll j = 1..count, signed m (negative = sine term)."""
    out = []
    n = 0
    while len(out) < count:
        j = n * (n + 1) // 2 + 1
        for am in range(n % 2, n + 1, 2):
            if am == 0:
                out.append((n, 0))
                j += 1
            else:
                pair = [(n, am), (n, -am)] if j % 2 == 0 else [(n, -am), (n, am)]
                out.extend(pair)
                j += 2
        n += 1
    return out[:count]


def zernike_grid(n: int, m: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Unit-rms Zernike term built from a Jacobi polynomial."""
    am = abs(m)
    k = (n - am) // 2
    radial = (-1) ** k * rho**am * eval_jacobi(k, am, 0, 1.0 - 2.0 * rho**2)
    if m == 0:
        return math.sqrt(n + 1) * radial
    ang = np.cos(am * theta) if m > 0 else np.sin(am * theta)
    return math.sqrt(2 * (n + 1)) * radial * ang


def pupil_grid(grid_n: int, pixel_m: float, diameter_m: float):
    """(rho, theta, mask) at pixel centres, rho normalised to the pupil radius."""
    half = diameter_m / 2.0
    axis = [(i - (grid_n - 1) / 2.0) * pixel_m for i in range(grid_n)]
    x = np.array([[a for a in axis] for _ in axis])
    y = x.T
    r = np.sqrt(x * x + y * y)
    return r / half, np.arctan2(y, x), r <= half * (1 + 1e-12)


def zernike_project(phase: np.ndarray, pixel_m: float, diameter_m: float, mode_count: int):
    """Best-fit coefficients of Noll 2..mode_count+1 by Gram-Schmidt projection.

    Piston is included in the basis and then dropped from the result.
    Returns ``(coefficients, residual_rms)`` where the rms is taken over the
    pupil after removing the fitted modes and piston.
    """
    phase = np.asarray(phase, dtype=float)
    rho, theta, mask = pupil_grid(phase.shape[0], pixel_m, diameter_m)
    table = noll_table(mode_count + 1)
    raw = [zernike_grid(n, m, rho[mask], theta[mask]) for n, m in table]
    target = phase[mask]

    basis, r = [], np.zeros((len(raw), len(raw)))
    for i, v in enumerate(raw):
        w = v.copy()
        for _ in range(2):  # re-orthogonalise once for numerical safety
            for k, q in enumerate(basis):
                proj = float(np.dot(q, w))
                r[k, i] += proj
                w = w - proj * q
        norm = float(np.sqrt(np.dot(w, w)))
        r[i, i] = norm
        basis.append(w / norm)
    inner = np.array([float(np.dot(q, target)) for q in basis])
    coeffs = np.zeros(len(raw))
    for i in range(len(raw) - 1, -1, -1):
        coeffs[i] = (inner[i] - float(np.dot(r[i, i + 1:], coeffs[i + 1:]))) / r[i, i]
    residual = target - sum(c * q for c, q in zip(inner, basis))
    rms = float(np.sqrt(np.mean(residual**2)))
    return coeffs[1:], rms


# --------------------------------------------------------------- coupling


def flat_coupling_quadrature(mode_radius_ratio: float) -> float:
    """Uniform-pupil / Gaussian-mode overlap by numerical quadrature (R = 1)."""
    w = mode_radius_ratio
    amp, _ = quad(lambda r: 2.0 * math.pi * r * math.exp(-r * r / (w * w)), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return amp * amp / (math.pi * (math.pi * w * w / 2.0))


def coupling_optimum() -> tuple[float, float]:
    """(optimal mode radius / pupil radius, peak efficiency) by bounded search."""
    res = minimize_scalar(lambda w: -flat_coupling_quadrature(w), bounds=(0.2, 3.0), method="bounded",
                          options={"xatol": 1e-9})
    return float(res.x), float(-res.fun)


# ------------------------------------------------------------------ orbit


def _geometry(altitude_km: float, earth_radius_km: float, psi_min: float, phi: float):
    r = earth_radius_km + altitude_km
    d0 = np.array([math.cos(psi_min), math.sin(psi_min), 0.0])
    z = np.array([0.0, 0.0, 1.0])
    sat = r * (math.cos(phi) * d0 + math.sin(phi) * z)
    los = sat - np.array([earth_radius_km, 0.0, 0.0])
    dist = float(np.linalg.norm(los))
    elev = math.degrees(math.asin(los[0] / dist))
    az = math.degrees(math.atan2(los[1], los[2])) % 360.0
    return elev, az, dist


def pass_track(
    altitude_km: float, max_elevation_deg: float, times_from_culmination_s: Sequence[float],
    earth_radius_km: float = 6371.0,
) -> list[tuple[float, float, float]]:
    """(elevation, azimuth, slant range) by 3-D vector geometry of a circular orbit.

    The station sits on the x axis; the orbit plane contains the z axis and
    the direction of closest approach.
    """
    if max_elevation_deg >= 90.0:
        psi_min = 0.0
    else:
        psi_min = brentq(
            lambda p: _geometry(altitude_km, earth_radius_km, p, 0.0)[0] - max_elevation_deg,
            0.0, math.acos(earth_radius_km / (earth_radius_km + altitude_km)), xtol=1e-15,
        )
    rate = math.sqrt(MU_EARTH_KM3_S2 / (earth_radius_km + altitude_km) ** 3)
    return [_geometry(altitude_km, earth_radius_km, psi_min, rate * t) for t in times_from_culmination_s]


# ------------------------------------------------------------- key rate


def binary_entropy(p: float) -> float:
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def rate_zero_crossing(f: float = 1.0) -> float:
    """Q where 1 - (1 + f) h2(Q) = 0, by plain bisection on [0, 0.5]."""
    lo, hi = 1e-12, 0.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 1.0 - (1.0 + f) * binary_entropy(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------- fixtures


def _fixture(name: str, how: str, inputs: dict, values: dict, tolerance: float) -> dict:
    res = OracleResult(name, _digest(inputs), values, tolerance)
    return {"_provenance": f"{_PROVENANCE}; {how}", "inputs": inputs, **res.to_json()}


_PROVENANCE = "generated by qkd_skylink.oracles.build_fixtures; regenerate with python -m qkd_skylink.oracles"


def build_fixtures() -> dict[str, dict]:
    fixtures = {}
    for eve in (False, True):
        res = enumerate_bb84(eve)
        fixtures[f"bb84_{'eve' if eve else 'no_eve'}.json"] = _fixture(
            "enumerate_bb84", "exact enumeration of all equiprobable branches", {"eve_present": eve},
            {"sift_fraction": str(res["sift_fraction"]), "qber": str(res["qber"])}, 0.0,
        )

    rng = np.random.default_rng(20240601)
    n, m = 32, 8
    t = rng.integers(0, 2, m + n - 1).tolist()
    x = rng.integers(0, 2, n).tolist()
    fixtures["toeplitz_32x8.json"] = _fixture(
        "dense_gf2_mul", "dense GF(2) product of the Toeplitz matrix built from defining_bits",
        {"rows": m, "cols": n, "defining_bits": t, "input": x},
        {"output": dense_gf2_mul(toeplitz_matrix(t, m, n), x)}, 0.0,
    )

    w, eta = coupling_optimum()
    fixtures["coupling_optimum.json"] = _fixture(
        "flat_coupling_quadrature", "quad integration of the uniform-pupil Gaussian overlap", {},
        {"mode_radius_ratio": w, "peak_efficiency": eta}, 1e-9,
    )

    times = [-200.0, -150.0, -45.5, 0.0, 60.0, 210.0]
    track = pass_track(500.0, 60.0, times)
    fixtures["pass_500km_60deg.json"] = _fixture(
        "pass_track", "3-D vector geometry of a circular two-body orbit",
        {"altitude_km": 500.0, "max_elevation_deg": 60.0, "times_from_culmination_s": times},
        {"elevation_deg": [e for e, _, _ in track], "azimuth_deg": [a for _, a, _ in track],
         "slant_range_km": [d for _, _, d in track]}, 1e-9,
    )

    fixtures["rate_threshold.json"] = _fixture(
        "rate_zero_crossing", "bisection of 1 - 2 h2(Q) = 0 and direct entropy evaluation", {"f": 1.0},
        {"zero_crossing_qber": rate_zero_crossing(1.0), "h2_0.05": binary_entropy(0.05),
         "rate_q05_f116": 1.0 - 2.16 * binary_entropy(0.05)}, 1e-12,
    )
    return fixtures


def write_fixtures(out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, body in build_fixtures().items():
        p = out / name
        p.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        paths.append(p)
    return paths


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Regenerate oracle fixtures.")
    ap.add_argument("out_dir", nargs="?", default="tests/fixtures")
    args = ap.parse_args(argv)
    for p in write_fixtures(args.out_dir):
        print(p)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
