"""Noll-indexed Zernike polynomials sampled on a pupil grid."""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np

from .wavefront import circular_mask, pupil_coordinates


def noll_to_nm(j: int) -> tuple[int, int]:
    """Radial order ``n`` and signed azimuthal frequency ``m`` for Noll index ``j``."""
    if j < 1:
        raise ValueError("Noll indices start at 1")
    n = int((-1.0 + np.sqrt(8 * (j - 1) + 1)) / 2.0)
    p = j - n * (n + 1) // 2
    k = n % 2
    m = ((p + k) // 2) * 2 - k
    if m != 0 and j % 2 == 1:
        m = -m
    return n, m


def radial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    m = abs(m)
    out = np.zeros_like(rho)
    for k in range((n - m) // 2 + 1):
        c = (-1) ** k * factorial(n - k) / (
            factorial(k) * factorial((n + m) // 2 - k) * factorial((n - m) // 2 - k)
        )
        out += c * rho ** (n - 2 * k)
    return out


def zernike(j: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Unit-rms (over the unit disc) Zernike polynomial, zero outside rho <= 1."""
    n, m = noll_to_nm(j)
    r = radial(n, m, rho)
    if m == 0:
        z = np.sqrt(n + 1.0) * r
    elif m > 0:
        z = np.sqrt(2.0 * (n + 1)) * r * np.cos(m * theta)
    else:
        z = np.sqrt(2.0 * (n + 1)) * r * np.sin(-m * theta)
    return np.where(rho <= 1.0 + 1e-12, z, 0.0)


@lru_cache(maxsize=32)
def zernike_cube(grid_n: int, pixel_m: float, diameter_m: float, mode_count: int) -> np.ndarray:
    """Modes Noll 2 .. mode_count+1 as a read-only (mode_count, grid_n, grid_n) array."""
    rho, theta = pupil_coordinates(grid_n, pixel_m, diameter_m)
    mask = circular_mask(grid_n, pixel_m, diameter_m)
    cube = np.stack([zernike(j, rho, theta) * mask for j in range(2, mode_count + 2)])
    cube.setflags(write=False)
    return cube
