"""Gridded pupil-plane phase maps and their binary file format.

Binary layout (little-endian)::

    magic      4 bytes  b"WFS1"
    grid_n     u32
    pixel_m    f64
    r0_m       f64      (0.0 when unknown)
    seed       i64      (-1 when unknown)
    phase      grid_n*grid_n f64, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

_MAGIC = b"WFS1"
_HEADER = struct.Struct("<4sIddq")


def circular_mask(grid_n: int, pixel_m: float, diameter_m: float) -> np.ndarray:
    c = (np.arange(grid_n) - (grid_n - 1) / 2.0) * pixel_m
    x, y = np.meshgrid(c, c)
    return x * x + y * y <= (diameter_m / 2.0) ** 2 * (1 + 1e-12)


def pupil_coordinates(grid_n: int, pixel_m: float, diameter_m: float):
    """Pixel-centre coordinates normalised to the pupil radius, as (rho, theta)."""
    c = (np.arange(grid_n) - (grid_n - 1) / 2.0) * pixel_m / (diameter_m / 2.0)
    x, y = np.meshgrid(c, c)
    return np.hypot(x, y), np.arctan2(y, x)


@dataclass(eq=False)
class WavefrontScreen:
    """Phase map in radians on a square grid with a circular pupil.

    ``aperture_diameter_m`` defaults to the full grid extent.
    """

    phase_rad: np.ndarray
    pixel_m: float
    aperture_diameter_m: float | None = None
    r0_m: float = 0.0
    seed: int = -1
    aperture_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.phase_rad = np.asarray(self.phase_rad, dtype=float)
        if self.phase_rad.ndim != 2 or self.phase_rad.shape[0] != self.phase_rad.shape[1]:
            raise ConfigurationError("phase grid must be square")
        if not self.pixel_m > 0:
            raise ConfigurationError("pixel_m must be positive")
        extent = self.grid_n * self.pixel_m
        if self.aperture_diameter_m is None:
            self.aperture_diameter_m = extent
        if self.aperture_diameter_m > extent * (1 + 1e-12):
            raise ConfigurationError("pupil larger than the grid")
        self.aperture_mask = circular_mask(self.grid_n, self.pixel_m, self.aperture_diameter_m)

    @property
    def grid_n(self) -> int:
        return self.phase_rad.shape[0]

    def with_phase(self, phase_rad) -> "WavefrontScreen":
        return WavefrontScreen(phase_rad, self.pixel_m, self.aperture_diameter_m, self.r0_m, self.seed)

    def pupil_rms(self) -> float:
        """Piston-removed rms phase over the pupil."""
        p = self.phase_rad[self.aperture_mask]
        return float(np.sqrt(np.mean((p - p.mean()) ** 2)))

    def crop(self, row: int, col: int, n: int, aperture_diameter_m: float | None = None):
        """Sub-grid ``n`` x ``n`` starting at (row, col); indices wrap around."""
        rows = (np.arange(row, row + n) % self.grid_n)[:, None]
        cols = (np.arange(col, col + n) % self.grid_n)[None, :]
        return WavefrontScreen(
            self.phase_rad[rows, cols], self.pixel_m, aperture_diameter_m, self.r0_m, self.seed
        )

    def __eq__(self, other):
        if not isinstance(other, WavefrontScreen):
            return NotImplemented
        return (
            self.pixel_m == other.pixel_m
            and self.aperture_diameter_m == other.aperture_diameter_m
            and np.array_equal(self.phase_rad, other.phase_rad)
        )

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(_MAGIC, self.grid_n, float(self.pixel_m), float(self.r0_m), int(self.seed))
        return head + np.ascontiguousarray(self.phase_rad, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, aperture_diameter_m: float | None = None) -> "WavefrontScreen":
        magic, n, pixel, r0, seed = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise ConfigurationError("not a phase-screen file")
        body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        if body.size != n * n:
            raise ConfigurationError(f"expected {n * n} samples, found {body.size}")
        return cls(body.reshape(n, n).astype(float), pixel, aperture_diameter_m, r0, seed)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, aperture_diameter_m: float | None = None) -> "WavefrontScreen":
        return cls.from_bytes(Path(path).read_bytes(), aperture_diameter_m)
