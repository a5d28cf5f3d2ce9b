"""Atmospheric turbulence: r0 scaling, Kolmogorov phase screens, frozen flow,
and lognormal intensity fading with multi-beam averaging."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError
from .seeding import make_rng
from .wavefront import WavefrontScreen

# Kolmogorov phase PSD prefactor: Phi(f) = 0.023 r0^(-5/3) f^(-11/3).
_PSD_COEFF = 0.023
SUBHARMONIC_LEVELS = 10
MAX_LN_VARIANCE = 5.0


@dataclass(frozen=True)
class TurbulenceProfile:
    r0_zenith_m: float = 0.10
    reference_wavelength_m: float = 500e-9
    wind_speed_mps: float = 10.0
    scintillation_index_zenith: float = 0.1

    def __post_init__(self):
        if not self.r0_zenith_m > 0:
            raise ConfigurationError("r0_zenith_m must be positive")
        if not self.reference_wavelength_m > 0:
            raise ConfigurationError("reference_wavelength_m must be positive")
        if self.wind_speed_mps < 0:
            raise ConfigurationError("wind_speed_mps must be >= 0")
        if self.scintillation_index_zenith < 0:
            raise ConfigurationError("scintillation_index_zenith must be >= 0")


def fried_parameter(profile: TurbulenceProfile, zenith_angle_deg: float, wavelength_m: float) -> float:
    """r0 at the given zenith angle and wavelength (lambda^6/5, cos^3/5 scaling)."""
    if not 0.0 <= zenith_angle_deg < 90.0:
        raise DomainError(f"zenith angle {zenith_angle_deg} deg outside [0, 90)")
    if not wavelength_m > 0:
        raise DomainError("wavelength must be positive")
    return (
        profile.r0_zenith_m
        * (wavelength_m / profile.reference_wavelength_m) ** 1.2
        * math.cos(math.radians(zenith_angle_deg)) ** 0.6
    )


def scintillation_index(profile: TurbulenceProfile, zenith_angle_deg: float) -> float:
    """Weak-turbulence airmass scaling sec(z)^(11/6) of the zenith index."""
    if not 0.0 <= zenith_angle_deg < 90.0:
        raise DomainError(f"zenith angle {zenith_angle_deg} deg outside [0, 90)")
    return profile.scintillation_index_zenith / math.cos(math.radians(zenith_angle_deg)) ** (11 / 6)


def _kolmogorov_psd(f, r0_m):
    with np.errstate(divide="ignore"):
        psd = _PSD_COEFF * r0_m ** (-5.0 / 3.0) * f ** (-11.0 / 3.0)
    psd[f == 0] = 0.0
    return psd


def generate_phase_screen(grid_n: int, pixel_m: float, r0_m: float, seed: int) -> WavefrontScreen:
    """Kolmogorov phase screen from the FFT method plus low-order subharmonics.

    The first FFT ring and ``SUBHARMONIC_LEVELS`` nested 3x3 subharmonic
    shells are added as explicit plane waves whose frequency is drawn
    uniformly inside its cell, weighted by the PSD at the drawn frequency.
    The ensemble structure function then integrates the PSD over each cell
    instead of point-sampling it where the spectrum is steepest.
    """
    grid_n = int(grid_n)
    if grid_n < 16 or grid_n & (grid_n - 1):
        raise ConfigurationError(f"grid_n must be a power of two >= 16, got {grid_n}")
    if not pixel_m > 0 or not r0_m > 0:
        raise ConfigurationError("pixel_m and r0_m must be positive")
    rng = make_rng(seed, "phase_screen")
    extent = grid_n * pixel_m

    df = 1.0 / extent
    fx = np.fft.fftfreq(grid_n, pixel_m)
    f = np.hypot(fx[None, :], fx[:, None])
    amp = np.sqrt(_kolmogorov_psd(f, r0_m)) * df
    ring = np.array([-1, 0, 1])
    amp[np.ix_(ring, ring)] = 0.0  # first ring goes to the jittered set below
    cn = (rng.standard_normal((grid_n, grid_n)) + 1j * rng.standard_normal((grid_n, grid_n))) * amp
    high = np.fft.ifft2(cn).real * grid_n * grid_n

    offsets = np.array([(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)], float)
    cells = [df / 3**level for level in range(SUBHARMONIC_LEVELS + 1)]
    centres = np.concatenate([offsets * d for d in cells])
    sizes = np.repeat(cells, len(offsets))
    freqs = centres + (rng.random(centres.shape) - 0.5) * sizes[:, None]
    weights = np.sqrt(_kolmogorov_psd(np.hypot(freqs[:, 0], freqs[:, 1]), r0_m)) * sizes
    coeffs = (rng.standard_normal(len(sizes)) + 1j * rng.standard_normal(len(sizes))) * weights

    coords = np.arange(grid_n) * pixel_m
    ey = np.exp(2j * np.pi * np.outer(freqs[:, 0], coords))  # rows (y)
    ex = np.exp(2j * np.pi * np.outer(freqs[:, 1], coords))  # columns (x)
    low = (ey.T * coeffs) @ ex
    phase = high + low.real
    phase -= phase.mean()
    return WavefrontScreen(phase, pixel_m, r0_m=r0_m, seed=int(seed))


def structure_function(phase: np.ndarray, max_lag: int) -> np.ndarray:
    """Mean squared phase difference at pixel lags 0..max_lag (both axes, no wrap)."""
    out = np.zeros(max_lag + 1)
    for lag in range(1, max_lag + 1):
        dx = phase[:, lag:] - phase[:, :-lag]
        dy = phase[lag:, :] - phase[:-lag, :]
        out[lag] = 0.5 * (np.mean(dx * dx) + np.mean(dy * dy))
    return out


def kolmogorov_structure_function(r_m, r0_m):
    return 6.88 * (np.asarray(r_m, dtype=float) / r0_m) ** (5.0 / 3.0)


def _shift_columns(phase: np.ndarray, shift_px: float) -> np.ndarray:
    k = math.floor(shift_px)
    frac = shift_px - k
    base = np.roll(phase, k, axis=1)
    if frac == 0.0:
        return base
    return (1.0 - frac) * base + frac * np.roll(phase, k + 1, axis=1)


def evolve_screen(screen: WavefrontScreen, wind_speed_mps: float, dt_s: float) -> WavefrontScreen:
    """Frozen-flow translation along +x by ``wind_speed * dt`` with wraparound.

    Sub-pixel shifts use linear interpolation between neighbouring columns.
    """
    if dt_s < 0:
        raise ConfigurationError("dt_s must be >= 0")
    shift = wind_speed_mps * dt_s / screen.pixel_m
    if shift == 0.0:
        return screen.with_phase(screen.phase_rad.copy())
    return screen.with_phase(_shift_columns(screen.phase_rad, shift))


def frozen_flow_window(
    screen: WavefrontScreen,
    wind_speed_mps: float,
    t_s: float,
    n: int,
    aperture_diameter_m: float,
    col: int = 0,
) -> WavefrontScreen:
    """Window ``n`` x ``n`` at (row 0, ``col``) of ``evolve_screen(screen, wind, t)``.

    Equivalent to evolving the whole screen and cropping, without touching
    the columns outside the window.
    """
    shift = wind_speed_mps * t_s / screen.pixel_m
    k = math.floor(shift)
    frac = shift - k
    N = screen.grid_n
    cols = (np.arange(col, col + n) - k) % N
    a = screen.phase_rad[:n][:, cols]
    if frac != 0.0:
        b = screen.phase_rad[:n][:, (cols - 1) % N]
        a = (1.0 - frac) * a + frac * b
    return WavefrontScreen(a, screen.pixel_m, aperture_diameter_m, screen.r0_m, screen.seed)


@dataclass(eq=False)
class TransmittanceSeries:
    rate_hz: float
    samples: np.ndarray
    mean_transmittance: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not self.rate_hz > 0:
            raise ConfigurationError("rate_hz must be positive")
        if self.samples.size and (np.any(self.samples <= 0) or np.any(self.samples > 1)):
            raise ConfigurationError("transmittance samples must lie in (0, 1]")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.rate_hz

    def at(self, t_s):
        """Piecewise-constant lookup at times ``t_s`` (seconds from series start)."""
        idx = np.floor(np.asarray(t_s, dtype=float) * self.rate_hz).astype(np.int64)
        return self.samples[np.clip(idx, 0, self.samples.size - 1)]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "t_s", "transmittance"])
            for i, v in enumerate(self.samples):
                w.writerow([i, repr(i / self.rate_hz), repr(float(v))])


def scintillation_series(
    mean_eta: float,
    scint_index: float,
    rate_hz: float,
    duration_s: float,
    beam_count: int = 1,
    seed: int = 0,
) -> TransmittanceSeries:
    """Lognormal fading averaged over ``beam_count`` independent beams.

    Each beam has mean ``mean_eta`` and normalised intensity variance
    ``scint_index``. Samples are capped at 1.
    """
    if not 0 < mean_eta <= 1:
        raise ConfigurationError("mean_eta must lie in (0, 1]")
    if scint_index < 0:
        raise ConfigurationError("scint_index must be >= 0")
    if not rate_hz > 0 or not duration_s > 0:
        raise ConfigurationError("rate_hz and duration_s must be positive")
    if int(beam_count) != beam_count or beam_count < 1:
        raise ConfigurationError("beam_count must be a positive integer")
    n = max(1, int(round(rate_hz * duration_s)))
    s2 = math.log1p(scint_index)
    if s2 > MAX_LN_VARIANCE:
        raise ConfigurationError(f"log-intensity variance {s2:.3g} exceeds {MAX_LN_VARIANCE}")
    if scint_index == 0:
        return TransmittanceSeries(rate_hz, np.full(n, float(mean_eta)), mean_eta)
    rng = make_rng(seed, "scintillation")
    draws = rng.lognormal(math.log(mean_eta) - s2 / 2.0, math.sqrt(s2), size=(n, int(beam_count)))
    samples = np.minimum(draws.mean(axis=1), 1.0)
    return TransmittanceSeries(rate_hz, samples, mean_eta)
