"""Shack-Hartmann sensing, modal reconstruction, tip-tilt + DM correction and
single-mode-fibre coupling, closed in an integrator loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigurationError, ReconstructionError
from .seeding import derive_seed, make_rng
from .wavefront import WavefrontScreen, circular_mask
from .zernike import zernike_cube

TIP_TILT_MODES = (2, 3)
MAX_CONDITION = 1e8


@dataclass(frozen=True)
class LoopConfig:
    """Integrator AO loop settings.

    ``dm_mode_count`` counts corrected modes from Noll 2 upward; Noll 2-3 are
    the tip-tilt mirror's share, the rest go to the deformable mirror.
    """

    rate_hz: float = 2000.0
    gain: float = 0.5
    dm_mode_count: int = 35
    subap_n: int = 16
    wfs_noise_rad: float = 0.0

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ConfigurationError("rate_hz must be positive")
        if not 0 < self.gain <= 1:
            raise ConfigurationError("gain must lie in (0, 1]")
        if int(self.dm_mode_count) != self.dm_mode_count or self.dm_mode_count < 2:
            raise ConfigurationError("dm_mode_count must be an integer >= 2 (tip and tilt)")
        if int(self.subap_n) != self.subap_n or self.subap_n < 1:
            raise ConfigurationError("subap_n must be a positive integer")
        if self.wfs_noise_rad < 0:
            raise ConfigurationError("wfs_noise_rad must be >= 0")


@dataclass(eq=False)
class SlopeMeasurement:
    """Per-subaperture mean phase gradient, in radians per subaperture width."""

    subap_n: int
    x_slopes: np.ndarray
    y_slopes: np.ndarray
    validity_mask: np.ndarray
    grid_n: int
    pixel_m: float
    aperture_diameter_m: float

    def vector(self) -> np.ndarray:
        v = self.validity_mask
        return np.concatenate([self.x_slopes[v], self.y_slopes[v]])


@dataclass(eq=False)
class ModalCoefficients:
    """Zernike amplitudes in radians rms; entry k is Noll mode k + 2."""

    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if not np.all(np.isfinite(self.coefficients)):
            raise ConfigurationError("non-finite modal coefficient")

    def __len__(self):
        return self.coefficients.size

    @classmethod
    def zeros(cls, n: int) -> "ModalCoefficients":
        return cls(np.zeros(n))


def _subap_layout(grid_n: int, subap_n: int) -> int:
    if subap_n < 1 or grid_n % subap_n:
        raise ConfigurationError(f"subap_n={subap_n} does not divide grid_n={grid_n}")
    p = grid_n // subap_n
    if p < 2:
        raise ConfigurationError("subapertures need at least 2x2 pixels")
    return p


def _block_sum(a: np.ndarray, subap_n: int, p: int) -> np.ndarray:
    return a.reshape(subap_n, p, subap_n, p).sum(axis=(1, 3))


@lru_cache(maxsize=32)
def _wfs_geometry(grid_n: int, pixel_m: float, diameter_m: float, subap_n: int):
    p = _subap_layout(grid_n, subap_n)
    mask = circular_mask(grid_n, pixel_m, diameter_m)
    valid = _block_sum(mask.astype(float), subap_n, p) >= 0.5 * p * p
    inner = (np.arange(grid_n - 1) % p) != p - 1  # neighbour pair inside one subaperture
    wx = np.zeros((grid_n, grid_n))
    wx[:, :-1] = (mask[:, 1:] & mask[:, :-1]) & inner[None, :]
    wy = np.zeros((grid_n, grid_n))
    wy[:-1, :] = (mask[1:, :] & mask[:-1, :]) & inner[:, None]
    nx = _block_sum(wx, subap_n, p)
    ny = _block_sum(wy, subap_n, p)
    valid &= (nx > 0) & (ny > 0)
    for arr in (valid, wx, wy, nx, ny):
        arr.setflags(write=False)
    return p, valid, wx, wy, nx, ny


def _mean_gradients(phase: np.ndarray, geometry, subap_n: int):
    p, valid, wx, wy, nx, ny = geometry
    dx = np.zeros_like(phase)
    dx[:, :-1] = (phase[:, 1:] - phase[:, :-1]) * wx[:, :-1]
    dy = np.zeros_like(phase)
    dy[:-1, :] = (phase[1:, :] - phase[:-1, :]) * wy[:-1, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        sx = np.where(valid, _block_sum(dx, subap_n, p) / nx * p, 0.0)
        sy = np.where(valid, _block_sum(dy, subap_n, p) / ny * p, 0.0)
    return sx, sy


def shwfs_measure(screen: WavefrontScreen, subap_n: int, noise_rad: float = 0.0, seed: int = 0) -> SlopeMeasurement:
    """Shack-Hartmann slopes: mean phase gradient per subaperture plus Gaussian noise.

    A subaperture is valid when at least half its pixels fall in the pupil.
    """
    if noise_rad < 0:
        raise ConfigurationError("noise_rad must be >= 0")
    geom = _wfs_geometry(screen.grid_n, float(screen.pixel_m), float(screen.aperture_diameter_m), int(subap_n))
    sx, sy = _mean_gradients(screen.phase_rad, geom, subap_n)
    valid = geom[1]
    if noise_rad > 0:
        rng = make_rng(seed, "shwfs")
        sx = sx + np.where(valid, rng.standard_normal(sx.shape) * noise_rad, 0.0)
        sy = sy + np.where(valid, rng.standard_normal(sy.shape) * noise_rad, 0.0)
    return SlopeMeasurement(
        subap_n, sx, sy, valid.copy(), screen.grid_n, float(screen.pixel_m), float(screen.aperture_diameter_m)
    )


@lru_cache(maxsize=32)
def _reconstructor(grid_n: int, pixel_m: float, diameter_m: float, subap_n: int, mode_count: int):
    geom = _wfs_geometry(grid_n, pixel_m, diameter_m, subap_n)
    valid = geom[1]
    n_meas = 2 * int(valid.sum())
    if mode_count > n_meas // 2:
        raise ConfigurationError(f"{mode_count} modes exceed half of the {n_meas} valid slopes")
    cube = zernike_cube(grid_n, pixel_m, diameter_m, mode_count)
    cols = []
    for z in cube:
        sx, sy = _mean_gradients(z, geom, subap_n)
        cols.append(np.concatenate([sx[valid], sy[valid]]))
    response = np.stack(cols, axis=1)
    sv = np.linalg.svd(response, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if cond > MAX_CONDITION:
        raise ReconstructionError(f"response matrix rank deficient (condition {cond:.3g})", cond)
    rec = np.linalg.pinv(response)
    rec.setflags(write=False)
    return rec


def reconstruct(slopes: SlopeMeasurement, mode_count: int) -> ModalCoefficients:
    """Least-squares Zernike fit (Noll 2 .. mode_count+1) to measured slopes."""
    if int(mode_count) != mode_count or mode_count < 1:
        raise ConfigurationError("mode_count must be a positive integer")
    rec = _reconstructor(
        slopes.grid_n, slopes.pixel_m, slopes.aperture_diameter_m, slopes.subap_n, int(mode_count)
    )
    return ModalCoefficients(rec @ slopes.vector())


def correction_phase(screen: WavefrontScreen, correction: ModalCoefficients) -> np.ndarray:
    n = len(correction)
    if n == 0:
        return np.zeros_like(screen.phase_rad)
    cube = zernike_cube(screen.grid_n, float(screen.pixel_m), float(screen.aperture_diameter_m), n)
    return np.tensordot(correction.coefficients, cube, axes=1)


def apply_correction(
    screen: WavefrontScreen, correction: ModalCoefficients, dm_mode_count: int | None = None
) -> WavefrontScreen:
    """Subtract the mirror shape sum_k c_k Z_k (Noll 2 upward) from the pupil phase."""
    if dm_mode_count is not None and len(correction) > dm_mode_count:
        raise ConfigurationError(f"{len(correction)} modes requested, mirrors provide {dm_mode_count}")
    if not np.any(correction.coefficients):
        return screen.with_phase(screen.phase_rad.copy())
    return screen.with_phase(screen.phase_rad - correction_phase(screen, correction))


def fit_modes(screen: WavefrontScreen, mode_count: int) -> ModalCoefficients:
    """Least-squares projection of the pupil phase onto Noll 2 .. mode_count+1.

    Piston is fitted alongside and dropped, so a pupil mean offset does not
    leak into the sampled (not exactly zero-mean) higher modes.
    """
    cube = zernike_cube(screen.grid_n, float(screen.pixel_m), float(screen.aperture_diameter_m), mode_count)
    m = screen.aperture_mask
    a = np.column_stack([np.ones(int(m.sum())), cube[:, m].T])
    c, *_ = np.linalg.lstsq(a, screen.phase_rad[m], rcond=None)
    return ModalCoefficients(c[1:])


def coupling_efficiency(screen: WavefrontScreen, mode_radius_ratio: float) -> float:
    """Overlap of the aberrated pupil field with a Gaussian fibre mode.

    ``mode_radius_ratio`` is the back-propagated mode field radius (1/e field)
    over the pupil radius. The mode's energy is integrated over the whole
    plane, so truncation by the pupil counts as loss.
    """
    if not mode_radius_ratio > 0:
        raise ConfigurationError("mode_radius_ratio must be positive")
    radius = screen.aperture_diameter_m / 2.0
    w = mode_radius_ratio * radius
    c = (np.arange(screen.grid_n) - (screen.grid_n - 1) / 2.0) * screen.pixel_m
    r2 = c[None, :] ** 2 + c[:, None] ** 2
    m = screen.aperture_mask
    da = screen.pixel_m**2
    mode = np.exp(-r2[m] / (w * w))
    overlap = np.abs(np.sum(np.exp(1j * screen.phase_rad[m]) * mode) * da) ** 2
    eta = overlap / (m.sum() * da * (math.pi * w * w / 2.0))
    return float(min(1.0, max(0.0, eta)))


def flat_coupling(mode_radius_ratio: float) -> float:
    """Closed-form flat-pupil coupling for a uniform circular aperture."""
    beta2 = 1.0 / mode_radius_ratio**2
    return 2.0 * (1.0 - math.exp(-beta2)) ** 2 / beta2


def optimal_mode_radius_ratio() -> float:
    res = minimize_scalar(lambda r: -flat_coupling(r), bounds=(0.3, 3.0), method="bounded", options={"xatol": 1e-10})
    return float(res.x)


@dataclass(eq=False)
class LoopTelemetry:
    residual_rms_rad: np.ndarray
    coupling_eta: np.ndarray
    rate_hz: float

    def __len__(self):
        return self.residual_rms_rad.size

    @property
    def mean_coupling(self) -> float:
        return float(np.mean(self.coupling_eta)) if len(self) else 0.0

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "residual_rms_rad", "coupling_eta"])
            for i, (r, e) in enumerate(zip(self.residual_rms_rad, self.coupling_eta)):
                w.writerow([i, repr(float(r)), repr(float(e))])


def run_closed_loop(
    screens: Iterable[WavefrontScreen],
    cfg: LoopConfig,
    subap_n: int | None = None,
    noise_rad: float | None = None,
    seed: int = 0,
    mode_radius_ratio: float | None = None,
) -> LoopTelemetry:
    """Integrator loop ``c <- c + gain * reconstruct(measure(residual))``.

    The correction measured on frame k is first applied to frame k+1 (one
    frame of latency). Residual rms and coupling are reported per frame
    with the correction in force at that frame.
    """
    if not 0 < cfg.gain <= 1:
        raise ConfigurationError("gain must lie in (0, 1]")
    subap_n = cfg.subap_n if subap_n is None else subap_n
    noise_rad = cfg.wfs_noise_rad if noise_rad is None else noise_rad
    ratio = optimal_mode_radius_ratio() if mode_radius_ratio is None else mode_radius_ratio
    coeffs = np.zeros(cfg.dm_mode_count)
    residuals, etas = [], []
    for k, screen in enumerate(screens):
        residual = apply_correction(screen, ModalCoefficients(coeffs), cfg.dm_mode_count)
        residuals.append(residual.pupil_rms())
        etas.append(coupling_efficiency(residual, ratio))
        slopes = shwfs_measure(residual, subap_n, noise_rad, derive_seed(seed, "ao_loop", k))
        coeffs = coeffs + cfg.gain * reconstruct(slopes, cfg.dm_mode_count).coefficients
    return LoopTelemetry(np.asarray(residuals), np.asarray(etas), cfg.rate_hz)


def run_open_loop(screens: Iterable[WavefrontScreen], rate_hz: float, mode_radius_ratio: float | None = None) -> LoopTelemetry:
    ratio = optimal_mode_radius_ratio() if mode_radius_ratio is None else mode_radius_ratio
    residuals, etas = [], []
    for screen in screens:
        residuals.append(screen.pupil_rms())
        etas.append(coupling_efficiency(screen, ratio))
    return LoopTelemetry(np.asarray(residuals), np.asarray(etas), rate_hz)


def frozen_flow_screens(
    r0_m: float,
    diameter_m: float,
    wind_speed_mps: float,
    rate_hz: float,
    n_steps: int,
    seed: int,
    pupil_px: int = 64,
    screen_px: int | None = None,
):
    """Pupil-sized windows of one large Kolmogorov screen blown past at the wind speed.

    Each frame is evolved from the original screen by the total elapsed time,
    so interpolation error does not accumulate. The window starts at the
    right-hand edge and the screen is sized so the flow never reaches the
    wraparound seam.
    """
    from .turbulence import frozen_flow_window, generate_phase_screen

    pixel = diameter_m / pupil_px
    travel_px = wind_speed_mps * max(n_steps - 1, 0) / rate_hz / pixel
    needed = pupil_px + int(math.ceil(travel_px)) + 2
    if screen_px is None:
        screen_px = max(256, 1 << (needed - 1).bit_length())
    elif screen_px < needed:
        raise ConfigurationError(f"screen of {screen_px} px too small for {needed} px of flow")
    big = generate_phase_screen(screen_px, pixel, r0_m, seed)
    col0 = screen_px - pupil_px
    for k in range(n_steps):
        yield frozen_flow_window(big, wind_speed_mps, k / rate_hz, pupil_px, diameter_m, col0)


@dataclass(frozen=True)
class BenchResult:
    open_loop: LoopTelemetry
    closed_loop: LoopTelemetry

    @property
    def gain_ratio(self) -> float:
        return self.closed_loop.mean_coupling / self.open_loop.mean_coupling


def ao_benchmark(
    d_over_r0: float = 10.0,
    wind_speed_mps: float = 10.0,
    duration_s: float = 2.0,
    cfg: LoopConfig | None = None,
    diameter_m: float = 0.80,
    seed: int = 0,
    pupil_px: int = 64,
) -> BenchResult:
    """Paired open- vs closed-loop run over the same frozen-flow screens."""
    cfg = cfg or LoopConfig()
    n = int(round(duration_s * cfg.rate_hz))
    r0 = diameter_m / d_over_r0
    ratio = optimal_mode_radius_ratio()

    def screens():
        return frozen_flow_screens(r0, diameter_m, wind_speed_mps, cfg.rate_hz, n, seed, pupil_px)

    closed = run_closed_loop(screens(), cfg, seed=seed, mode_radius_ratio=ratio)
    opened = run_open_loop(screens(), cfg.rate_hz, ratio)
    return BenchResult(opened, closed)
