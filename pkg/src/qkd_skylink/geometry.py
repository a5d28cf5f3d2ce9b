"""LEO pass profiles and static link losses.

The pass model is a circular orbit over a spherical, non-rotating Earth. A pass
is fixed by its maximum elevation: the ground track's closest approach to the
station sets the cross-track central angle, and the satellite then sweeps the
along-track angle at the orbital rate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import ConfigurationError, DomainError

EARTH_MU_KM3_S2 = 398600.4418
PASS_CSV_HEADER = ("t_s", "elevation_deg", "azimuth_deg", "slant_range_km")


@dataclass(frozen=True)
class OrbitConfig:
    altitude_km: float = 500.0
    max_elevation_deg: float = 60.0
    earth_radius_km: float = 6371.0

    def __post_init__(self):
        if not self.altitude_km > 0:
            raise ConfigurationError("altitude_km must be positive")
        if not 0 < self.max_elevation_deg <= 90:
            raise ConfigurationError("max_elevation_deg must lie in (0, 90]")
        if not self.earth_radius_km > 0:
            raise ConfigurationError("earth_radius_km must be positive")

    @property
    def orbit_radius_km(self) -> float:
        return self.earth_radius_km + self.altitude_km

    @property
    def angular_rate_rad_s(self) -> float:
        return math.sqrt(EARTH_MU_KM3_S2 / self.orbit_radius_km**3)


@dataclass(frozen=True)
class StationConfig:
    aperture_diameter_m: float = 0.80
    elevation_mask_deg: float = 10.0
    uplink_beam_count: int = 4

    def __post_init__(self):
        if not self.aperture_diameter_m > 0:
            raise ConfigurationError("aperture_diameter_m must be positive")
        if not 0 <= self.elevation_mask_deg < 90:
            raise ConfigurationError("elevation_mask_deg must lie in [0, 90)")
        if int(self.uplink_beam_count) != self.uplink_beam_count or self.uplink_beam_count < 1:
            raise ConfigurationError("uplink_beam_count must be a positive integer")


@dataclass(frozen=True)
class PassSample:
    t_s: float
    elevation_deg: float
    azimuth_deg: float
    slant_range_km: float


class PassProfile(tuple):
    """Time-ordered pass samples; empty when the satellite never clears the mask."""

    @property
    def visible(self) -> bool:
        return len(self) > 0

    @property
    def duration_s(self) -> float:
        return self[-1].t_s - self[0].t_s if self else 0.0


def slant_range(elevation_deg: float, orbit: OrbitConfig) -> float:
    """Distance in km from the station to a satellite seen at ``elevation_deg``."""
    if not 0.0 <= elevation_deg <= 90.0:
        raise DomainError(f"elevation {elevation_deg} deg outside [0, 90]")
    re, h = orbit.earth_radius_km, orbit.altitude_km
    s = re * math.sin(math.radians(elevation_deg))
    return math.sqrt(s * s + 2.0 * re * h + h * h) - s


def _central_angle(elevation_rad: float, orbit: OrbitConfig) -> float:
    # Earth central angle between station and sub-satellite point.
    ratio = orbit.earth_radius_km / orbit.orbit_radius_km
    return math.acos(ratio * math.cos(elevation_rad)) - elevation_rad


def propagate_pass(orbit: OrbitConfig, station: StationConfig, step_s: float) -> PassProfile:
    """Sample an overhead pass every ``step_s`` seconds.

    Samples are placed symmetrically about the culmination so the peak is
    always sampled; ``t_s`` counts from the first sample above the mask.
    """
    if not step_s > 0:
        raise ConfigurationError("step_s must be positive")
    mask = station.elevation_mask_deg
    if orbit.max_elevation_deg < mask:
        return PassProfile()

    psi_min = _central_angle(math.radians(orbit.max_elevation_deg), orbit)
    psi_mask = _central_angle(math.radians(mask), orbit)
    half_track = math.acos(min(1.0, math.cos(psi_mask) / math.cos(psi_min)))
    rate = orbit.angular_rate_rad_s
    k_max = int(math.floor(half_track / rate / step_s + 1e-12))
    ratio = orbit.earth_radius_km / orbit.orbit_radius_km

    samples = []
    for k in range(-k_max, k_max + 1):
        phi = k * step_s * rate
        psi = math.acos(max(-1.0, min(1.0, math.cos(psi_min) * math.cos(phi))))
        elev = math.degrees(math.atan2(math.cos(psi) - ratio, math.sin(psi)))
        if elev < mask - 1e-9:
            continue
        elev = min(90.0, max(mask, elev))
        az = math.degrees(math.atan2(math.sin(psi_min) * math.cos(phi), math.sin(phi))) % 360.0
        samples.append(
            PassSample(
                t_s=(k + k_max) * step_s,
                elevation_deg=elev,
                azimuth_deg=az,
                slant_range_km=slant_range(elev, orbit),
            )
        )
    return PassProfile(samples)


def static_loss_db(
    sample: PassSample,
    divergence_full_angle_rad: float,
    station: StationConfig,
    zenith_atm_loss_db: float = 0.0,
) -> float:
    """Geometric (flat-top footprint) plus airmass-scaled atmospheric loss in dB."""
    if not divergence_full_angle_rad > 0:
        raise DomainError("divergence must be positive")
    if not sample.slant_range_km > 0:
        raise DomainError("slant range must be positive")
    if zenith_atm_loss_db < 0:
        raise DomainError("zenith_atm_loss_db must be >= 0")
    footprint_m = divergence_full_angle_rad * sample.slant_range_km * 1e3
    geometric = -20.0 * math.log10(min(1.0, station.aperture_diameter_m / footprint_m))
    atmospheric = 0.0
    if zenith_atm_loss_db > 0:
        if sample.elevation_deg <= 0:
            raise DomainError("airmass undefined at or below the horizon")
        atmospheric = zenith_atm_loss_db / math.sin(math.radians(sample.elevation_deg))
    return geometric + atmospheric


def write_pass_csv(samples: Sequence[PassSample], path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PASS_CSV_HEADER)
        for s in samples:
            writer.writerow([repr(s.t_s), repr(s.elevation_deg), repr(s.azimuth_deg), repr(s.slant_range_km)])


def read_pass_csv(path) -> PassProfile:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != PASS_CSV_HEADER:
            raise ConfigurationError(f"unexpected pass CSV header {header}")
        return PassProfile(PassSample(*map(float, row)) for row in reader)
