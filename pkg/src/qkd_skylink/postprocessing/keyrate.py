"""Asymptotic decoy-state (GLLP-type) secret key length."""

from __future__ import annotations

import math
from typing import Mapping

from .cascade import binary_entropy
from .decoy import DecoyBounds


def h2(p: float) -> float:
    """Binary entropy in bits; h2(0) = h2(1) = 0."""
    return binary_entropy(p)


def simplified_rate(qber: float, ec_efficiency: float = 1.0) -> float:
    """Single-photon BB84 rate per sifted bit: 1 - (1 + f) h2(Q)."""
    return 1.0 - (1.0 + ec_efficiency) * h2(min(qber, 0.5))


def single_photon_fraction(bounds: DecoyBounds, gains: Mapping[str, float] | None, mu_signal: float | None) -> float:
    """Lower bound on the share of signal detections caused by single photons."""
    if gains is None:
        return 1.0
    q_mu = gains["signal"]
    if q_mu <= 0:
        return 0.0
    return min(1.0, bounds.y1_lower * mu_signal * math.exp(-mu_signal) / q_mu)


def secret_key_length(
    n_sifted: int,
    qber: float,
    leakage_bits: int,
    bounds: DecoyBounds,
    gains: Mapping[str, float] | None = None,
    mu_signal: float | None = None,
    margin_bits: int = 0,
) -> int:
    """Extractable secret bits from ``n_sifted`` reconciled bits.

    ``floor(n1 (1 - h2(e1_upper)) - max(leakage, n h2(qber)) - margin)``,
    clamped at zero, where ``n1`` is the single-photon share of ``n_sifted``.
    Error correction is charged at least its Shannon limit. Passing
    ``gains=None`` treats every bit as single-photon.
    """
    if bounds.e1_upper >= 0.5 or n_sifted <= 0:
        return 0
    n1 = n_sifted * single_photon_fraction(bounds, gains, mu_signal)
    ec = max(float(leakage_bits), n_sifted * h2(min(max(qber, 0.0), 0.5)))
    return max(0, int(math.floor(n1 * (1.0 - h2(bounds.e1_upper)) - ec - margin_bits)))
