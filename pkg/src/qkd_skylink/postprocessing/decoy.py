"""Vacuum + weak decoy-state bounds on the single-photon yield and error rate.

With signal intensity mu, decoy nu and vacuum class gain Y0::

    Y1 >= mu / (mu nu - nu^2) * (Q_nu e^nu - Q_mu e^mu nu^2/mu^2 - (mu^2 - nu^2)/mu^2 Y0)
    e1 <= (E_nu Q_nu e^nu - Y0 / 2) / (Y1_lower nu)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import ConfigurationError
from ..link import DetectorModel
from ..seeding import make_rng
from ..transmitter import INTENSITY_NAMES, ProtocolParams

NEGATIVE_TOLERANCE = 1e-9


class StatisticsInconsistencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DecoyBounds:
    y1_lower: float
    e1_upper: float
    y0: float


def decoy_bounds(gains: Mapping[str, float], qbers: Mapping[str, float], params: ProtocolParams) -> DecoyBounds:
    """Lower-bound Y1 and upper-bound e1 from per-class gains and error rates."""
    for name in INTENSITY_NAMES:
        if name not in gains or name not in qbers:
            raise ConfigurationError(f"missing statistics for intensity class {name!r}")
    mu, nu, vac = params.mu
    if vac != 0 or not mu > nu > 0:
        raise ConfigurationError("decoy bounds need signal > decoy > vacuum = 0")
    q_mu, q_nu, y0 = float(gains["signal"]), float(gains["decoy"]), float(gains["vacuum"])
    e_nu = float(qbers["decoy"])

    y1 = mu / (mu * nu - nu * nu) * (
        q_nu * math.exp(nu) - q_mu * math.exp(mu) * nu * nu / (mu * mu) - (mu * mu - nu * nu) / (mu * mu) * y0
    )
    if y1 < -NEGATIVE_TOLERANCE:
        warnings.warn(f"single-photon yield bound {y1:.3g} < 0", StatisticsInconsistencyWarning, stacklevel=2)
    y1 = min(1.0, max(0.0, y1))
    if y1 > 0:
        e1 = (e_nu * q_nu * math.exp(nu) - 0.5 * y0) / (y1 * nu)
        if e1 < -NEGATIVE_TOLERANCE:
            warnings.warn(f"single-photon error bound {e1:.3g} < 0", StatisticsInconsistencyWarning, stacklevel=2)
    else:
        e1 = 1.0
    return DecoyBounds(float(y1), float(min(1.0, max(0.0, e1))), float(y0))


def photon_number_pmf(mu: float, n_max: int) -> np.ndarray:
    """Poisson probabilities for 0..n_max-1 with the tail folded into the last entry."""
    k = np.arange(n_max)
    logp = -mu + k * math.log(mu) - np.array([math.lgamma(i + 1) for i in k]) if mu > 0 else None
    p = np.exp(logp) if mu > 0 else np.r_[1.0, np.zeros(n_max - 1)]
    p[-1] += max(0.0, 1.0 - p.sum())
    return p


def outcome_probabilities(n: np.ndarray, p_det: float, det: DetectorModel):
    """Per-photon-number outcome probabilities for a basis-matched slot.

    Returns (silent, only_correct, only_wrong, both) arrays for the detector
    model used by the link: each photon reaches the right detector with
    probability ``p_det (1 - e)``, the wrong one with ``p_det e``, and each
    detector has dark-count probability ``1 - sqrt(1 - dark)``.
    """
    a = p_det * (1.0 - det.error_prob)
    b = p_det * det.error_prob
    quiet = 1.0 - det.branch_dark_prob
    both_quiet = quiet * quiet * (1.0 - a - b) ** n
    right_quiet = quiet * (1.0 - a) ** n
    wrong_quiet = quiet * (1.0 - b) ** n
    only_wrong = right_quiet - both_quiet
    only_right = wrong_quiet - both_quiet
    both = 1.0 - right_quiet - wrong_quiet + both_quiet
    return both_quiet, only_right, only_wrong, both


@dataclass(frozen=True)
class DecoyCounts:
    """Aggregate counts from one run plus the simulator's photon-number truth."""

    gains: dict
    qbers: dict
    y1_true: float
    e1_true: float
    y0_true: float


def simulate_decoy_counts(
    params: ProtocolParams,
    eta_channel: float,
    det: DetectorModel,
    n_pulses: int,
    seed: int,
    n_max: int = 16,
) -> DecoyCounts:
    """Sample per-class detection statistics with photon-number bookkeeping.

    Equivalent in distribution to running ``transmit_and_detect`` on
    ``n_pulses`` quantum frames with constant transmittance and uniform
    bases, but drawn as multinomial/binomial counts so very long runs cost
    nothing.
    """
    rng = make_rng(seed, "decoy_counts")
    p_det = eta_channel * det.efficiency
    p_match = params.basis_probabilities[0] * 0.5 + params.basis_probabilities[1] * 0.5
    per_class = rng.multinomial(int(n_pulses), params.intensity_probabilities)
    n = np.arange(n_max)
    silent, right, wrong, both = outcome_probabilities(n, p_det, det)
    yields = 1.0 - silent

    gains, qbers = {}, {}
    clicks_n = np.zeros(n_max)
    pulses_n = np.zeros(n_max)
    matched_n = np.zeros(n_max)
    errors_n = np.zeros(n_max)
    for name, mu, count in zip(INTENSITY_NAMES, params.mu, per_class):
        counts_n = rng.multinomial(count, photon_number_pmf(mu, n_max))
        matched = rng.binomial(counts_n, p_match)
        mm = rng.binomial(counts_n - matched, yields)
        probs = np.stack([silent, right, wrong, both], axis=1)
        probs = probs / probs.sum(axis=1, keepdims=True)
        outcomes = np.array([rng.multinomial(m, pr) for m, pr in zip(matched, probs)])
        dbl_err = rng.binomial(outcomes[:, 3], 0.5)
        m_clicks = outcomes[:, 1:].sum(axis=1)
        m_err = outcomes[:, 2] + dbl_err
        clicks = mm + m_clicks
        gains[name] = float(clicks.sum() / count) if count else 0.0
        qbers[name] = float(m_err.sum() / m_clicks.sum()) if m_clicks.sum() else 0.0
        clicks_n += clicks
        pulses_n += counts_n
        matched_n += m_clicks
        errors_n += m_err
    y1 = clicks_n[1] / pulses_n[1] if pulses_n[1] else 0.0
    e1 = errors_n[1] / matched_n[1] if matched_n[1] else 0.0
    y0 = clicks_n[0] / pulses_n[0] if pulses_n[0] else 0.0
    return DecoyCounts(gains, qbers, float(y1), float(e1), float(y0))
