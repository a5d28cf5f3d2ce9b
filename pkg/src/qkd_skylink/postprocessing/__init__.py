"""Classical BB84 post-processing."""

from .auth import AuthTag, SharedSecret, authenticate, verify
from .cascade import CascadeStats, cascade_correct
from .decoy import DecoyBounds, decoy_bounds, simulate_decoy_counts
from .keyrate import h2, secret_key_length, simplified_rate
from .keys import KeyMaterial, estimate_qber, sift
from .privacy import toeplitz_pa

__all__ = [
    "AuthTag", "SharedSecret", "authenticate", "verify", "CascadeStats", "cascade_correct",
    "DecoyBounds", "decoy_bounds", "simulate_decoy_counts", "h2", "secret_key_length",
    "simplified_rate", "KeyMaterial", "estimate_qber", "sift", "toeplitz_pa",
]
