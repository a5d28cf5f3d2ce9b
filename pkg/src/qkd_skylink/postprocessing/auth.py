"""Information-theoretic message authentication from pre-shared randomness.

tag = (poly_hash_k(message) + r_i) mod p, with the hash key k taken from the
first 8 bytes of the shared secret and a fresh 8-byte one-time mask r_i per
message. Masks are never reused; running out raises
:class:`KeyDepletionError`.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigurationError, KeyDepletionError
from .polyhash import PRIME64, byte_words, poly_eval

KEY_BYTES = 8
MASK_BYTES = 8
MIN_SECRET_BYTES = KEY_BYTES + MASK_BYTES


@dataclass(frozen=True)
class AuthTag:
    mask_index: int
    value: int


class SharedSecret:
    """Pre-shared bytes; one copy per party, consumed in message order."""

    def __init__(self, secret: bytes):
        if len(secret) < MIN_SECRET_BYTES:
            raise ConfigurationError(f"shared secret needs at least {MIN_SECRET_BYTES} bytes")
        self._secret = bytes(secret)
        self.next_mask = 0

    @property
    def hash_key(self) -> int:
        return int.from_bytes(self._secret[:KEY_BYTES], "little") % PRIME64

    @property
    def masks_available(self) -> int:
        return (len(self._secret) - KEY_BYTES) // MASK_BYTES

    @property
    def remaining(self) -> int:
        return self.masks_available - self.next_mask

    def mask(self, index: int) -> int:
        if not 0 <= index < self.masks_available:
            raise KeyDepletionError(f"authentication mask {index} not available")
        lo = KEY_BYTES + index * MASK_BYTES
        return int.from_bytes(self._secret[lo:lo + MASK_BYTES], "little") % PRIME64

    def take_mask(self) -> int:
        if self.next_mask >= self.masks_available:
            raise KeyDepletionError("authentication secret exhausted")
        i = self.next_mask
        self.next_mask += 1
        return i


def _tag_value(message: bytes, secret: SharedSecret, index: int) -> int:
    return (poly_eval(byte_words(message), secret.hash_key) + secret.mask(index)) % PRIME64


def authenticate(message: bytes, shared_secret: SharedSecret) -> AuthTag:
    """Tag ``message`` with the next unused mask."""
    index = shared_secret.take_mask()
    return AuthTag(index, _tag_value(bytes(message), shared_secret, index))


def verify(message: bytes, tag: AuthTag, shared_secret: SharedSecret) -> bool:
    try:
        return _tag_value(bytes(message), shared_secret, tag.mask_index) == tag.value
    except KeyDepletionError:
        return False
