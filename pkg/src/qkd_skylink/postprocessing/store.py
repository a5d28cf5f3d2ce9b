"""Classical-channel transcript (JSON lines) and the local key store.

Key-store layout, little-endian::

    magic     4 bytes  b"QKEY"
    version   u16      1
    session   u64      session id
    length    u64      key length in bits
    bits      ceil(length / 8) bytes, numpy packbits order (MSB first)
    meta_len  u32
    metadata  meta_len bytes of canonical JSON

No wall-clock time is written, so identical sessions give identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ConfigurationError
from .auth import AuthTag, SharedSecret, authenticate
from .keys import KeyMaterial

KEYSTORE_MAGIC = b"QKEY"
KEYSTORE_VERSION = 1
_KS_HEADER = struct.Struct("<4sHQQ")
_KS_META = struct.Struct("<I")
DIRECTIONS = ("alice->bob", "bob->alice")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class TranscriptEntry:
    direction: str
    type: str
    payload_bytes: int
    leakage_delta: int
    tag_index: int
    tag: int


class Transcript:
    """Ordered log of authenticated classical messages."""

    def __init__(self, secret_alice: SharedSecret, secret_bob: SharedSecret | None = None):
        self._secrets = {"alice->bob": secret_alice, "bob->alice": secret_bob or secret_alice}
        self.entries: list[TranscriptEntry] = []

    def send(self, direction: str, kind: str, payload: bytes, leakage_delta: int = 0) -> AuthTag:
        if direction not in DIRECTIONS:
            raise ConfigurationError(f"unknown direction {direction!r}")
        tag = authenticate(payload, self._secrets[direction])
        self.entries.append(TranscriptEntry(direction, kind, len(payload), int(leakage_delta), tag.mask_index, tag.value))
        return tag

    @property
    def leakage_bits(self) -> int:
        return sum(e.leakage_delta for e in self.entries)

    def to_bytes(self) -> bytes:
        return "".join(canonical_json(asdict(e)) + "\n" for e in self.entries).encode()

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @staticmethod
    def read(path) -> list[TranscriptEntry]:
        lines = Path(path).read_text().splitlines()
        return [TranscriptEntry(**json.loads(line)) for line in lines if line.strip()]


def keystore_bytes(key: KeyMaterial, session_id: int, metadata: Mapping | None = None) -> bytes:
    meta = canonical_json(dict(metadata or {})).encode()
    return (
        _KS_HEADER.pack(KEYSTORE_MAGIC, KEYSTORE_VERSION, int(session_id), len(key))
        + np.packbits(key.bits).tobytes()
        + _KS_META.pack(len(meta))
        + meta
    )


def parse_keystore(data: bytes):
    """Inverse of :func:`keystore_bytes`: ``(session_id, KeyMaterial, metadata)``."""
    if len(data) < _KS_HEADER.size:
        raise ConfigurationError("key store truncated")
    magic, version, session, length = _KS_HEADER.unpack_from(data)
    if magic != KEYSTORE_MAGIC or version != KEYSTORE_VERSION:
        raise ConfigurationError("not a version-1 key store")
    off = _KS_HEADER.size
    nbytes = (length + 7) // 8
    bits = np.unpackbits(np.frombuffer(data, np.uint8, nbytes, off))[:length]
    off += nbytes
    (mlen,) = _KS_META.unpack_from(data, off)
    meta = json.loads(data[off + _KS_META.size:off + _KS_META.size + mlen])
    return session, KeyMaterial(bits, "final"), meta


def write_keystore(path, key: KeyMaterial, session_id: int, metadata: Mapping | None = None) -> None:
    Path(path).write_bytes(keystore_bytes(key, session_id, metadata))


def read_keystore(path):
    return parse_keystore(Path(path).read_bytes())
