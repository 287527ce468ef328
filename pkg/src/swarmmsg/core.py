"""Shared domain types: keys and addresses, the envelope wire form,
recovery phrases and the simulation clock.

Envelope payload layout (all integers big-endian)::

    offset  size  field
    0       8     ttl (seconds)
    8       8     timestamp (ms since epoch)
    16      33    recipient address bytes (0x05 || 32 key bytes)
    49      L     ciphertext, L >= 1

The nonce is not part of the payload; it travels next to it (see
``pack_store_request``).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

ADDRESS_VERSION = 0x05
KEY_BYTES = 32
ADDRESS_BYTES = KEY_BYTES + 1
MAX_TTL_S = 96 * 3600
HEADER_BYTES = 8 + 8 + ADDRESS_BYTES
U64_MAX = 2**64 - 1


class EnvelopeError(ValueError):
    pass


class AddressError(ValueError):
    pass


class MnemonicError(ValueError):
    pass


def encode_pubkey(key: bytes) -> str:
    """Return the 66-character hex address for a 32-byte public key."""
    if len(key) != KEY_BYTES:
        raise AddressError(f"expected {KEY_BYTES} key bytes, got {len(key)}")
    return f"{ADDRESS_VERSION:02x}" + key.hex()


def decode_pubkey(address: str) -> bytes:
    if len(address) != 2 * ADDRESS_BYTES:
        raise AddressError(f"address must be {2 * ADDRESS_BYTES} hex chars")
    try:
        raw = bytes.fromhex(address)
    except ValueError as exc:
        raise AddressError("invalid hex in address") from exc
    if raw[0] != ADDRESS_VERSION:
        raise AddressError(f"unknown address version 0x{raw[0]:02x}")
    return raw[1:]


@dataclass(frozen=True)
class Envelope:
    recipient: bytes  # 32 raw key bytes
    ttl: int  # seconds
    timestamp: int  # ms
    ciphertext: bytes
    nonce: int = 0

    def __post_init__(self):
        if len(self.recipient) != KEY_BYTES:
            raise EnvelopeError("recipient must be 32 bytes")
        # the 96 h ttl cap is enforced by parse/verify/store, not here, so
        # that an over-cap envelope can still be built and rejected
        for name in ("ttl", "timestamp", "nonce"):
            if not 0 <= getattr(self, name) <= U64_MAX:
                raise EnvelopeError(f"{name} must fit in u64")
        if not self.ciphertext:
            raise EnvelopeError("ciphertext must be non-empty")

    @property
    def expiry(self) -> int:
        return self.timestamp + self.ttl * 1000


def serialize_envelope(env: Envelope) -> bytes:
    return (
        struct.pack(">QQ", env.ttl, env.timestamp)
        + bytes([ADDRESS_VERSION])
        + env.recipient
        + env.ciphertext
    )


def parse_envelope(data: bytes, nonce: int = 0) -> Envelope:
    if len(data) < HEADER_BYTES:
        raise EnvelopeError(f"truncated envelope: {len(data)} < {HEADER_BYTES} bytes")
    ttl, timestamp = struct.unpack_from(">QQ", data)
    if ttl > MAX_TTL_S:
        raise EnvelopeError(f"ttl {ttl} over cap {MAX_TTL_S}")
    if data[16] != ADDRESS_VERSION:
        raise EnvelopeError(f"unknown address version 0x{data[16]:02x}")
    recipient = data[17:HEADER_BYTES]
    return Envelope(recipient, ttl, timestamp, data[HEADER_BYTES:], nonce)


def pack_store_request(env: Envelope) -> bytes:
    """nonce u64 || payload; the form used on the simulated wire."""
    return struct.pack(">Q", env.nonce) + serialize_envelope(env)


def unpack_store_request(data: bytes) -> Envelope:
    if len(data) < 8:
        raise EnvelopeError("truncated store request")
    (nonce,) = struct.unpack_from(">Q", data)
    return parse_envelope(data[8:], nonce)


def record_hash(env: Envelope) -> bytes:
    return hashlib.sha512(serialize_envelope(env)).digest()[:32]


# -- recovery phrases ---------------------------------------------------------

PHRASE_DATA_WORDS = 24  # 24 * 11 = 264 bits, key sits in the low 256


@lru_cache(maxsize=1)
def wordlist() -> tuple[str, ...]:
    text = resources.files("swarmmsg").joinpath("wordlist_en.txt").read_text()
    words = tuple(text.split())
    assert len(words) == 2048
    return words


@lru_cache(maxsize=1)
def _word_index() -> dict[str, int]:
    return {w: i for i, w in enumerate(wordlist())}


def _checksum_index(key: bytes) -> int:
    return int.from_bytes(hashlib.sha512(key).digest()[:2], "big") % 2048


def mnemonic_encode(private_key: bytes) -> list[str]:
    if len(private_key) != KEY_BYTES:
        raise MnemonicError("private key must be 32 bytes")
    words = wordlist()
    value = int.from_bytes(private_key, "big")
    out = [words[(value >> (11 * i)) & 0x7FF] for i in reversed(range(PHRASE_DATA_WORDS))]
    out.append(words[_checksum_index(private_key)])
    return out


def mnemonic_decode(phrase: list[str] | str) -> bytes:
    if isinstance(phrase, str):
        phrase = phrase.split()
    if len(phrase) != PHRASE_DATA_WORDS + 1:
        raise MnemonicError(f"expected {PHRASE_DATA_WORDS + 1} words, got {len(phrase)}")
    index = _word_index()
    value = 0
    for word in phrase[:-1]:
        try:
            value = (value << 11) | index[word.lower()]
        except KeyError:
            raise MnemonicError(f"unknown word {word!r}") from None
    if value >> (8 * KEY_BYTES):
        raise MnemonicError("phrase encodes more than 256 bits")
    key = value.to_bytes(KEY_BYTES, "big")
    if phrase[-1].lower() not in index:
        raise MnemonicError(f"unknown word {phrase[-1]!r}")
    if index[phrase[-1].lower()] != _checksum_index(key):
        raise MnemonicError("checksum word mismatch")
    return key


class Clock:
    """Monotone millisecond clock driven by the simulator."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    def now(self) -> int:
        return self._now

    def advance(self, dt_ms: int) -> int:
        if dt_ms < 0:
            raise ValueError("clock cannot move backwards")
        self._now += dt_ms
        return self._now

    def set(self, t_ms: int) -> None:
        if t_ms < self._now:
            raise ValueError("clock cannot move backwards")
        self._now = t_ms
