"""Proof-of-work admission for stored messages.

    P         = ttl || timestamp || recipient || ciphertext
    H         = SHA512(SHA512(P) || nonce_u64_be)
    head(H)   = first 8 bytes of H as a big-endian u64
    threshold = floor((2^64 - 1) / (D * (L + ttl * L / (2^16 - 1))))

A nonce is valid iff head(H) < threshold.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from .core import MAX_TTL_S, U64_MAX, Envelope, EnvelopeError, serialize_envelope

DEFAULT_ATTEMPT_CAP = 2**24
CLOCK_SKEW_MS = 10 * 60 * 1000
_TTL_SCALE = 2**16 - 1


class PowExhausted(RuntimeError):
    def __init__(self, attempts: int, next_nonce: int):
        super().__init__(f"no valid nonce after {attempts} attempts")
        self.attempts = attempts
        self.next_nonce = next_nonce


@dataclass(frozen=True)
class PowResult:
    nonce: int
    hash_head: int
    threshold: int
    attempts: int


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str
    difficulty: int
    threshold: int
    hash_head: int

    def __bool__(self):
        return self.accepted


def build_payload(ttl: int, timestamp: int, recipient: bytes, ciphertext: bytes) -> bytes:
    if not ciphertext:
        raise EnvelopeError("ciphertext must be non-empty")
    return serialize_envelope(Envelope(recipient, ttl, timestamp, ciphertext))


def compute_threshold(difficulty: int, ttl: int, length: int) -> int:
    if difficulty < 1:
        raise ValueError("difficulty must be >= 1")
    if length < 1:
        raise ValueError("message length must be >= 1")
    if not 0 <= ttl <= MAX_TTL_S:
        raise ValueError(f"ttl must be in [0, {MAX_TTL_S}]")
    # (2^64-1) / (D * (L + ttl*L/S)) == (2^64-1)*S / (D * L * (S + ttl)), exact
    return (U64_MAX * _TTL_SCALE) // (difficulty * length * (_TTL_SCALE + ttl))


def hash_head(payload_digest: bytes, nonce: int) -> int:
    h = hashlib.sha512(payload_digest + struct.pack(">Q", nonce)).digest()
    return int.from_bytes(h[:8], "big")


def mine(payload: bytes, threshold: int, start_nonce: int = 0,
         max_attempts: int = DEFAULT_ATTEMPT_CAP) -> PowResult:
    """Smallest nonce >= start_nonce whose hash head is below threshold."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    inner = hashlib.sha512(payload).digest()
    base = hashlib.sha512(inner)
    nonce = start_nonce
    for attempt in range(1, max_attempts + 1):
        if nonce > U64_MAX:
            break
        h = base.copy()
        h.update(struct.pack(">Q", nonce))
        head = int.from_bytes(h.digest()[:8], "big")
        if head < threshold:
            return PowResult(nonce, head, threshold, attempt)
        nonce += 1
    raise PowExhausted(nonce - start_nonce, nonce)


def mine_envelope(env: Envelope, difficulty: int, **kwargs) -> Envelope:
    threshold = compute_threshold(difficulty, env.ttl, len(env.ciphertext))
    result = mine(serialize_envelope(env), threshold, **kwargs)
    return Envelope(env.recipient, env.ttl, env.timestamp, env.ciphertext, result.nonce)


def verify(env: Envelope, difficulty: int, now_ms: int | None = None,
           skew_ms: int = CLOCK_SKEW_MS) -> Verdict:
    """Recompute the threshold and hash; rejections carry the current D."""
    length = len(env.ciphertext)
    if env.ttl > MAX_TTL_S:
        return Verdict(False, "ttl-exceeded", difficulty, 0, 0)
    threshold = compute_threshold(difficulty, env.ttl, length)
    head = hash_head(hashlib.sha512(serialize_envelope(env)).digest(), env.nonce)
    if now_ms is not None and abs(now_ms - env.timestamp) > skew_ms:
        return Verdict(False, "timestamp-skew", difficulty, threshold, head)
    if head >= threshold:
        return Verdict(False, "pow-invalid", difficulty, threshold, head)
    return Verdict(True, "ok", difficulty, threshold, head)
