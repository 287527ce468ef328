"""Crypto provider contract and the two shipped implementations.

``RealCrypto`` uses X25519, SHA-512, HKDF-SHA512, ChaCha20-Poly1305 and
Ed25519 from ``cryptography``.  ``FastCrypto`` swaps the curve for modular
exponentiation and the AEAD for a SHA-512 keystream with an HMAC tag; it
honours the same algebraic contract and is only meant for property tests.

Both draw randomness from an injectable ``random_bytes`` callable so a
seeded simulation produces byte-identical ciphertexts.
"""

from __future__ import annotations

import hashlib
import hmac
import os
from typing import Callable, NamedTuple

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

KEY_SIZE = 32

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw


class DecryptionError(Exception):
    """AEAD authentication failed or the blob is malformed."""


class KeyPair(NamedTuple):
    private: bytes
    public: bytes


def hash512(data: bytes) -> bytes:
    return hashlib.sha512(data).digest()


class CryptoProvider:
    """Abstract contract.  Subclasses implement the primitive operations."""

    name = "abstract"
    nonce_size = 12
    tag_size = 16

    def __init__(self, random_bytes: Callable[[int], bytes] | None = None):
        self.random_bytes = random_bytes or os.urandom

    # -- DH ---------------------------------------------------------------
    def public_key(self, private: bytes) -> bytes:
        raise NotImplementedError

    def dh(self, private: bytes, public: bytes) -> bytes:
        raise NotImplementedError

    def generate_keypair(self) -> KeyPair:
        priv = self.random_bytes(KEY_SIZE)
        return KeyPair(priv, self.public_key(priv))

    # -- signatures (identity signing half, derived from the same seed) ----
    def signing_public_key(self, private: bytes) -> bytes:
        raise NotImplementedError

    def sign(self, private: bytes, message: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, signing_public: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError

    # -- symmetric ---------------------------------------------------------
    def hash512(self, data: bytes) -> bytes:
        return hash512(data)

    def kdf(self, ikm: bytes, label: bytes) -> bytes:
        raise NotImplementedError

    def aead_seal(self, key: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
        raise NotImplementedError

    def aead_open(self, key: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
        raise NotImplementedError

    # -- sealed box: ephemeral-static DH + AEAD -----------------------------
    def seal_to(self, recipient_public: bytes, plaintext: bytes, label: bytes = b"seal") -> bytes:
        eph = self.generate_keypair()
        key = self.kdf(self.dh(eph.private, recipient_public) + eph.public + recipient_public, label)
        return eph.public + self.aead_seal(key, plaintext, eph.public)

    def open_sealed(self, recipient: KeyPair, blob: bytes, label: bytes = b"seal") -> bytes:
        if len(blob) < KEY_SIZE + self.nonce_size + self.tag_size:
            raise DecryptionError("sealed blob too short")
        eph_pub = blob[:KEY_SIZE]
        key = self.kdf(self.dh(recipient.private, eph_pub) + eph_pub + recipient.public, label)
        return self.aead_open(key, blob[KEY_SIZE:], eph_pub)


class RealCrypto(CryptoProvider):
    name = "x25519-chacha20poly1305"

    def public_key(self, private: bytes) -> bytes:
        return X25519PrivateKey.from_private_bytes(private).public_key().public_bytes(_RAW, _RAW_PUB)

    def dh(self, private: bytes, public: bytes) -> bytes:
        priv = X25519PrivateKey.from_private_bytes(private)
        return priv.exchange(X25519PublicKey.from_public_bytes(public))

    def signing_public_key(self, private: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(private).public_key().public_bytes(_RAW, _RAW_PUB)

    def sign(self, private: bytes, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(private).sign(message)

    def verify(self, signing_public: bytes, message: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(signing_public).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True

    def kdf(self, ikm: bytes, label: bytes) -> bytes:
        return HKDF(hashes.SHA512(), KEY_SIZE, salt=None, info=label).derive(ikm)

    def aead_seal(self, key: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
        nonce = self.random_bytes(self.nonce_size)
        return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, aad)

    def aead_open(self, key: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
        if len(ciphertext) < self.nonce_size + self.tag_size:
            raise DecryptionError("ciphertext too short")
        nonce, body = ciphertext[: self.nonce_size], ciphertext[self.nonce_size :]
        try:
            return ChaCha20Poly1305(key).decrypt(nonce, body, aad)
        except InvalidTag as exc:
            raise DecryptionError("authentication failed") from exc


# 2^255 - 19 is prime; exponentiation in its multiplicative group commutes.
_FAKE_P = 2**255 - 19
_FAKE_G = 2


class FastCrypto(CryptoProvider):
    """Test-only provider.  Not secure; keeps the algebra of the real one."""

    name = "fake-modexp"

    def _exp(self, private: bytes) -> int:
        return int.from_bytes(private, "big") | 1

    def public_key(self, private: bytes) -> bytes:
        return pow(_FAKE_G, self._exp(private), _FAKE_P).to_bytes(KEY_SIZE, "big")

    def dh(self, private: bytes, public: bytes) -> bytes:
        shared = pow(int.from_bytes(public, "big"), self._exp(private), _FAKE_P)
        return hashlib.sha256(shared.to_bytes(KEY_SIZE, "big")).digest()

    def signing_public_key(self, private: bytes) -> bytes:
        return hashlib.sha256(b"sig" + private).digest()

    def sign(self, private: bytes, message: bytes) -> bytes:
        return hmac.new(self.signing_public_key(private), message, hashlib.sha512).digest()

    def verify(self, signing_public: bytes, message: bytes, signature: bytes) -> bool:
        expected = hmac.new(signing_public, message, hashlib.sha512).digest()
        return hmac.compare_digest(expected, signature)

    def kdf(self, ikm: bytes, label: bytes) -> bytes:
        return hmac.new(label, ikm, hashlib.sha512).digest()[:KEY_SIZE]

    def _stream(self, key: bytes, nonce: bytes, n: int) -> bytes:
        out = bytearray()
        counter = 0
        while len(out) < n:
            out += hashlib.sha512(key + nonce + counter.to_bytes(8, "big")).digest()
            counter += 1
        return bytes(out[:n])

    def _tag(self, key: bytes, nonce: bytes, body: bytes, aad: bytes) -> bytes:
        mac = hmac.new(key, b"tag", hashlib.sha512)
        mac.update(len(aad).to_bytes(8, "big") + aad + nonce + body)
        return mac.digest()[: self.tag_size]

    def aead_seal(self, key: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
        nonce = self.random_bytes(self.nonce_size)
        body = bytes(a ^ b for a, b in zip(plaintext, self._stream(key, nonce, len(plaintext))))
        return nonce + body + self._tag(key, nonce, body, aad)

    def aead_open(self, key: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
        if len(ciphertext) < self.nonce_size + self.tag_size:
            raise DecryptionError("ciphertext too short")
        nonce = ciphertext[: self.nonce_size]
        body = ciphertext[self.nonce_size : -self.tag_size]
        tag = ciphertext[-self.tag_size :]
        if not hmac.compare_digest(tag, self._tag(key, nonce, body, aad)):
            raise DecryptionError("authentication failed")
        return bytes(a ^ b for a, b in zip(body, self._stream(key, nonce, len(body))))
