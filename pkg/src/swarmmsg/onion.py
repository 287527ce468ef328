"""Three-hop onion requests.

Each layer is a sealed blob for one hop: ``eph_pub(32) || AEAD(...)`` with
the key derived from DH(eph, hop_pub).  The hop's plaintext is either

    0x01 || next_hop(33-byte address) || inner layer
    0x02 || reply_pub(32) || dest_len u16 || destination || req_len u32 || request || padding

The same DH secret also yields a per-hop ``return_key`` with which the hop
re-encrypts the response on its way back.  The client knows every
return key because it chose every layer's ephemeral key.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence

from .core import ADDRESS_BYTES, ADDRESS_VERSION, KEY_BYTES
from .crypto import CryptoProvider, DecryptionError, KeyPair

MAX_REQUEST = 64 * 1024
PATH_LENGTH = 3
# final-layer plaintext is padded up to one of these sizes
PAD_BUCKETS = (1024, 4096, 16384, MAX_REQUEST + 1024)

_FORWARD = 0x01
_FINAL = 0x02
_LAYER_LABEL = b"onion-layer"
_RETURN_LABEL = b"onion-return"
_REPLY_LABEL = b"onion-reply"


class OnionError(Exception):
    pass


class MalformedLayer(OnionError):
    pass


class PathError(OnionError):
    pass


@dataclass(frozen=True)
class NodeInfo:
    """What a client knows about a service node."""

    node_id: str
    pubkey: bytes

    @property
    def address(self) -> bytes:
        return bytes([ADDRESS_VERSION]) + self.pubkey


@dataclass
class Path:
    hops: tuple[NodeInfo, NodeInfo, NodeInfo]
    established: bool = False

    def __post_init__(self):
        if len(self.hops) != PATH_LENGTH:
            raise PathError("a path has exactly three hops")
        if len({h.node_id for h in self.hops}) != PATH_LENGTH:
            raise PathError("path hops must be distinct")

    @property
    def guard(self) -> NodeInfo:
        return self.hops[0]

    @property
    def exit(self) -> NodeInfo:
        return self.hops[-1]


@dataclass
class Onion:
    """Client-side handle for one wrapped request."""

    blob: bytes
    return_keys: tuple[bytes, ...]  # guard first
    reply: KeyPair = field(repr=False)


@dataclass(frozen=True)
class Forward:
    next_hop: bytes  # 33-byte address
    inner: bytes
    return_key: bytes = field(repr=False)


@dataclass(frozen=True)
class Final:
    destination: bytes
    request: bytes
    reply_key: bytes
    return_key: bytes = field(repr=False)


def select_path(nodes: Sequence[NodeInfo], rng) -> Path:
    if len({n.node_id for n in nodes}) < PATH_LENGTH:
        raise PathError(f"need at least {PATH_LENGTH} distinct nodes, have {len(nodes)}")
    ordered = sorted({n.node_id: n for n in nodes}.values(), key=lambda n: n.node_id)
    return Path(tuple(rng.sample(ordered, PATH_LENGTH)))


def _pad(body: bytes) -> bytes:
    for bucket in PAD_BUCKETS:
        if len(body) <= bucket:
            return body + bytes(bucket - len(body))
    raise OnionError("request exceeds the payload cap")


def _seal_layer(crypto: CryptoProvider, hop_pub: bytes, plaintext: bytes) -> tuple[bytes, bytes]:
    eph = crypto.generate_keypair()
    secret = crypto.dh(eph.private, hop_pub) + eph.public + hop_pub
    key = crypto.kdf(secret, _LAYER_LABEL)
    return_key = crypto.kdf(secret, _RETURN_LABEL)
    return eph.public + crypto.aead_seal(key, plaintext, eph.public), return_key


def wrap(crypto: CryptoProvider, path: Path, destination: bytes, request: bytes,
         reply: KeyPair | None = None) -> Onion:
    """Encrypt ``request`` for the exit, then the middle, then the guard."""
    if len(request) > MAX_REQUEST:
        raise OnionError(f"request of {len(request)} bytes exceeds {MAX_REQUEST}")
    if len(destination) > 0xFFFF:
        raise OnionError("destination too long")
    reply = reply or crypto.generate_keypair()
    final = (
        bytes([_FINAL])
        + reply.public
        + struct.pack(">H", len(destination))
        + destination
        + struct.pack(">I", len(request))
        + request
    )
    blob, rk = _seal_layer(crypto, path.exit.pubkey, _pad(final))
    return_keys = [rk]
    for hop, nxt in ((path.hops[1], path.hops[2]), (path.hops[0], path.hops[1])):
        blob, rk = _seal_layer(crypto, hop.pubkey, bytes([_FORWARD]) + nxt.address + blob)
        return_keys.insert(0, rk)
    return Onion(blob, tuple(return_keys), reply)


def peel(crypto: CryptoProvider, blob: bytes, node: KeyPair) -> Forward | Final:
    if len(blob) < KEY_BYTES + crypto.nonce_size + crypto.tag_size:
        raise MalformedLayer("layer too short")
    eph_pub = blob[:KEY_BYTES]
    secret = crypto.dh(node.private, eph_pub) + eph_pub + node.public
    try:
        plain = crypto.aead_open(crypto.kdf(secret, _LAYER_LABEL), blob[KEY_BYTES:], eph_pub)
    except DecryptionError as exc:
        raise OnionError("layer does not decrypt under this key") from exc
    return_key = crypto.kdf(secret, _RETURN_LABEL)
    kind = plain[0]
    if kind == _FORWARD:
        if len(plain) < 1 + ADDRESS_BYTES:
            raise MalformedLayer("forward layer too short")
        return Forward(plain[1 : 1 + ADDRESS_BYTES], plain[1 + ADDRESS_BYTES :], return_key)
    if kind == _FINAL:
        try:
            reply_key = plain[1 : 1 + KEY_BYTES]
            pos = 1 + KEY_BYTES
            (dlen,) = struct.unpack_from(">H", plain, pos)
            destination = plain[pos + 2 : pos + 2 + dlen]
            pos += 2 + dlen
            (rlen,) = struct.unpack_from(">I", plain, pos)
            request = plain[pos + 4 : pos + 4 + rlen]
        except struct.error as exc:
            raise MalformedLayer("final layer truncated") from exc
        if len(request) != rlen or len(reply_key) != KEY_BYTES:
            raise MalformedLayer("final layer truncated")
        return Final(destination, request, reply_key, return_key)
    raise MalformedLayer(f"unknown layer type 0x{kind:02x}")


def seal_reply(crypto: CryptoProvider, reply_key: bytes, response: bytes) -> bytes:
    """Destination side: encrypt the response for the client's ephemeral key."""
    return crypto.seal_to(reply_key, response, _REPLY_LABEL)


def reverse_wrap(crypto: CryptoProvider, return_key: bytes, blob: bytes) -> bytes:
    """Hop side: add this hop's layer to a response travelling back."""
    return crypto.aead_seal(return_key, blob, b"return")


def unwrap_response(crypto: CryptoProvider, onion: Onion, blob: bytes) -> bytes:
    """Client side: strip guard, middle and exit layers, then open the reply."""
    for key in onion.return_keys:
        blob = crypto.aead_open(key, blob, b"return")
    return crypto.open_sealed(onion.reply, blob, _REPLY_LABEL)


def blob_digest(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()[:16]


def respond(crypto: CryptoProvider, onion: Onion, exit_final: Final,
            return_keys_seen: Sequence[bytes], response: bytes) -> bytes:
    """Run the response path locally (tests and demos).

    ``return_keys_seen`` are the return keys the three hops obtained from
    ``peel``, guard first.  Returns the plaintext the client recovers.
    """
    blob = seal_reply(crypto, exit_final.reply_key, response)
    for key in reversed(return_keys_seen):
        blob = reverse_wrap(crypto, key, blob)
    return unwrap_response(crypto, onion, blob)
