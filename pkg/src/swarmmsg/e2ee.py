"""X3DH key agreement, the double ratchet and friend requests.

Wire message: ``counter u32 BE || ratchet_pub 32 || AEAD(mk, plaintext, aad=header)``.

Everything a client sends to another client is wrapped in a sealed frame
for the recipient's long-term key::

    seal_to(recipient, kind u8 || sender_pub 32 || body)
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field

from .crypto import KEY_SIZE, CryptoProvider, DecryptionError, KeyPair

SKIP_WINDOW = 32
MAX_SKIPPED = 4 * SKIP_WINDOW
MAX_RETIRED = 64
MAX_INTRO = 1024
HEADER = struct.Struct(">I32s")

FRAME_FRIEND_REQUEST = 1
FRAME_SESSION_INIT = 2
FRAME_MESSAGE = 3


class SessionError(Exception):
    pass


class BadSignature(SessionError):
    pass


class OneTimeKeyReused(SessionError):
    pass


class NoSession(SessionError):
    """A message frame from a peer we have no session with (yet)."""


class ReplayError(SessionError):
    pass


# -- prekeys ------------------------------------------------------------------


@dataclass(frozen=True)
class PrekeyBundle:
    identity: bytes
    identity_signing: bytes
    signed_prekey: bytes
    signature: bytes
    one_time_prekey: bytes
    otk_id: int

    _layout = struct.Struct(">32s32s32s64s32sI")

    def to_bytes(self) -> bytes:
        return self._layout.pack(self.identity, self.identity_signing, self.signed_prekey,
                                 self.signature, self.one_time_prekey, self.otk_id)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PrekeyBundle":
        if len(data) != cls._layout.size:
            raise SessionError("bad prekey bundle length")
        return cls(*cls._layout.unpack(data))


@dataclass
class PrekeySecrets:
    signed_prekey: KeyPair
    one_time: dict[int, KeyPair] = field(default_factory=dict)

    def consume(self, otk_id: int) -> KeyPair:
        try:
            return self.one_time.pop(otk_id)
        except KeyError:
            raise OneTimeKeyReused(f"one-time prekey {otk_id} unknown or already used") from None


def _signed_message(identity_pub: bytes, signed_prekey_pub: bytes) -> bytes:
    return b"signed-prekey" + identity_pub + signed_prekey_pub


def make_bundle(crypto: CryptoProvider, identity: KeyPair,
                secrets: PrekeySecrets | None = None) -> tuple[PrekeyBundle, PrekeySecrets]:
    """Publishable bundle plus the private halves.  Passing ``secrets``
    reuses its signed prekey and adds a fresh one-time key to it."""
    if secrets is None:
        secrets = PrekeySecrets(crypto.generate_keypair())
    otk = crypto.generate_keypair()
    otk_id = int.from_bytes(crypto.random_bytes(4), "big")
    while otk_id in secrets.one_time:
        otk_id = (otk_id + 1) % 2**32
    secrets.one_time[otk_id] = otk
    spk = secrets.signed_prekey.public
    bundle = PrekeyBundle(
        identity.public,
        crypto.signing_public_key(identity.private),
        spk,
        crypto.sign(identity.private, _signed_message(identity.public, spk)),
        otk.public,
        otk_id,
    )
    return bundle, secrets


def verify_bundle(crypto: CryptoProvider, bundle: PrekeyBundle) -> bool:
    return crypto.verify(bundle.identity_signing,
                         _signed_message(bundle.identity, bundle.signed_prekey), bundle.signature)


@dataclass(frozen=True)
class X3DHResult:
    key: bytes
    ephemeral_public: bytes
    otk_id: int


def _x3dh_kdf(crypto: CryptoProvider, dh1: bytes, dh2: bytes, dh3: bytes, dh4: bytes) -> bytes:
    return crypto.kdf(dh1 + dh2 + dh3 + dh4, b"x3dh")


def x3dh_initiate(crypto: CryptoProvider, identity: KeyPair, bundle: PrekeyBundle,
                  ephemeral: KeyPair | None = None) -> X3DHResult:
    if not verify_bundle(crypto, bundle):
        raise BadSignature("signed prekey signature does not verify")
    ek = ephemeral or crypto.generate_keypair()
    key = _x3dh_kdf(
        crypto,
        crypto.dh(identity.private, bundle.signed_prekey),
        crypto.dh(ek.private, bundle.identity),
        crypto.dh(ek.private, bundle.signed_prekey),
        crypto.dh(ek.private, bundle.one_time_prekey),
    )
    return X3DHResult(key, ek.public, bundle.otk_id)


def x3dh_respond(crypto: CryptoProvider, identity: KeyPair, secrets: PrekeySecrets,
                 otk_id: int, initiator_identity: bytes, initiator_ephemeral: bytes) -> bytes:
    otk = secrets.consume(otk_id)
    spk = secrets.signed_prekey
    return _x3dh_kdf(
        crypto,
        crypto.dh(spk.private, initiator_identity),
        crypto.dh(identity.private, initiator_ephemeral),
        crypto.dh(spk.private, initiator_ephemeral),
        crypto.dh(otk.private, initiator_ephemeral),
    )


# -- ratchet ------------------------------------------------------------------


def ratchet_next(crypto: CryptoProvider, chain_key: bytes, dh_param: bytes) -> tuple[bytes, bytes]:
    """(next chain key, message key) from the current chain key."""
    if len(chain_key) != KEY_SIZE:
        raise ValueError("chain key must be 32 bytes")
    material = chain_key + dh_param
    return crypto.kdf(material, b"chain"), crypto.kdf(material, b"msg")


def _root_step(crypto: CryptoProvider, root: bytes, dh_out: bytes) -> tuple[bytes, bytes]:
    return crypto.kdf(root + dh_out, b"root"), crypto.kdf(root + dh_out, b"root-chain")


class Session:
    """Double ratchet state for one conversation.  Single writer."""

    def __init__(self, crypto: CryptoProvider, root_key: bytes, dh_self: KeyPair,
                 dh_remote: bytes | None = None):
        self.crypto = crypto
        self.root_key = root_key
        self.dh_self = dh_self
        self.dh_remote = dh_remote
        self.ck_s: bytes | None = None
        self.ck_r: bytes | None = None
        self.n_s = 0
        self.n_r = 0
        self.skipped: OrderedDict[tuple[bytes, int], bytes] = OrderedDict()
        self.retired: OrderedDict[bytes, None] = OrderedDict()  # earlier remote ratchet keys

    @classmethod
    def initiator(cls, crypto: CryptoProvider, key: bytes, remote_ratchet: bytes) -> "Session":
        s = cls(crypto, key, crypto.generate_keypair(), remote_ratchet)
        s.root_key, s.ck_s = _root_step(crypto, key, crypto.dh(s.dh_self.private, remote_ratchet))
        return s

    @classmethod
    def responder(cls, crypto: CryptoProvider, key: bytes, own_ratchet: KeyPair) -> "Session":
        return cls(crypto, key, own_ratchet)

    @property
    def can_send(self) -> bool:
        return self.ck_s is not None

    def encrypt(self, plaintext: bytes) -> bytes:
        if self.ck_s is None:
            raise SessionError("no sending chain yet; wait for the peer's first message")
        self.ck_s, mk = ratchet_next(self.crypto, self.ck_s, self.dh_self.public)
        header = HEADER.pack(self.n_s, self.dh_self.public)
        self.n_s += 1
        return header + self.crypto.aead_seal(mk, plaintext, header)

    def _snapshot(self):
        return (self.root_key, self.dh_self, self.dh_remote, self.ck_s, self.ck_r,
                self.n_s, self.n_r, OrderedDict(self.skipped), OrderedDict(self.retired))

    def _restore(self, snap) -> None:
        (self.root_key, self.dh_self, self.dh_remote, self.ck_s, self.ck_r,
         self.n_s, self.n_r, self.skipped, self.retired) = snap

    def _stash(self, until: int) -> None:
        while self.n_r < until:
            self.ck_r, mk = ratchet_next(self.crypto, self.ck_r, self.dh_remote)
            self.skipped[(self.dh_remote, self.n_r)] = mk
            self.n_r += 1
        while len(self.skipped) > MAX_SKIPPED:
            self.skipped.popitem(last=False)

    def decrypt(self, wire: bytes) -> bytes:
        if len(wire) < HEADER.size:
            raise DecryptionError("message too short")
        header = wire[: HEADER.size]
        counter, pub = HEADER.unpack(header)
        body = wire[HEADER.size :]

        mk = self.skipped.pop((pub, counter), None)
        if mk is not None:
            return self.crypto.aead_open(mk, body, header)

        if pub in self.retired:
            raise ReplayError("message from a retired chain already received or key discarded")
        snap = self._snapshot()
        try:
            if pub != self.dh_remote:
                if self.dh_remote is not None:
                    self.retired[self.dh_remote] = None
                    while len(self.retired) > MAX_RETIRED:
                        self.retired.popitem(last=False)
                if self.ck_r is not None:
                    # the peer's old chain may still have messages in flight
                    self._stash(self.n_r + SKIP_WINDOW)
                self.dh_remote = pub
                self.root_key, self.ck_r = _root_step(
                    self.crypto, self.root_key, self.crypto.dh(self.dh_self.private, pub))
                self.n_r = 0
                self.dh_self = self.crypto.generate_keypair()
                self.root_key, self.ck_s = _root_step(
                    self.crypto, self.root_key, self.crypto.dh(self.dh_self.private, pub))
                self.n_s = 0
            if self.ck_r is None:
                raise SessionError("no receiving chain")
            if counter < self.n_r:
                raise ReplayError(f"message {counter} already received or key discarded")
            if counter - self.n_r > SKIP_WINDOW:
                raise SessionError(f"message {counter} is beyond the skip window")
            self._stash(counter)
            self.ck_r, mk = ratchet_next(self.crypto, self.ck_r, pub)
            self.n_r += 1
            return self.crypto.aead_open(mk, body, header)
        except Exception:
            self._restore(snap)
            raise


# -- frames and friend requests -----------------------------------------------


def seal_frame(crypto: CryptoProvider, recipient: bytes, kind: int, sender: bytes, body: bytes) -> bytes:
    return crypto.seal_to(recipient, bytes([kind]) + sender + body, b"frame")


def open_frame(crypto: CryptoProvider, identity: KeyPair, blob: bytes) -> tuple[int, bytes, bytes]:
    plain = crypto.open_sealed(identity, blob, b"frame")
    if len(plain) < 1 + KEY_SIZE:
        raise DecryptionError("frame too short")
    return plain[0], plain[1 : 1 + KEY_SIZE], plain[1 + KEY_SIZE :]


@dataclass(frozen=True)
class FriendRequest:
    sender: bytes
    display_name: str
    intro: str
    bundle: PrekeyBundle

    def to_bytes(self) -> bytes:
        name = self.display_name.encode()
        intro = self.intro.encode()
        return (struct.pack(">H", len(name)) + name + struct.pack(">H", len(intro)) + intro
                + self.bundle.to_bytes())

    @classmethod
    def from_bytes(cls, sender: bytes, data: bytes) -> "FriendRequest":
        try:
            (n,) = struct.unpack_from(">H", data)
            name = data[2 : 2 + n].decode()
            (m,) = struct.unpack_from(">H", data, 2 + n)
            intro = data[4 + n : 4 + n + m].decode()
            bundle = PrekeyBundle.from_bytes(data[4 + n + m :])
        except (struct.error, UnicodeDecodeError) as exc:
            raise SessionError("malformed friend request") from exc
        return cls(sender, name, intro, bundle)


_INIT = struct.Struct(">32sI")


@dataclass
class Received:
    kind: str  # friend_request | session_started | message
    peer: bytes
    plaintext: bytes = b""
    request: FriendRequest | None = None


class Account:
    """A user: long-term identity, pending friend requests and sessions."""

    def __init__(self, crypto: CryptoProvider, identity: KeyPair | None = None,
                 display_name: str = ""):
        self.crypto = crypto
        self.identity = identity or crypto.generate_keypair()
        self.display_name = display_name
        self.pending: dict[bytes, PrekeySecrets] = {}
        self.sessions: dict[bytes, Session] = {}

    @property
    def pubkey(self) -> bytes:
        return self.identity.public

    def create_friend_request(self, peer: bytes, intro: str) -> bytes:
        """Sealed friend request; supersedes any earlier pending one to ``peer``."""
        if len(intro.encode()) > MAX_INTRO:
            raise SessionError(f"introduction exceeds {MAX_INTRO} bytes")
        bundle, secrets = make_bundle(self.crypto, self.identity)
        self.pending[peer] = secrets  # drops the previous OTK, if any
        fr = FriendRequest(self.pubkey, self.display_name, intro, bundle)
        return seal_frame(self.crypto, peer, FRAME_FRIEND_REQUEST, self.pubkey, fr.to_bytes())

    def accept(self, request: FriendRequest, first_message: bytes = b"") -> bytes:
        """Start a session from the request's bundle; returns the sealed
        init frame that carries ``first_message`` to the requester."""
        if request.bundle.identity != request.sender:
            raise SessionError("bundle identity does not match the sender")
        x = x3dh_initiate(self.crypto, self.identity, request.bundle)
        session = Session.initiator(self.crypto, x.key, request.bundle.signed_prekey)
        wire = session.encrypt(first_message)
        self.sessions[request.sender] = session
        self.pending.pop(request.sender, None)
        body = _INIT.pack(x.ephemeral_public, x.otk_id) + wire
        return seal_frame(self.crypto, request.sender, FRAME_SESSION_INIT, self.pubkey, body)

    def encrypt(self, peer: bytes, plaintext: bytes) -> bytes:
        try:
            session = self.sessions[peer]
        except KeyError:
            raise SessionError("no session with this peer") from None
        return seal_frame(self.crypto, peer, FRAME_MESSAGE, self.pubkey, session.encrypt(plaintext))

    def receive(self, blob: bytes) -> Received:
        kind, sender, body = open_frame(self.crypto, self.identity, blob)
        if kind == FRAME_FRIEND_REQUEST:
            request = FriendRequest.from_bytes(sender, body)
            if request.bundle.identity != sender or not verify_bundle(self.crypto, request.bundle):
                raise BadSignature("friend request bundle does not verify")
            return Received("friend_request", sender, request=request)
        if kind == FRAME_SESSION_INIT:
            secrets = self.pending.get(sender)
            if secrets is None:
                raise SessionError("no pending friend request for this peer")
            ek, otk_id = _INIT.unpack_from(body)
            otk = secrets.one_time.get(otk_id)
            key = x3dh_respond(self.crypto, self.identity, secrets, otk_id, sender, ek)
            session = Session.responder(self.crypto, key, secrets.signed_prekey)
            try:
                plaintext = session.decrypt(body[_INIT.size :])
            except Exception:
                if otk is not None:
                    secrets.one_time[otk_id] = otk
                raise
            self.sessions[sender] = session
            del self.pending[sender]
            return Received("session_started", sender, plaintext)
        if kind == FRAME_MESSAGE:
            session = self.sessions.get(sender)
            if session is None:
                raise NoSession("message from a peer without a session")
            return Received("message", sender, session.decrypt(body))
        raise SessionError(f"unknown frame kind {kind}")
