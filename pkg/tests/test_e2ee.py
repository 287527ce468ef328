import copy
import random

import pytest

from conftest import seeded
from swarmmsg import e2ee
from swarmmsg.crypto import DecryptionError, FastCrypto, KeyPair, RealCrypto
from swarmmsg.e2ee import (
    Account,
    PrekeyBundle,
    PrekeySecrets,
    ReplayError,
    Session,
    SessionError,
    x3dh_initiate,
    x3dh_respond,
)


def kp(c, b):
    priv = bytes([b]) * 32
    return KeyPair(priv, c.public_key(priv))


def test_x3dh_golden_vector():
    c = RealCrypto()
    ik_a, ek_a, ik_b, spk_b, otk_b = (kp(c, i) for i in range(1, 6))
    bundle = PrekeyBundle(
        ik_b.public,
        c.signing_public_key(ik_b.private),
        spk_b.public,
        c.sign(ik_b.private, b"signed-prekey" + ik_b.public + spk_b.public),
        otk_b.public,
        9,
    )
    x = x3dh_initiate(c, ik_a, bundle, ephemeral=ek_a)
    expect = "90b24ddcffb100988e0de7b7420674e004dfc375f95cb2d53a66bae31f3b4c0a"
    assert x.key.hex() == expect
    back = x3dh_respond(c, ik_b, PrekeySecrets(spk_b, {9: otk_b}), 9, ik_a.public, ek_a.public)
    assert back.hex() == expect


def test_x3dh_agreement_200_instances():
    c = seeded(RealCrypto, 200)
    for _ in range(200):
        alice, bob = c.generate_keypair(), c.generate_keypair()
        bundle, secrets = e2ee.make_bundle(c, bob)
        x = x3dh_initiate(c, alice, bundle)
        assert x3dh_respond(c, bob, secrets, x.otk_id, alice.public, x.ephemeral_public) == x.key


def test_bad_signature_and_otk_reuse(any_crypto):
    c = any_crypto
    alice, bob = c.generate_keypair(), c.generate_keypair()
    bundle, secrets = e2ee.make_bundle(c, bob)
    forged = PrekeyBundle(bundle.identity, bundle.identity_signing, c.generate_keypair().public,
                          bundle.signature, bundle.one_time_prekey, bundle.otk_id)
    with pytest.raises(e2ee.BadSignature):
        x3dh_initiate(c, alice, forged)
    x = x3dh_initiate(c, alice, bundle)
    x3dh_respond(c, bob, secrets, x.otk_id, alice.public, x.ephemeral_public)
    with pytest.raises(e2ee.OneTimeKeyReused):
        x3dh_respond(c, bob, secrets, x.otk_id, alice.public, x.ephemeral_public)


def pair(c):
    """Two accounts with an established session; returns (alice, bob)."""
    alice, bob = Account(c, display_name="alice"), Account(c, display_name="bob")
    fr = bob.receive(alice.create_friend_request(bob.pubkey, "hi"))
    assert fr.kind == "friend_request" and fr.request.intro == "hi"
    started = alice.receive(bob.accept(fr.request, b"first"))
    assert (started.kind, started.plaintext) == ("session_started", b"first")
    return alice, bob


def test_conversation_both_directions(any_crypto):
    alice, bob = pair(any_crypto)
    for i in range(5):
        assert bob.receive(alice.encrypt(bob.pubkey, f"a{i}".encode())).plaintext == f"a{i}".encode()
        assert alice.receive(bob.encrypt(alice.pubkey, f"b{i}".encode())).plaintext == f"b{i}".encode()


def test_out_of_order_and_replay(any_crypto):
    alice, bob = pair(any_crypto)
    wires = [alice.encrypt(bob.pubkey, f"m{i}".encode()) for i in range(6)]
    order = [3, 0, 5, 1, 4, 2]
    got = [bob.receive(wires[i]).plaintext for i in order]
    assert got == [f"m{i}".encode() for i in order]
    for w in wires:
        with pytest.raises(ReplayError):
            bob.receive(w)


def test_replay_from_retired_chain(any_crypto):
    alice, bob = pair(any_crypto)
    old = alice.encrypt(bob.pubkey, b"old")
    bob.receive(old)
    alice.receive(bob.encrypt(alice.pubkey, b"turn"))
    bob.receive(alice.encrypt(bob.pubkey, b"new chain"))
    with pytest.raises(ReplayError):
        bob.receive(old)


def test_forward_secrecy(any_crypto):
    """Once message i has been read its key is gone: state captured after
    that point cannot open i, yet opens everything later."""
    c = any_crypto
    alice, bob = pair(c)
    wires = [alice.encrypt(bob.pubkey, f"m{i}".encode()) for i in range(6)]
    i = 2
    for w in wires[: i + 1]:
        bob.receive(w)
    captured = copy.copy(bob.sessions[alice.pubkey])
    captured.skipped = type(captured.skipped)(captured.skipped)
    captured.retired = type(captured.retired)(captured.retired)
    _, _, body = e2ee.open_frame(c, bob.identity, wires[i])
    with pytest.raises((ReplayError, DecryptionError)):
        captured.decrypt(body)
    # the chain key cannot be walked back to message i's key either
    ck = captured.ck_r
    _, mk_from_ck = e2ee.ratchet_next(c, ck, captured.dh_remote)
    header, sealed = body[: e2ee.HEADER.size], body[e2ee.HEADER.size :]
    with pytest.raises(DecryptionError):
        c.aead_open(mk_from_ck, sealed, header)
    for j in range(i + 1, 6):
        _, _, later = e2ee.open_frame(c, bob.identity, wires[j])
        assert captured.decrypt(later) == f"m{j}".encode()


def test_forged_transcript_is_indistinguishable(any_crypto):
    """Bob alone can fabricate a session opening and messages "from" Alice
    that his own client accepts, so a transcript proves nothing to a third
    party."""
    c = any_crypto
    alice, bob = Account(c), Account(c)
    # Bob publishes a request to Alice; he keeps the secrets
    bob.create_friend_request(alice.pubkey, "hello")
    secrets = bob.pending[alice.pubkey]
    otk_id = next(iter(secrets.one_time))
    # fabricate Alice's X3DH using only Bob's secrets and public values
    fake_ek = c.generate_keypair()
    key = x3dh_respond(c, bob.identity, PrekeySecrets(secrets.signed_prekey, dict(secrets.one_time)),
                       otk_id, alice.pubkey, fake_ek.public)
    fake_alice = Session.initiator(c, key, secrets.signed_prekey.public)
    body = e2ee._INIT.pack(fake_ek.public, otk_id) + fake_alice.encrypt(b"I owe Bob money")
    frame = e2ee.seal_frame(c, bob.pubkey, e2ee.FRAME_SESSION_INIT, alice.pubkey, body)
    got = bob.receive(frame)
    assert (got.kind, got.peer, got.plaintext) == ("session_started", alice.pubkey, b"I owe Bob money")
    # and follow-up messages from the fabricated session are accepted too
    more = e2ee.seal_frame(c, bob.pubkey, e2ee.FRAME_MESSAGE, alice.pubkey, fake_alice.encrypt(b"yes"))
    assert bob.receive(more).plaintext == b"yes"


def test_superseded_request_cannot_start_session(any_crypto):
    c = any_crypto
    alice, bob = Account(c), Account(c)
    first = bob.receive(alice.create_friend_request(bob.pubkey, "one")).request
    second = bob.receive(alice.create_friend_request(bob.pubkey, "two")).request
    with pytest.raises(e2ee.OneTimeKeyReused):
        alice.receive(bob.accept(first))
    assert alice.receive(bob.accept(second)).kind == "session_started"


def test_message_without_session(any_crypto):
    c = any_crypto
    alice, bob = pair(c)
    stranger = Account(c)
    stranger.sessions[bob.pubkey] = alice.sessions[bob.pubkey]
    with pytest.raises(e2ee.NoSession):
        bob.receive(stranger.encrypt(bob.pubkey, b"x"))


def test_intro_limit_and_skip_window(any_crypto):
    c = any_crypto
    alice, bob = pair(c)
    with pytest.raises(SessionError):
        alice.create_friend_request(bob.pubkey, "x" * (e2ee.MAX_INTRO + 1))
    wires = [alice.encrypt(bob.pubkey, b"m") for _ in range(e2ee.SKIP_WINDOW + 2)]
    with pytest.raises(SessionError):
        bob.receive(wires[-1])
    assert bob.receive(wires[0]).plaintext == b"m"  # state unchanged by the failure


def test_tampered_frame_rejected(any_crypto):
    alice, bob = pair(any_crypto)
    w = bytearray(alice.encrypt(bob.pubkey, b"x"))
    w[40] ^= 1
    with pytest.raises(DecryptionError):
        bob.receive(bytes(w))


def test_session_order_shuffled_long_run():
    c = seeded(FastCrypto, 11)
    alice, bob = pair(c)
    rng = random.Random(5)
    for _ in range(10):
        batch = [(i, alice.encrypt(bob.pubkey, b"%d" % i)) for i in range(8)]
        rng.shuffle(batch)
        for i, w in batch:
            assert bob.receive(w).plaintext == b"%d" % i
        alice.receive(bob.encrypt(alice.pubkey, b"ack"))
