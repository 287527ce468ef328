import hashlib
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_mine, double_sha_head
from swarmmsg import pow as pow_
from swarmmsg.core import Envelope, serialize_envelope

ABC = b"abc"

# (threshold, start nonce) -> (nonce, first 8 bytes of the hash)
GOLDEN = [
    (2**60, 0, 0, 0x0C0311FC532156EE),
    (2**60, 1, 5, 0x0B08FDC2CB977570),
    (2**56, 0, 311, 0x00C09F42F1827D06),
    (2**52, 0, 4036, 0x0009C3B1EAF4B709),
]


@pytest.mark.parametrize("threshold,start,nonce,head", GOLDEN)
def test_golden_mine(threshold, start, nonce, head):
    res = pow_.mine(ABC, threshold, start)
    assert (res.nonce, res.hash_head) == (nonce, head)
    assert res.attempts == nonce - start + 1


@pytest.mark.parametrize("threshold,start,nonce,head", GOLDEN)
def test_golden_verify_roundtrip(threshold, start, nonce, head):
    digest = hashlib.sha512(ABC).digest()
    assert pow_.hash_head(digest, nonce) == head < threshold
    # every skipped nonce really was over the threshold
    assert all(pow_.hash_head(digest, n) >= threshold for n in range(start, nonce))


def test_golden_matches_independent_oracle():
    for threshold, start, nonce, head in GOLDEN:
        assert brute_mine(ABC, threshold, start) == nonce
        assert double_sha_head(ABC, nonce) == head


def test_threshold_examples():
    assert pow_.compute_threshold(10, 0, 100) == 18446744073709551
    # (2^64-1) / (1 * (100 + 65535*100/65535)) = (2^64-1) / 200
    assert pow_.compute_threshold(1, 65535, 100) == 92233720368547758
    assert pow_.compute_threshold(1, 0, 1) == 2**64 - 1


def test_threshold_monotone_grid():
    ds = [1, 2, 3, 5, 8, 13, 21, 34, 55, 89]
    ttls = [0, 1, 60, 3600, 7200, 36000, 86400, 172800, 300000, 345600]
    lens = [1, 2, 10, 50, 100, 500, 1000, 5000, 20000, 65536]
    violations = 0
    for i, d in enumerate(ds):
        for j, t in enumerate(ttls):
            for k, n in enumerate(lens):
                here = pow_.compute_threshold(d, t, n)
                for nd, nt, nn in ((i + 1, j, k), (i, j + 1, k), (i, j, k + 1)):
                    if nd < 10 and nt < 10 and nn < 10:
                        there = pow_.compute_threshold(ds[nd], ttls[nt], lens[nn])
                        violations += there > here
    assert violations == 0


def test_threshold_rejects_bad_inputs():
    for args in ((0, 0, 1), (1, 0, 0), (1, 97 * 3600, 1)):
        with pytest.raises(ValueError):
            pow_.compute_threshold(*args)


def env(**kw):
    base = dict(recipient=b"\x07" * 32, ttl=3600, timestamp=1_000, ciphertext=b"hello")
    base.update(kw)
    return Envelope(**base)


def test_ttl_boundary():
    ok = pow_.mine_envelope(env(ttl=96 * 3600), 1)
    assert pow_.verify(ok, 1, 1_000)
    over = Envelope(ok.recipient, 97 * 3600, ok.timestamp, ok.ciphertext, ok.nonce)
    v = pow_.verify(over, 1, 1_000)
    assert not v and v.reason == "ttl-exceeded"


@settings(max_examples=15, deadline=None)
@given(st.binary(min_size=1, max_size=64), st.integers(0, 96 * 3600), st.integers(1, 4))
def test_mine_verify_roundtrip(body, ttl, difficulty):
    e = pow_.mine_envelope(env(ciphertext=body, ttl=ttl), difficulty)
    v = pow_.verify(e, difficulty, e.timestamp)
    assert v and v.threshold == pow_.compute_threshold(difficulty, ttl, len(body))
    assert v.hash_head == double_sha_head(serialize_envelope(e), e.nonce)


def test_mutation_invalidates():
    e = pow_.mine_envelope(env(ciphertext=b"x" * 2000), 200)
    assert pow_.verify(e, 200)
    for changed in (
        Envelope(e.recipient, e.ttl, e.timestamp, b"y" + e.ciphertext[1:], e.nonce),
        Envelope(e.recipient, e.ttl, e.timestamp + 1, e.ciphertext, e.nonce),
        Envelope(b"\x08" * 32, e.ttl, e.timestamp, e.ciphertext, e.nonce),
    ):
        v = pow_.verify(changed, 200)
        assert v.hash_head == double_sha_head(serialize_envelope(changed), e.nonce)
        assert bool(v) == (v.hash_head < v.threshold)
    assert not all(pow_.verify(Envelope(e.recipient, e.ttl, e.timestamp, e.ciphertext, e.nonce + i), 200)
                   for i in range(1, 20))


def test_rejection_reports_current_difficulty():
    e = pow_.mine_envelope(env(), 1)
    v = pow_.verify(e, 10**9)
    assert not v and v.reason == "pow-invalid" and v.difficulty == 10**9


def test_timestamp_skew():
    e = pow_.mine_envelope(env(timestamp=10**9), 1)
    assert pow_.verify(e, 1, 10**9 + pow_.CLOCK_SKEW_MS)
    assert pow_.verify(e, 1, 10**9 + pow_.CLOCK_SKEW_MS + 1).reason == "timestamp-skew"


def test_exhaustion():
    with pytest.raises(pow_.PowExhausted) as info:
        pow_.mine(ABC, 1, max_attempts=5)
    assert info.value.attempts == 5 and info.value.next_nonce == 5


def test_build_payload_matches_layout():
    p = pow_.build_payload(1, 2, bytes(32), b"z")
    assert p == struct.pack(">QQ", 1, 2) + b"\x05" + bytes(32) + b"z"
