import pytest

from swarmmsg import pow as pow_
from swarmmsg.core import Envelope, record_hash
from swarmmsg.ring import Join, Leave, assign_pubkey, genesis, rebalance
from swarmmsg.storage import (
    NodeStore,
    anti_entropy,
    apply_migration,
    make_record,
    propagate,
    push_all,
)

HOUR_MS = 3_600_000


def env(i=0, recipient=b"\x01" * 32, ttl=3600, ts=0):
    return pow_.mine_envelope(Envelope(recipient, ttl, ts, f"m{i}".encode()), 1)


def test_store_and_duplicate():
    s = NodeStore("a")
    e = env()
    assert s.store(e, 1, 0).status == "stored"
    assert s.store(e, 1, 0).status == "duplicate"
    assert len(s) == 1 and record_hash(e) in s


def test_store_rejections():
    s = NodeStore("a")
    bad_pow = Envelope(b"\x01" * 32, 3600, 0, b"x" * 5000, nonce=0)
    if pow_.verify(bad_pow, 10**6):  # vanishingly unlikely, keep the test honest
        pytest.skip("nonce 0 happened to be valid")
    assert s.store(bad_pow, 10**6, 0).reason == "pow-invalid"
    over = Envelope(b"\x01" * 32, 97 * 3600, 0, b"x")
    assert s.store(over, 1, 0).reason == "ttl-exceeded"
    e = env()
    right = assign_pubkey(e.recipient, [0, 2**63])
    wrong = 2**63 if right == 0 else 0
    out = s.store(e, 1, 0, own_swarm=wrong, ring_ids=[0, 2**63])
    assert (out.status, out.reason, out.swarm) == ("rejected", "wrong-swarm", right)
    assert len(s) == 0


def test_accept_rejects_expired():
    s = NodeStore("a")
    e = env(ttl=1)
    assert s.accept(e, 999).status == "stored"
    assert NodeStore("b").accept(e, 1000).reason == "expired"


def test_propagate_reaches_reachable_peers():
    rec = make_record(env())
    peers = [NodeStore(f"p{i}") for i in range(4)]
    got = propagate(rec, peers, 0, reachable=lambda n: n != "p2")
    assert got == ["p0", "p1", "p3"]
    assert rec.hash not in peers[2]


def test_retrieve_pagination_and_cursor():
    s = NodeStore("a")
    for i in range(7):
        s.accept(env(i), 0)
    s.accept(env(99, recipient=b"\x02" * 32), 0)
    seen, cursor = [], None
    while True:
        page, cursor = s.retrieve(b"\x01" * 32, cursor, 0, limit=3)
        if not page:
            break
        assert len(page) <= 3
        seen += [r.hash for r in page]
    assert seen == sorted(seen) and len(seen) == 7
    assert s.retrieve(b"\x01" * 32, cursor, 0) == ([], cursor)


def test_expire_and_retrieve_hides_expired():
    s = NodeStore("a")
    s.accept(env(1, ttl=1), 0)
    s.accept(env(2, ttl=3600), 0)
    assert len(s.retrieve(b"\x01" * 32, now=1000)[0]) == 1
    assert s.expire(1000) == 1 and len(s) == 1
    assert s.expire(HOUR_MS) == 1 and len(s) == 0


def test_anti_entropy_and_push_all():
    a, b, c = NodeStore("a"), NodeStore("b"), NodeStore("c")
    a.accept(env(1), 0)
    b.accept(env(2), 0)
    assert anti_entropy(a, b, 0) == 2
    assert a.hashes() == b.hashes()
    assert push_all([a, b, c], c, 0) == 2 and c.hashes() == a.hashes()


def test_erase_and_bytes():
    s = NodeStore("a")
    s.accept(env(1), 0)
    assert s.bytes_used() == 2
    assert s.erase() == 1 and len(s) == 0


def _world(n=30):
    reg = genesis([f"n{i:02d}" for i in range(n)], b"g")
    stores = {node: NodeStore(node) for node in reg.nodes()}
    recs = []
    for i in range(120):
        e = env(i, recipient=bytes([i % 251]) * 32)
        for node in reg.members_for_key(e.recipient):
            stores[node].accept(e, 0)
        recs.append(e)
    return reg, stores, recs


def _holders(reg, stores, e):
    return {n for n in reg.members_for_key(e.recipient) if record_hash(e) in stores[n]}


def test_migration_keeps_every_record_on_its_swarm():
    reg, stores, recs = _world()
    rng_nodes = [f"j{i}" for i in range(25)]
    for node in rng_nodes:
        stores[node] = NodeStore(node)
        reg, plan = rebalance(reg, Join(node, node.encode()))
        assert apply_migration(plan, stores, reg.swarms, 0) == []
    for node in [f"n{i:02d}" for i in range(0, 30, 3)]:
        reg, plan = rebalance(reg, Leave(node, node.encode()))
        assert apply_migration(plan, stores, reg.swarms, 0) == []
        del stores[node]
    for e in recs:
        assert _holders(reg, stores, e) == set(reg.members_for_key(e.recipient))


def test_migration_flags_records_without_destination():
    from swarmmsg.ring import Instruction, MigrationPlan

    a = NodeStore("a")
    e = env()
    a.accept(e, 0)
    sid = assign_pubkey(e.recipient, [5])
    plan = MigrationPlan([Instruction("route", ("a",), dest_swarm=sid, ring_ids=(5,))])
    assert [r.hash for r in apply_migration(plan, {"a": a}, {5: []}, 0)] == [record_hash(e)]
