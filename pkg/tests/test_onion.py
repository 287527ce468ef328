import random

import pytest

from conftest import seeded
from swarmmsg import onion
from swarmmsg.crypto import FastCrypto, RealCrypto


def make_nodes(c, n=5):
    keys = {f"n{i}": c.generate_keypair() for i in range(n)}
    return keys, [onion.NodeInfo(k, v.public) for k, v in keys.items()]


def through(c, keys, path, blob):
    """Peel hop by hop; returns the final layer and the return keys seen."""
    seen = []
    for i, hop in enumerate(path.hops):
        layer = onion.peel(c, blob, keys[hop.node_id])
        seen.append(layer.return_key)
        if i < 2:
            assert isinstance(layer, onion.Forward)
            assert layer.next_hop == path.hops[i + 1].address
            blob = layer.inner
    assert isinstance(layer, onion.Final)
    return layer, seen


def test_select_path_seeded():
    infos = [onion.NodeInfo(f"n{i:03d}", bytes(32)) for i in range(100)]
    random.Random(0).shuffle(infos)
    path = onion.select_path(infos, random.Random(2024))
    assert [h.node_id for h in path.hops] == ["n060", "n023", "n093"]


def test_path_rules():
    a = onion.NodeInfo("a", bytes(32))
    b = onion.NodeInfo("b", bytes(32))
    with pytest.raises(onion.PathError):
        onion.Path((a, a, b))
    with pytest.raises(onion.PathError):
        onion.select_path([a, b], random.Random(1))


@pytest.mark.parametrize("size", [1, 100, 1023, 1024, 4000, 16384, 40000, 64 * 1024])
def test_three_layer_roundtrip(size):
    c = seeded(RealCrypto, size)
    keys, infos = make_nodes(c)
    path = onion.select_path(infos, random.Random(size))
    req = bytes(random.Random(size).randbytes(size))
    dest = b"\x05" + b"\xdd" * 32
    o = onion.wrap(c, path, dest, req)
    final, seen = through(c, keys, path, o.blob)
    assert (final.destination, final.request) == (dest, req)
    assert seen == list(o.return_keys)
    assert onion.respond(c, o, final, seen, b"reply:" + req[:10]) == b"reply:" + req[:10]


def test_oversize_request_refused(any_crypto):
    _, infos = make_nodes(any_crypto)
    path = onion.Path(tuple(infos[:3]))
    with pytest.raises(onion.OnionError):
        onion.wrap(any_crypto, path, b"d", bytes(64 * 1024 + 1))


def test_wrong_key_cannot_peel(any_crypto):
    keys, infos = make_nodes(any_crypto)
    path = onion.Path(tuple(infos[:3]))
    o = onion.wrap(any_crypto, path, b"dest", b"req")
    for wrong in ("n1", "n2", "n4"):
        with pytest.raises(onion.OnionError):
            onion.peel(any_crypto, o.blob, keys[wrong])
    with pytest.raises(onion.MalformedLayer):
        onion.peel(any_crypto, o.blob[:10], keys["n0"])


def test_layer_sizes_hide_request_length(any_crypto):
    _, infos = make_nodes(any_crypto)
    path = onion.Path(tuple(infos[:3]))
    sizes = {len(onion.wrap(any_crypto, path, b"d", bytes(n)).blob) for n in (1, 10, 500, 900)}
    assert len(sizes) == 1


def test_guard_and_middle_learn_only_next_hop():
    c = seeded(FastCrypto)
    keys, infos = make_nodes(c)
    path = onion.Path(tuple(infos[:3]))
    dest = b"\x05" + b"\xee" * 32
    o = onion.wrap(c, path, dest, b"secret-request")
    g = onion.peel(c, o.blob, keys["n0"])
    assert dest not in g.next_hop + g.inner and b"secret-request" not in g.inner
    m = onion.peel(c, g.inner, keys["n1"])
    assert dest not in m.next_hop + m.inner


def test_tampered_response_fails():
    c = seeded(RealCrypto)
    keys, infos = make_nodes(c)
    path = onion.Path(tuple(infos[:3]))
    o = onion.wrap(c, path, b"d", b"r")
    final, seen = through(c, keys, path, o.blob)
    blob = onion.seal_reply(c, final.reply_key, b"ok")
    for k in reversed(seen):
        blob = onion.reverse_wrap(c, k, blob)
    assert onion.unwrap_response(c, o, blob) == b"ok"
    bad = bytearray(blob)
    bad[-1] ^= 1
    with pytest.raises(Exception):
        onion.unwrap_response(c, o, bytes(bad))
