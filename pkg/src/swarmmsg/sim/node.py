"""Simulated service node: onion relay, storage endpoint, listening node
and storage tester."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from .. import onion
from ..audit import GRACE_MS, Answer, Challenge, answer_challenge
from ..core import Envelope, EnvelopeError, pack_store_request, unpack_store_request
from ..crypto import DecryptionError, KeyPair
from ..storage import NodeStore, StoredRecord
from .kernel import Future
from .network import NO_REPLY

if TYPE_CHECKING:
    from .world import World

HONEST = "honest"
CHEATER = "cheater"  # claims to store, stores nothing
DROPPER = "dropper"  # silently drops every packet
OBSERVER = "observer"  # honest, but logs everything it sees

HOP_TIMEOUT_MS = 3_000
RELAY_TTL_MS = 30_000


class NullStore(NodeStore):
    """Store for the cheating profile: every write is discarded."""

    def accept(self, env: Envelope, now: int, origin_swarm: int | None = None):
        from ..storage import StoreOutcome, make_record

        return StoreOutcome("stored", record=make_record(env, origin_swarm))


@dataclass
class Observation:
    node: str
    role: str  # guard | middle | exit | destination
    direction: str  # fwd | back
    prev: str
    next: str
    destination: str
    blob_hash: str
    size: int
    visible: bytes  # plaintext this hop could read

    def line(self) -> str:
        return f"{self.node}, {self.direction}, {self.blob_hash}, {self.size}"


def encode(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


class ServiceNode:
    def __init__(self, world: "World", node_id: str, keys: KeyPair, profile: str = HONEST):
        self.world = world
        self.node_id = node_id
        self.keys = keys
        self.profile = profile
        self.store: NodeStore = NullStore(node_id) if profile == CHEATER else NodeStore(node_id)
        self.relay: dict[bytes, list[tuple[int, bytes]]] = {}
        self.observations: list[Observation] = []
        self.active = True

    @property
    def info(self) -> onion.NodeInfo:
        return onion.NodeInfo(self.node_id, self.keys.public)

    @property
    def crypto(self):
        return self.world.crypto

    # -- dispatch -----------------------------------------------------------
    def handle(self, src: str, body: Any):
        if self.profile == DROPPER or not self.active:
            return NO_REPLY
        op = body[0]
        if op == "onion":
            return self._onion(src, body[1])
        if op == "deliver":
            return self._deliver(src, body[1], body[2])
        if op == "propagate":
            self.store.accept_record(body[1], self.world.now)
            return NO_REPLY
        if op == "test":
            return self._answer_test(body[1])
        if op == "nodes":
            return self.world.node_list_for(self.node_id)
        return NO_REPLY

    def _observe(self, **kw) -> None:
        if self.profile == OBSERVER:
            self.observations.append(Observation(node=self.node_id, **kw))

    def _onion(self, src: str, blob: bytes):
        try:
            layer = onion.peel(self.crypto, blob, self.keys)
        except onion.OnionError:
            return NO_REPLY
        role = "guard" if src in self.world.clients else ("exit" if isinstance(layer, onion.Final) else "middle")
        if isinstance(layer, onion.Forward):
            nxt = self.world.node_by_address(layer.next_hop)
            self._observe(role=role, direction="fwd", prev=src, next=nxt or "?", destination="",
                          blob_hash=onion.blob_digest(blob), size=len(blob),
                          visible=layer.next_hop + layer.inner)
            if nxt is None:
                return NO_REPLY
            downstream = self.world.net.request(self.node_id, nxt, ("onion", layer.inner), HOP_TIMEOUT_MS)
            return self._back(downstream, layer.return_key, role, src, nxt)
        dest = self.world.node_by_address(layer.destination)
        self._observe(role=role, direction="fwd", prev=src, next=dest or "?", destination=dest or "?",
                      blob_hash=onion.blob_digest(blob), size=len(blob),
                      visible=layer.destination + layer.reply_key + layer.request)
        if dest is None:
            return NO_REPLY
        if dest == self.node_id:
            downstream = Future.resolved(self._deliver(self.node_id, layer.reply_key, layer.request))
        else:
            downstream = self.world.net.request(self.node_id, dest, ("deliver", layer.reply_key, layer.request),
                                                HOP_TIMEOUT_MS)
        return self._back(downstream, layer.return_key, role, src, dest)

    def _back(self, downstream: Future, return_key: bytes, role: str, prev: str, nxt: str) -> Future:
        out = Future()

        def done(f: Future):
            if f.error is not None or f.value is NO_REPLY or not self.active:
                out.set_result(NO_REPLY)
                return
            wrapped = onion.reverse_wrap(self.crypto, return_key, f.value)
            self._observe(role=role, direction="back", prev=nxt, next=prev, destination="",
                          blob_hash=onion.blob_digest(wrapped), size=len(wrapped), visible=b"")
            out.set_result(wrapped)

        downstream.add_done_callback(done)
        return out

    def _deliver(self, src: str, reply_key: bytes, sealed: bytes):
        try:
            request = json.loads(self.crypto.open_sealed(self.keys, sealed, b"request"))
        except (DecryptionError, ValueError):
            return NO_REPLY
        response = self.api(request)
        if response is None:
            return NO_REPLY
        return onion.seal_reply(self.crypto, reply_key, encode(response))

    # -- storage API ----------------------------------------------------------
    def api(self, req: dict) -> dict | None:
        w = self.world
        op = req.get("op")
        if op == "path_build":
            return {"ok": True}
        if op == "get_nodes":
            return w.node_list_for(self.node_id)
        if op == "get_swarm":
            pk = bytes.fromhex(req["pk"])
            sid, members = w.swarm_for_key(pk)
            return {"swarm": sid, "members": members}
        if op == "store":
            return self._api_store(req)
        if op == "retrieve":
            pk = bytes.fromhex(req["pk"])
            since = bytes.fromhex(req["since"]) if req.get("since") else None
            page, cursor = self.store.retrieve(pk, since, w.now, req.get("limit"))
            return {"records": [pack_store_request(r.envelope).hex() for r in page],
                    "cursor": cursor.hex() if cursor else None}
        if op == "sync_push":
            box = self.relay.setdefault(bytes.fromhex(req["pk"]), [])
            box.append((w.now, bytes.fromhex(req["blob"])))
            w.record("relay", f"node={self.node_id} queued=1")
            return {"ok": True}
        if op == "sync_pull":
            box = self.relay.pop(bytes.fromhex(req["pk"]), [])
            return {"blobs": [b.hex() for t, b in box if w.now - t <= RELAY_TTL_MS]}
        return {"error": "unknown-op"}

    def _api_store(self, req: dict) -> dict:
        w = self.world
        try:
            env = unpack_store_request(bytes.fromhex(req["data"]))
        except (EnvelopeError, ValueError) as exc:
            return {"status": "rejected", "reason": f"malformed: {exc}"}
        sid = w.registry.swarm_of(self.node_id)
        outcome = self.store.store(env, w.difficulty_for(sid), w.now, sid, w.registry.ids())
        w.record("store", f"node={self.node_id} status={outcome.status} reason={outcome.reason or '-'}")
        if outcome.status == "stored" and outcome.record is not None:
            w.on_record_stored(outcome.record, self.node_id)
            self.propagate(outcome.record)
        return {"status": outcome.status, "reason": outcome.reason,
                "difficulty": outcome.difficulty, "swarm": outcome.swarm}

    def propagate(self, rec: StoredRecord) -> None:
        for peer in self.world.swarm_peers(self.node_id):
            self.world.net.send(self.node_id, peer, ("propagate", rec))

    # -- storage testing --------------------------------------------------------
    def _answer_test(self, ch: Challenge):
        w = self.world
        if self.profile == CHEATER:
            return {"status": "not_found"}
        expected = w.pair_at(ch.height, ch.swarm)
        out = Future()
        started = w.now

        def attempt():
            ans: Answer = answer_challenge(self.store, ch, expected if expected and expected.tested == self.node_id
                                           else None, w.height, w.now, w.now - started)
            if ans.status == "wait":
                w.kernel.schedule(1_000, attempt)
                return
            out.set_result({"status": ans.status, "record": ans.record})

        attempt()
        return out


__all__ = ["ServiceNode", "HONEST", "CHEATER", "DROPPER", "OBSERVER", "Observation", "GRACE_MS"]
