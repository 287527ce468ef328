"""Client behaviour: node-list bootstrap and consensus refresh, swarm
resolution, asynchronous store-to-3 delivery, synchronous delivery through
listening nodes with acknowledgements, and polling.

Client operations are generator methods driven by the simulation kernel
(see ``swarmmsg.sim.kernel``); ``yield from client.send_async(...)``.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

from . import onion
from . import pow as pow_
from .core import Envelope, pack_store_request, record_hash, unpack_store_request
from .crypto import DecryptionError
from .e2ee import Account, NoSession, ReplayError, SessionError
from .onion import NodeInfo, Path, PathError
from .sim.kernel import Future, SimTimeout
from .sim.network import Unreachable

if TYPE_CHECKING:
    from .sim.world import World

REFRESH_QUORUM = 3
RESOLVE_ATTEMPTS = 3
SEND_FANOUT = 3
POLL_FANOUT = 3
PATH_BUILD_TIMEOUT_MS = 5_000
PATH_BUILD_ATTEMPTS = 8
REQUEST_TIMEOUT_MS = 4_000
ACK_TIMEOUT_MS = 10_000
MAX_DEFERRED = 64


class DeliveryError(Exception):
    pass


class RequestFailed(Exception):
    pass


# -- node lists -----------------------------------------------------------------


@dataclass(frozen=True)
class NodeList:
    nodes: tuple[NodeInfo, ...]
    source: str = "seed-node"

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.node_id)))

    def ids(self) -> list[str]:
        return [n.node_id for n in self.nodes]

    def get(self, node_id: str) -> NodeInfo | None:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        return None

    def canonical(self) -> tuple[tuple[str, bytes], ...]:
        return tuple((n.node_id, n.pubkey) for n in self.nodes)

    @classmethod
    def from_wire(cls, payload: dict, source: str) -> "NodeList":
        return cls(tuple(NodeInfo(i, bytes.fromhex(k)) for i, k in payload.get("nodes", [])), source)

    def to_wire(self) -> dict:
        return {"nodes": [[n.node_id, n.pubkey.hex()] for n in self.nodes]}


def refresh_node_list(current: NodeList, responses: Sequence[NodeList | None]) -> tuple[NodeList, bool]:
    """Adopt a new list only if every queried node returned the same one."""
    if len(responses) < REFRESH_QUORUM:
        return current, False
    if any(r is None or not r.nodes for r in responses):
        return current, False
    first = responses[0].canonical()
    if any(r.canonical() != first for r in responses[1:]):
        return current, False
    return NodeList(responses[0].nodes, "consensus-refresh"), True


# -- transports -------------------------------------------------------------------


@dataclass
class ConversationTransport:
    peer: bytes
    mode: str = "async"  # async | sync
    peer_listening_node: str | None = None
    last_ack: int = 0

    def go_sync(self, node: str) -> None:
        self.mode, self.peer_listening_node = "sync", node

    def go_async(self) -> None:
        self.mode, self.peer_listening_node = "async", None


@dataclass
class Receipt:
    acceptors: list[str]
    targets: list[str]
    difficulty: int


@dataclass
class Conversation:
    peer: bytes
    peer_client: str
    initiator: bool
    transport: ConversationTransport = None  # type: ignore[assignment]
    established: Future = field(default_factory=Future)
    acks: dict[str, Future] = field(default_factory=dict)

    def __post_init__(self):
        if self.transport is None:
            self.transport = ConversationTransport(self.peer)


def content(kind: str, msg_id: str = "", body: str = "", online: bool = False,
            listen: str | None = None) -> bytes:
    return json.dumps({"t": kind, "id": msg_id, "body": body, "online": online, "listen": listen},
                      sort_keys=True, separators=(",", ":")).encode()


class Client:
    """One simulated user device."""

    def __init__(self, world: "World", client_id: str, account: Account, rng: random.Random,
                 seed_node: str, sync_enabled: bool = False):
        self.world = world
        self.client_id = client_id
        self.account = account
        self.rng = rng
        self.seed_node = seed_node
        self.sync_enabled = sync_enabled
        self.node_list: NodeList | None = None
        self.path: Path | None = None
        self.swarm_cache: dict[bytes, list[str]] = {}
        self.seen: dict[bytes, int] = {}  # record hash -> expiry
        self.conversations: dict[bytes, Conversation] = {}
        self.difficulty = world.config.difficulty
        self.listening_node: str | None = None
        self.online = True
        self.path_builds = 0
        self.deferred: list[tuple[bytes, str]] = []  # frames that beat their session init
        self.suspects: dict[str, int] = {}  # node -> time it was last on a failed request
        self._building: Future | None = None

    @property
    def crypto(self):
        return self.world.crypto

    @property
    def pubkey(self) -> bytes:
        return self.account.pubkey

    def log(self, kind: str, detail: str = "") -> None:
        self.world.record(kind, f"client={self.client_id} {detail}".rstrip())

    # -- bootstrap -------------------------------------------------------------
    def bootstrap(self):
        """Fetch the node list from the hard-coded seed node (no onion)."""
        fut = self.world.net.request(self.client_id, self.seed_node, ("nodes",), REQUEST_TIMEOUT_MS)
        try:
            payload = yield fut
        except (SimTimeout, Unreachable) as exc:
            raise DeliveryError("seed node unreachable") from exc
        self.node_list = NodeList.from_wire(payload, "seed-node")
        self.log("bootstrap", f"nodes={len(self.node_list.nodes)}")
        return self.node_list

    def refresh(self):
        """Ask ``REFRESH_QUORUM`` random nodes for their list; adopt on unanimity."""
        nodes = self.rng.sample(list(self.node_list.nodes), min(REFRESH_QUORUM, len(self.node_list.nodes)))
        results = yield [self.world.kernel.spawn(self.onion_request(n, {"op": "get_nodes"})) for n in nodes]
        responses = [NodeList.from_wire(r, "consensus-refresh") if isinstance(r, dict) else None
                     for r in results]
        self.node_list, adopted = refresh_node_list(self.node_list, responses)
        self.world.on_refresh(self, responses, adopted)
        self.log("refresh", f"adopted={int(adopted)}")
        return adopted

    # -- onion plumbing ------------------------------------------------------------
    def establish_path(self):
        """Build a 3-hop path, reselecting all hops after any failure.
        Concurrent callers share one build."""
        if self._building is not None:
            return (yield self._building)
        self._building = done = Future()
        try:
            path = yield from self._build_path()
        except DeliveryError as exc:
            done.set_error(exc)
            raise
        finally:
            self._building = None
        done.set_result(path)
        return path

    def _build_path(self):
        for _ in range(PATH_BUILD_ATTEMPTS):
            candidates = [n for n in self.node_list.nodes if n.node_id not in self.suspects]
            if len(candidates) < onion.PATH_LENGTH:
                self.suspects.clear()
                candidates = list(self.node_list.nodes)
            path = onion.select_path(candidates, self.rng)
            self.path_builds += 1
            try:
                resp = yield from self._send_onion(path, path.exit, {"op": "path_build"}, PATH_BUILD_TIMEOUT_MS)
            except RequestFailed:
                self.log("path_failed", f"hops={','.join(h.node_id for h in path.hops)}")
                self._suspect(h.node_id for h in path.hops)
                continue
            if resp.get("ok"):
                path.established = True
                for h in path.hops:
                    self.suspects.pop(h.node_id, None)
                self.path = path
                self.log("path", f"hops={','.join(h.node_id for h in path.hops)}")
                return path
        raise DeliveryError("could not establish a path")

    def _send_onion(self, path: Path, dest: NodeInfo, request: dict, timeout: int):
        if not self.online:
            raise RequestFailed("client offline")
        sealed = self.crypto.seal_to(dest.pubkey, json.dumps(request, sort_keys=True).encode(), b"request")
        o = onion.wrap(self.crypto, path, dest.address, sealed)
        self.world.on_onion(self, path, dest, o.blob)
        fut = self.world.net.request(self.client_id, path.guard.node_id, ("onion", o.blob), timeout)
        try:
            blob = yield fut
        except (SimTimeout, Unreachable) as exc:
            raise RequestFailed(str(exc)) from exc
        try:
            return json.loads(onion.unwrap_response(self.crypto, o, blob))
        except (DecryptionError, ValueError) as exc:
            raise RequestFailed("bad response") from exc

    def _suspect(self, nodes: Iterable[str]) -> None:
        for n in nodes:
            self.suspects[n] = self.world.now

    def prefer_live(self, members: Sequence[str]) -> list[str]:
        """Members not seen failing lately, or all of them if none qualify."""
        good = [m for m in members if m not in self.suspects]
        return good or list(members)

    def onion_request(self, dest: NodeInfo, request: dict, timeout: int = REQUEST_TIMEOUT_MS):
        """Send through the current path; rebuild it once on failure."""
        for attempt in range(2):
            if self.path is None:
                yield from self.establish_path()
            path = self.path
            try:
                resp = yield from self._send_onion(path, dest, request, timeout)
                self.suspects.pop(dest.node_id, None)
                return resp
            except RequestFailed:
                if attempt == 1 or not self.online:
                    self._suspect([dest.node_id])
                    raise
                if self.path is path:  # nobody replaced it yet
                    self.log("path_reset")
                    self.path = None

    def _info(self, node_id: str) -> NodeInfo | None:
        return self.node_list.get(node_id) if self.node_list else None

    # -- swarms -----------------------------------------------------------------------
    def resolve_swarm(self, pk: bytes):
        if pk in self.swarm_cache:
            return self.swarm_cache[pk]
        for _ in range(RESOLVE_ATTEMPTS):
            node = self.rng.choice(list(self.node_list.nodes))
            try:
                resp = yield from self.onion_request(node, {"op": "get_swarm", "pk": pk.hex()})
            except (RequestFailed, DeliveryError):
                continue
            members = [m for m in resp.get("members", []) if self._info(m)]
            if members:
                self.swarm_cache[pk] = members
                return members
        raise DeliveryError("could not resolve swarm")

    # -- asynchronous delivery ----------------------------------------------------------
    def send_async(self, peer: bytes, frame: bytes, ttl: int | None = None):
        ttl = self.world.config.ttl_s if ttl is None else ttl
        env = Envelope(peer, ttl, self.world.now, frame)
        env = pow_.mine_envelope(env, self.difficulty)
        remined = False
        for _ in range(RESOLVE_ATTEMPTS):
            members = yield from self.resolve_swarm(peer)
            live = self.prefer_live(members)
            targets = self.rng.sample(live, min(SEND_FANOUT, len(live)))
            replies = yield [self.world.kernel.spawn(
                self.onion_request(self._info(t), {"op": "store", "data": pack_store_request(env).hex()}))
                for t in targets]
            acceptors, wrong_swarm, new_d = [], False, None
            for t, r in zip(targets, replies):
                if not isinstance(r, dict):
                    continue
                if r.get("status") in ("stored", "duplicate"):
                    acceptors.append(t)
                elif r.get("reason") == "wrong-swarm":
                    wrong_swarm = True
                elif r.get("reason") == "pow-invalid" and r.get("difficulty"):
                    new_d = max(new_d or 0, int(r["difficulty"]))
            if acceptors:
                self.log("sent_async", f"hash={record_hash(env).hex()[:16]} acceptors={','.join(acceptors)}")
                return Receipt(acceptors, targets, self.difficulty)
            if wrong_swarm:
                self.swarm_cache.pop(peer, None)
                self.log("swarm_stale")
                continue
            if new_d and not remined:
                remined = True
                self.difficulty = new_d
                env = pow_.mine_envelope(Envelope(peer, ttl, self.world.now, frame), new_d)
                self.log("remine", f"difficulty={new_d}")
                continue
            # everything timed out: the cached membership may be stale
            self.swarm_cache.pop(peer, None)
        raise DeliveryError("no swarm member accepted the message")

    # -- synchronous delivery --------------------------------------------------------------
    def choose_listening_node(self):
        members = yield from self.resolve_swarm(self.pubkey)
        self.listening_node = self.rng.choice(members)
        self.log("listen", f"node={self.listening_node}")
        return self.listening_node

    def sync_push(self, node_id: str, peer: bytes, frame: bytes):
        info = self._info(node_id)
        if info is None:
            raise RequestFailed("listening node not in node list")
        self.world.on_sync_frame(frame)
        resp = yield from self.onion_request(info, {"op": "sync_push", "pk": peer.hex(), "blob": frame.hex()})
        if not resp.get("ok"):
            raise RequestFailed("listening node refused")

    def sync_handshake(self, conv: Conversation, listen: str):
        """Answer a peer's online announcement: push our listening node to theirs."""
        if not self.sync_enabled or not self.online or self.listening_node is None:
            return conv.transport
        frame = self.account.encrypt(conv.peer, content("hello", online=True, listen=self.listening_node))
        try:
            yield from self.sync_push(listen, conv.peer, frame)
        except (RequestFailed, DeliveryError):
            self.log("handshake_failed", f"peer={conv.peer_client}")
            return conv.transport
        conv.transport.go_sync(listen)
        self.world.on_transport(self, conv)
        self.log("sync", f"peer={conv.peer_client} via={listen}")
        return conv.transport

    def send_sync(self, conv: Conversation, msg_id: str, frame: bytes):
        """Returns "acked" or "fell_back"; raises DeliveryError if both fail."""
        ack = conv.acks[msg_id] = Future()
        try:
            yield from self.sync_push(conv.transport.peer_listening_node, conv.peer, frame)
            yield self.world.kernel.with_timeout(ack, ACK_TIMEOUT_MS, "ack")
            conv.transport.last_ack += 1
            self.log("acked", f"id={msg_id}")
            return "acked"
        except (SimTimeout, RequestFailed, DeliveryError):
            pass
        finally:
            conv.acks.pop(msg_id, None)
        conv.transport.go_async()
        self.world.on_transport(self, conv)
        self.world.on_fallback(frame)
        self.world.metrics["sync_fallbacks"] += 1
        self.log("fell_back", f"id={msg_id}")
        yield from self.send_async(conv.peer, frame)
        return "fell_back"

    # -- receiving ---------------------------------------------------------------------------
    def poll(self):
        """Union of retrieve() from up to 3 random own-swarm members."""
        members = yield from self.resolve_swarm(self.pubkey)
        live = self.prefer_live(members)
        targets = self.rng.sample(live, min(POLL_FANOUT, len(live)))
        replies = yield [self.world.kernel.spawn(self._retrieve_all(t)) for t in targets]
        if all(not isinstance(r, list) for r in replies):
            self.swarm_cache.pop(self.pubkey, None)
            self.log("poll_failed", f"targets={','.join(targets)}")
            return []
        fresh = []
        for r in replies:
            if not isinstance(r, list):
                continue
            for env in r:
                h = record_hash(env)
                if h in self.seen:
                    continue
                self.seen[h] = env.expiry
                fresh.append(env)
        now = self.world.now
        self.seen = {h: exp for h, exp in self.seen.items() if exp > now}
        for env in fresh:
            self.handle_frame(env.ciphertext, "async")
        return fresh

    def _retrieve_all(self, node_id: str):
        out, cursor = [], None
        for _ in range(20):
            resp = yield from self.onion_request(self._info(node_id), {
                "op": "retrieve", "pk": self.pubkey.hex(), "since": cursor, "limit": 50})
            page = [unpack_store_request(bytes.fromhex(x)) for x in resp.get("records", [])]
            out.extend(page)
            if len(page) < 50:
                break
            cursor = resp.get("cursor")
        return out

    def pull_sync(self):
        if self.listening_node is None:
            return []
        info = self._info(self.listening_node)
        try:
            resp = yield from self.onion_request(info, {"op": "sync_pull", "pk": self.pubkey.hex()})
        except (RequestFailed, DeliveryError):
            self.listening_node = None
            self.swarm_cache.pop(self.pubkey, None)
            return []
        blobs = [bytes.fromhex(b) for b in resp.get("blobs", [])]
        for b in blobs:
            self.handle_frame(b, "sync")
        return blobs

    def handle_frame(self, blob: bytes, via: str) -> None:
        try:
            got = self.account.receive(blob)
        except ReplayError:
            self.world.metrics["duplicates_suppressed"] += 1
            return
        except NoSession:
            # a peer's first messages can be polled before its session init
            self.deferred = (self.deferred + [(blob, via)])[-MAX_DEFERRED:]
            return
        except (DecryptionError, SessionError) as exc:
            # replays of messages from an older ratchet chain land here too
            self.world.metrics["undecryptable"] += 1
            self.log("discard", f"reason={type(exc).__name__}")
            return
        if got.kind == "friend_request":
            self.world.kernel.spawn(self._accept(got))
            return
        conv = self.conversations.get(got.peer)
        if conv is None:
            return
        if got.kind == "session_started":
            conv.established.set_result(True)
            self.log("session", f"peer={conv.peer_client}")
            waiting, self.deferred = self.deferred, []
            for b, v in waiting:
                self.handle_frame(b, v)
        msg = json.loads(got.plaintext) if got.plaintext else {}
        kind = msg.get("t")
        if kind == "text":
            self.world.on_delivered(self, msg["id"], via)
            # a sync delivery names the sender's listening node; ack there
            # even if our own transport has not flipped to sync yet
            target = msg.get("listen") or conv.transport.peer_listening_node
            if via == "sync" and target:
                self.world.kernel.spawn(self._ack(conv, msg["id"], target))
        elif kind == "ack":
            fut = conv.acks.get(msg["id"])
            if fut is not None:
                fut.set_result(True)
        if msg.get("online") and msg.get("listen") and kind != "ack":
            if kind == "hello":
                conv.transport.go_sync(msg["listen"])
                self.world.on_transport(self, conv)
                self.log("sync", f"peer={conv.peer_client} via={msg['listen']}")
            elif conv.transport.mode == "async" or conv.transport.peer_listening_node != msg["listen"]:
                self.world.kernel.spawn(self.sync_handshake(conv, msg["listen"]))

    def _accept(self, got):
        conv = self.conversations.get(got.peer)
        if conv is None:
            return
        frame = self.account.accept(got.request, content("accept"))
        conv.established.set_result(True)
        self.log("accepted", f"peer={conv.peer_client}")
        try:
            yield from self.send_async(got.peer, frame)
        except DeliveryError:
            self.log("send_failed", "kind=accept")

    def _ack(self, conv: Conversation, msg_id: str, target: str):
        frame = self.account.encrypt(conv.peer, content("ack", msg_id))
        try:
            yield from self.sync_push(target, conv.peer, frame)
        except (RequestFailed, DeliveryError):
            self.log("ack_failed", f"id={msg_id}")

    # -- conversation driver -----------------------------------------------------------
    def send_text(self, conv: Conversation, msg_id: str, body: str):
        online = self.sync_enabled and self.listening_node is not None
        frame = self.account.encrypt(conv.peer, content("text", msg_id, body, online, self.listening_node))
        self.world.on_sent(self, msg_id, conv.transport.mode)
        if conv.transport.mode == "sync" and self.online:
            return (yield from self.send_sync(conv, msg_id, frame))
        yield from self.send_async(conv.peer, frame)
        return "async"


def unique(items: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(items))
