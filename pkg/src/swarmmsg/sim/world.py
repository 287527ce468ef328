"""The simulated network: service nodes, clients, block production, storage
testing, churn and the metrics collected along the way."""

from __future__ import annotations

import hashlib
import random
import statistics
import struct
from collections import Counter
from dataclasses import dataclass

from ..audit import GRACE_MS, Answer, ReputationLedger, check_answer, derive_pair, issue_challenge
from ..client import Client, Conversation, DeliveryError, RequestFailed
from ..core import Clock, Envelope
from ..crypto import FastCrypto, RealCrypto
from ..e2ee import Account
from ..onion import NodeInfo, Path, blob_digest
from ..ring import Join, Leave, assign_pubkey, genesis, rebalance
from ..storage import StoredRecord, anti_entropy, apply_migration
from .config import SimConfig
from .kernel import Kernel, SimTimeout
from .network import NO_REPLY, Network
from .node import CHEATER, DROPPER, HONEST, OBSERVER, ServiceNode

SEED_NODE = "n000"
TEST_TIMEOUT_MS = GRACE_MS + 5_000
SESSION_TIMEOUT_MS = 60_000
SNAPSHOT_BLOCKS = 8


def blockhash(seed: int, height: int) -> bytes:
    return hashlib.sha512(struct.pack(">QQ", seed, height)).digest()[:32]


@dataclass
class RunResult:
    log: list[str]
    metrics: dict[str, float]
    world: "World"

    @property
    def log_text(self) -> str:
        return "\n".join(self.log) + "\n"


class World:
    def __init__(self, config: SimConfig):
        config.validate()
        self.config = cfg = config
        self.kernel = Kernel(Clock(0))
        self.net = Network(self.kernel, self._rng("net"), cfg.latency_ms, cfg.jitter_ms, cfg.drop_rate)
        provider = RealCrypto if cfg.crypto == "real" else FastCrypto
        self.crypto = provider(random_bytes=self._rng("crypto").randbytes)
        self.end_ms = int(cfg.duration_s * 1000)
        self.difficulty = cfg.difficulty
        self.log: list[str] = []
        self.metrics: Counter = Counter()
        self.height = 0
        self.block_swarms: dict[int, dict[int, tuple[str, ...]]] = {}
        self.ledger = ReputationLedger()
        self.audit_rng = self._rng("audit")
        self.churn_rng = self._rng("churn")

        self.nodes: dict[str, ServiceNode] = {}
        self.addresses: dict[bytes, str] = {}
        self.liars: set[str] = set()
        ids = [f"n{i:03d}" for i in range(cfg.nodes)]
        profiles = self._assign_profiles(ids)
        for nid in ids:
            self._add_node(nid, profiles.get(nid, HONEST))
        self.registry = genesis(ids, blockhash(cfg.seed, 0))
        self._log_registry(0)
        self._node_list_cache: list | None = None

        self.clients: dict[str, Client] = {}
        self.sent_at: dict[str, int] = {}
        self.delivered_at: dict[str, int] = {}
        self.stored: dict[bytes, StoredRecord] = {}
        self.stored_time: dict[bytes, int] = {}
        self.onions: dict[str, tuple[str, bytes]] = {}
        self.sync_frames: set[bytes] = set()
        self.fallback_frames: set[bytes] = set()
        self.all_sync_at: int | None = None
        self.churn_start: int | None = None
        self.next_join = cfg.nodes
        for i in range(cfg.clients):
            self._add_client(f"c{i:03d}")
        self._pair_clients()
        self._preload(cfg.preload)

    # -- setup ---------------------------------------------------------------
    def _rng(self, name: str) -> random.Random:
        return random.Random(f"{self.config.seed}:{name}")

    def _assign_profiles(self, ids: list[str]) -> dict[str, str]:
        cfg = self.config
        pool = [n for n in ids if n != SEED_NODE]
        self._rng("adversaries").shuffle(pool)
        out: dict[str, str] = {}
        for profile, count in ((CHEATER, cfg.cheaters), (DROPPER, cfg.droppers), (OBSERVER, cfg.observers)):
            for _ in range(count):
                out[pool.pop()] = profile
        for _ in range(cfg.liars):
            self.liars.add(pool.pop())
        return out

    def _add_node(self, nid: str, profile: str) -> ServiceNode:
        node = ServiceNode(self, nid, self.crypto.generate_keypair(), profile)
        self.nodes[nid] = node
        self.addresses[node.info.address] = nid
        self.net.register(nid, node.handle)
        return node

    def _add_client(self, cid: str) -> Client:
        account = Account(self.crypto, self.crypto.generate_keypair(), cid)
        client = Client(self, cid, account, self._rng(f"client:{cid}"), SEED_NODE, self.config.sync)
        self.clients[cid] = client
        self.net.register(cid, lambda src, body: NO_REPLY)
        return client

    def _pair_clients(self) -> None:
        ids = list(self.clients)
        pairs = [(ids[i], ids[i + 1]) for i in range(0, len(ids) - 1, 2)]
        if len(ids) % 2 == 1 and len(ids) > 1:
            pairs.append((ids[-1], ids[0]))
        for a, b in pairs:
            ca, cb = self.clients[a], self.clients[b]
            ca.conversations[cb.pubkey] = Conversation(cb.pubkey, b, True)
            cb.conversations[ca.pubkey] = Conversation(ca.pubkey, a, False)

    def _preload(self, count: int) -> None:
        rng = self._rng("preload")
        for _ in range(count):
            env = Envelope(rng.randbytes(32), self.config.ttl_s, 0, rng.randbytes(64))
            sid, members = self.swarm_for_key(env.recipient)
            for m in members:
                out = self.nodes[m].store.accept(env, 0, sid)
                if out.record is not None:
                    self.on_record_stored(out.record, m)

    # -- queries used by nodes and clients -------------------------------------
    @property
    def now(self) -> int:
        return self.kernel.now

    def record(self, kind: str, details: str = "") -> None:
        self.log.append(f"{self.now} {kind} {details}".rstrip())

    def node_by_address(self, address: bytes) -> str | None:
        return self.addresses.get(address)

    def active_nodes(self) -> list[str]:
        return [n for n in self.registry.nodes() if self.nodes[n].active]

    def node_list_for(self, node_id: str) -> dict:
        if self._node_list_cache is None:
            self._node_list_cache = sorted([n, self.nodes[n].keys.public.hex()] for n in self.active_nodes())
        nodes = list(self._node_list_cache)
        if node_id in self.liars:
            # every liar invents its own phantom node, so liars never agree
            fake = hashlib.sha512(b"phantom" + node_id.encode()).digest()[:32]
            nodes.append([f"x{node_id}", fake.hex()])
        return {"nodes": nodes}

    def swarm_for_key(self, pk: bytes) -> tuple[int, list[str]]:
        sid = assign_pubkey(pk, self.registry.ids())
        return sid, list(self.registry.swarms[sid])

    def swarm_peers(self, node_id: str) -> list[str]:
        sid = self.registry.swarm_of(node_id)
        if sid is None:
            return []
        return [m for m in self.registry.swarms[sid] if m != node_id]

    def difficulty_for(self, sid: int | None) -> int:
        return self.difficulty

    def pair_at(self, height: int, swarm: int):
        members = self.block_swarms.get(height, {}).get(swarm)
        if not members:
            return None
        return derive_pair(blockhash(self.config.seed, height), swarm, members, height)

    # -- hooks ---------------------------------------------------------------
    def on_record_stored(self, rec: StoredRecord, node_id: str) -> None:
        if rec.hash in self.stored:
            return
        self.stored[rec.hash] = rec
        self.stored_time[rec.hash] = self.now
        if self.all_sync_at is not None:
            self.metrics["records_after_sync"] += 1
        frame = hashlib.sha256(rec.envelope.ciphertext).digest()
        if frame in self.sync_frames and frame not in self.fallback_frames:
            self.metrics["sync_frames_stored"] += 1
        self.record("stored", f"hash={rec.hash.hex()[:16]} node={node_id}")

    def on_sent(self, client: Client, msg_id: str, mode: str) -> None:
        if msg_id not in self.sent_at:
            self.sent_at[msg_id] = self.now
            self.record("sent", f"id={msg_id} mode={mode}")

    def on_delivered(self, client: Client, msg_id: str, via: str) -> None:
        if msg_id in self.delivered_at:
            self.metrics["duplicate_deliveries"] += 1
            return
        self.delivered_at[msg_id] = self.now
        self.record("delivered", f"id={msg_id} via={via}")

    def on_sync_frame(self, frame: bytes) -> None:
        self.sync_frames.add(hashlib.sha256(frame).digest())

    def on_fallback(self, frame: bytes) -> None:
        self.fallback_frames.add(hashlib.sha256(frame).digest())

    def on_onion(self, client: Client, path: Path, dest: NodeInfo, blob: bytes) -> None:
        if self.config.observers:
            self.onions[blob_digest(blob)] = (client.client_id, dest.address)

    def on_refresh(self, client: Client, responses: list, adopted: bool) -> None:
        self.metrics["refresh_attempts"] += 1
        canon = [r.canonical() if r is not None else None for r in responses]
        unanimous = bool(canon) and canon[0] is not None and all(c == canon[0] for c in canon)
        if adopted:
            self.metrics["refresh_adoptions"] += 1
            if not unanimous:
                self.metrics["nonunanimous_adoptions"] += 1
            if any(n.node_id not in self.nodes for n in client.node_list.nodes):
                self.metrics["minority_adoptions"] += 1
        else:
            self.metrics["refresh_rejections"] += 1
            self.record("refresh-disagreement", f"client={client.client_id}")

    def on_transport(self, client: Client, conv: Conversation) -> None:
        if self.all_sync_at is not None or conv.transport.mode != "sync":
            return
        convs = [cv for c in self.clients.values() for cv in c.conversations.values()]
        if convs and all(cv.transport.mode == "sync" for cv in convs):
            self.all_sync_at = self.now
            self.record("all-sync")

    # -- membership ------------------------------------------------------------
    def _log_registry(self, since: int) -> None:
        for line in self.registry.log[since:]:
            self.record("ring", line)

    def _apply(self, event) -> None:
        before = len(self.registry.log)
        new, plan = rebalance(self.registry, event)
        stores = {n: self.nodes[n].store for n in new.nodes() if self.nodes[n].active}
        flagged = apply_migration(plan, stores, new.swarms, self.now)
        self.metrics["migration_flagged"] += len(flagged)
        self.registry = new
        self._node_list_cache = None
        self._log_registry(before)

    def leave(self, node_id: str, reason: str) -> None:
        node = self.nodes.get(node_id)
        if node is None or not node.active or node_id not in self.registry.nodes():
            return
        node.active = False
        self.net.set_online(node_id, False)
        self.record("leave", f"node={node_id} reason={reason}")
        self._apply(Leave(node_id, blockhash(self.config.seed, self.height)))

    def join(self, node_id: str | None = None) -> str:
        if node_id is None or node_id in self.nodes:
            node_id = f"n{self.next_join:03d}"
            self.next_join += 1
        self._add_node(node_id, HONEST)
        self.record("join", f"node={node_id}")
        self._apply(Join(node_id, blockhash(self.config.seed, self.height)))
        return node_id

    # -- periodic work -----------------------------------------------------------
    def _every(self, period_ms: int, fn, start_ms: int | None = None) -> None:
        def tick():
            fn()
            self.kernel.schedule(period_ms, tick)

        self.kernel.at(period_ms if start_ms is None else start_ms, tick)

    def _block(self) -> None:
        self.height += 1
        h = self.height
        self.block_swarms[h] = {sid: tuple(m) for sid, m in self.registry.swarms.items()}
        self.block_swarms.pop(h - SNAPSHOT_BLOCKS, None)
        bh = blockhash(self.config.seed, h)
        ring_ids = self.registry.ids()
        for sid in ring_ids:
            pair = derive_pair(bh, sid, self.block_swarms[h][sid], h)
            if pair is None:
                continue
            verifier = self.nodes[pair.verifier]
            if not verifier.active or verifier.profile in (DROPPER, CHEATER):
                continue  # a verifier that does not act reports nothing
            ch = issue_challenge(verifier.store, pair, ring_ids, self.now, self.audit_rng)
            if ch is None:
                self._report(pair, True, "vacuous")
                continue
            fut = self.net.request(pair.verifier, pair.tested, ("test", ch), TEST_TIMEOUT_MS)
            fut.add_done_callback(lambda f, pair=pair, ch=ch, v=verifier: self._judge(pair, ch, v, f))

    def _judge(self, pair, ch, verifier: ServiceNode, fut) -> None:
        if not verifier.active:
            return
        answer = None
        if fut.error is None and isinstance(fut.value, dict):
            answer = Answer(fut.value.get("status", ""), fut.value.get("record"))
        self._report(pair, check_answer(verifier.store, ch, answer),
                     "timeout" if answer is None else answer.status)

    def _report(self, pair, passed: bool, how: str) -> None:
        self.metrics["tests"] += 1
        if not passed:
            self.metrics["test_failures"] += 1
        self.record("test", f"height={pair.height} swarm={pair.swarm} tested={pair.tested} "
                            f"verifier={pair.verifier} result={'pass' if passed else 'fail'} answer={how}")
        if self.ledger.report(pair, passed):
            self.record("decommission", f"node={pair.tested} height={self.height}")
            self.leave(pair.tested, "decommission")

    def _maintenance(self) -> None:
        now = self.now
        for nid in self.active_nodes():
            self.nodes[nid].store.expire(now)
        for sid in self.registry.ids():
            members = [m for m in self.registry.swarms[sid]
                       if self.nodes[m].active and self.nodes[m].profile != DROPPER]
            for m in members:
                peers = [p for p in members if p != m]
                if peers:
                    peer = self.audit_rng.choice(peers)
                    self.metrics["anti_entropy_moved"] += anti_entropy(
                        self.nodes[m].store, self.nodes[peer].store, now)

    def _schedule_churn(self) -> None:
        cfg = self.config
        departures = int(round(cfg.leave_fraction * cfg.nodes))
        events = departures + cfg.joins
        if not events:
            return
        start = int(cfg.churn_at_s * 1000)
        step = int(cfg.churn_spread_s * 1000) // max(1, events)
        victims = self._pick_victims(departures)
        kinds = ["leave"] * departures + ["join"] * cfg.joins
        self.churn_rng.shuffle(kinds)
        for i, kind in enumerate(kinds):
            if kind == "leave":
                self.kernel.at(start + i * step, self.leave, victims.pop(0), "churn")
            else:
                self.kernel.at(start + i * step, self.join)
        self.kernel.at(start, self._mark_churn)

    def _mark_churn(self) -> None:
        self.churn_start = self.now

    def _pick_victims(self, count: int) -> list[str]:
        """Random departures that leave every initial swarm at least one
        of its original members."""
        remaining = {sid: len(m) for sid, m in self.registry.swarms.items()}
        candidates = [n for n in self.registry.nodes() if n != SEED_NODE]
        self.churn_rng.shuffle(candidates)
        out = []
        for n in candidates:
            if len(out) == count:
                break
            sid = self.registry.swarm_of(n)
            if sid is not None and remaining[sid] <= 1:
                continue
            if sid is not None:
                remaining[sid] -= 1
            out.append(n)
        return out

    def _schedule_events(self) -> None:
        for at, action, target in self.config.events:
            self.kernel.at(int(at * 1000), self._event, action, target)

    def _event(self, action: str, target: str) -> None:
        self.record("event", f"{action} {target}")
        if action in ("kill", "revive"):
            c = self.clients.get(target)
            if c is None:
                self.record("event-error", f"unknown client {target}")
                return
            c.online = action == "revive"
            self.net.set_online(target, c.online)
        elif action == "leave":
            self.leave(target, "event")
        elif action == "join":
            self.join(target)
        elif action == "difficulty":
            self.difficulty = int(target)

    # -- clients -----------------------------------------------------------------
    def _client_main(self, c: Client):
        cfg = self.config
        yield int(cfg.start_s * 1000) + c.rng.randint(0, 500)
        try:
            yield from c.bootstrap()
            if c.sync_enabled:
                yield from c.choose_listening_node()
        except (DeliveryError, RequestFailed) as exc:
            self.record("client-error", f"client={c.client_id} {exc}")
        if c.node_list is None:
            return
        k = self.kernel
        k.spawn(self._loop(c, int(cfg.poll_s * 1000), c.poll))
        if c.sync_enabled:
            k.spawn(self._loop(c, int(cfg.pull_s * 1000), self._pull, c))
        if cfg.refresh_every_s > 0:
            k.spawn(self._loop(c, int(cfg.refresh_every_s * 1000), c.refresh, limit=cfg.refreshes))
        for conv in c.conversations.values():
            if conv.initiator:
                k.spawn(self._introduce(c, conv))
            k.spawn(self._talk(c, conv))

    def _loop(self, c: Client, period: int, fn, *args, limit: int = 0):
        runs = 0
        while self.now < self.end_ms and (not limit or runs < limit):
            yield period
            if not c.online:
                continue
            runs += 1
            try:
                yield from fn(*args)
            except (DeliveryError, RequestFailed) as exc:
                self.record("client-error", f"client={c.client_id} {exc}")

    def _pull(self, c: Client):
        if c.listening_node is None:
            yield from c.choose_listening_node()
        yield from c.pull_sync()

    def _introduce(self, c: Client, conv: Conversation):
        for _ in range(3):
            frame = c.account.create_friend_request(conv.peer, f"hello from {c.client_id}")
            try:
                yield from c.send_async(conv.peer, frame)
                c.log("friend_request", f"peer={conv.peer_client}")
                return
            except (DeliveryError, RequestFailed) as exc:
                c.log("send_failed", f"kind=friend_request {exc}")
                yield 2_000

    def _talk(self, c: Client, conv: Conversation):
        cfg = self.config
        try:
            yield self.kernel.with_timeout(conv.established, SESSION_TIMEOUT_MS, "session")
        except SimTimeout:
            c.log("no_session", f"peer={conv.peer_client}")
            return
        for i in range(cfg.messages):
            if c.sync_enabled and i >= cfg.warmup and cfg.sync_wait_s > 0:
                waited = 0
                while conv.transport.mode != "sync" and waited < cfg.sync_wait_s * 1000:
                    yield 200
                    waited += 200
            while not c.online:
                yield 500
            msg_id = f"{c.client_id}>{conv.peer_client}#{i}"
            for _ in range(3):
                try:
                    yield from c.send_text(conv, msg_id, f"message {i}")
                    break
                except (DeliveryError, RequestFailed) as exc:
                    c.log("send_failed", f"id={msg_id} {exc}")
                    yield 2_000
            yield int(cfg.interval_s * 1000)

    # -- running ---------------------------------------------------------------------
    def run(self) -> RunResult:
        cfg = self.config
        self._every(int(cfg.block_interval_s * 1000), self._block)
        self._every(int(cfg.anti_entropy_s * 1000), self._maintenance)
        self._schedule_churn()
        self._schedule_events()
        for c in self.clients.values():
            self.kernel.spawn(self._client_main(c))
        self.kernel.run(self.end_ms)
        self.kernel.stopped = True
        self._scan_observations()
        return RunResult(self.log, self.finalize(), self)

    def _scan_observations(self) -> None:
        client_marks = [(cid, c.pubkey) for cid, c in self.clients.items()]
        for nid, node in self.nodes.items():
            for obs in node.observations:
                if obs.direction != "fwd":
                    continue
                bad = None
                if obs.role == "guard":
                    sent = self.onions.get(obs.blob_hash)
                    # the next-hop prefix is always visible; the rest must be opaque
                    if obs.destination or (sent and sent[1] in obs.visible[33:]):
                        bad = "guard-saw-destination"
                elif obs.role == "exit":
                    if obs.prev in self.clients or any(
                            cid.encode() in obs.visible or pk in obs.visible for cid, pk in client_marks):
                        bad = "exit-saw-client"
                if bad:
                    self.metrics["knowledge_violations"] += 1
                    self.record("knowledge-violation", f"node={nid} kind={bad} blob={obs.blob_hash}")

    def observer_log(self) -> list[str]:
        return [o.line() for n in self.nodes.values() for o in n.observations]

    def _honest_holders(self, rec: StoredRecord) -> tuple[int, int]:
        sid = assign_pubkey(rec.envelope.recipient, self.registry.ids())
        members = [self.nodes[m] for m in self.registry.swarms[sid]
                   if self.nodes[m].active and self.nodes[m].profile not in (CHEATER, DROPPER)]
        return sum(1 for n in members if rec.hash in n.store), len(members)

    def finalize(self) -> dict[str, float]:
        m = self.metrics
        now = self.now
        sent, delivered = len(self.sent_at), len(self.delivered_at)
        latencies = [self.delivered_at[i] - self.sent_at[i] for i in self.delivered_at if i in self.sent_at]
        live = [r for r in self.stored.values() if r.expiry > now]
        fractions, durable = [], 0
        for rec in live:
            have, total = self._honest_holders(rec)
            fractions.append(have / total if total else 0.0)
            durable += have > 0
        sizes = [self.nodes[n].store.bytes_used() for n in self.active_nodes()]
        cheaters = [n for n, node in self.nodes.items() if node.profile == CHEATER]
        caught = [self.ledger.decommissioned[n] for n in cheaters if n in self.ledger.decommissioned]
        honest_decom = [n for n in self.ledger.decommissioned if self.nodes[n].profile in (HONEST, OBSERVER)]
        out = {
            "messages_sent": sent,
            "messages_delivered": delivered,
            "delivery_rate": delivered / sent if sent else 1.0,
            "latency_median_ms": statistics.median(latencies) if latencies else 0,
            "records_stored": len(self.stored),
            "replication_min": min(fractions) if fractions else 1.0,
            "replication_mean": statistics.fmean(fractions) if fractions else 1.0,
            "durability": durable / len(live) if live else 1.0,
            "storage_bytes_max": max(sizes) if sizes else 0,
            "storage_bytes_mean": statistics.fmean(sizes) if sizes else 0,
            "swarms": len(self.registry.swarms),
            "nodes_active": len(self.active_nodes()),
            "blocks": self.height,
            "tests": m["tests"],
            "test_failures": m["test_failures"],
            "decommissions": len(self.ledger.decommissioned),
            "honest_decommissions": len(honest_decom),
            "cheaters_decommissioned": len(caught),
            "cheater_decommission_block": max(caught) if caught and len(caught) == len(cheaters) else -1,
            "refresh_attempts": m["refresh_attempts"],
            "refresh_adoptions": m["refresh_adoptions"],
            "refresh_rejections": m["refresh_rejections"],
            "nonunanimous_adoptions": m["nonunanimous_adoptions"],
            "minority_adoptions": m["minority_adoptions"],
            "knowledge_violations": m["knowledge_violations"],
            "observations": sum(len(n.observations) for n in self.nodes.values()),
            "sync_fallbacks": m["sync_fallbacks"],
            "sync_frames_stored": m["sync_frames_stored"],
            "records_after_sync": m["records_after_sync"] if self.all_sync_at is not None else -1,
            "duplicates_suppressed": m["duplicates_suppressed"],
            "duplicate_deliveries": m["duplicate_deliveries"],
            "undecryptable": m["undecryptable"],
            "migration_flagged": m["migration_flagged"],
            "path_builds": sum(c.path_builds for c in self.clients.values()),
            "packets_sent": self.net.sent,
            "packets_dropped": self.net.dropped,
        }
        return {k: _clean(v) for k, v in out.items()}


def _clean(v) -> float | int:
    if isinstance(v, float):
        return round(v, 6)
    return int(v)


def format_metrics(metrics: dict[str, float]) -> str:
    return "".join(f"{k}={v}\n" for k, v in metrics.items())


def run(config: SimConfig) -> RunResult:
    """Execute one scenario to its duration; deterministic in ``config``."""
    return World(config).run()
