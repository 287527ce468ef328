"""Per-node replicated message store with TTL expiry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from . import pow as pow_
from .core import MAX_TTL_S, Envelope, record_hash
from .ring import MigrationPlan, assign_pubkey


@dataclass(frozen=True)
class StoredRecord:
    hash: bytes
    envelope: Envelope
    origin_swarm: int | None = None

    @property
    def expiry(self) -> int:
        return self.envelope.expiry

    @property
    def size(self) -> int:
        return len(self.envelope.ciphertext)


def make_record(env: Envelope, origin_swarm: int | None = None) -> StoredRecord:
    return StoredRecord(record_hash(env), env, origin_swarm)


@dataclass(frozen=True)
class StoreOutcome:
    status: str  # stored | duplicate | rejected
    reason: str = ""
    difficulty: int | None = None
    swarm: int | None = None  # the correct swarm on wrong-swarm rejections
    record: StoredRecord | None = None

    @property
    def ok(self) -> bool:
        return self.status in ("stored", "duplicate")


class NodeStore:
    """In-memory store owned by one node.  Not thread-safe; one writer."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        self._records: dict[bytes, StoredRecord] = {}
        self._by_recipient: dict[bytes, dict[bytes, None]] = {}
        self.strict_propagation = False

    def __len__(self):
        return len(self._records)

    def __contains__(self, h: bytes) -> bool:
        return h in self._records

    def get(self, h: bytes) -> StoredRecord | None:
        return self._records.get(h)

    def hashes(self) -> list[bytes]:
        return sorted(self._records)

    def records(self) -> list[StoredRecord]:
        return [self._records[h] for h in self.hashes()]

    def bytes_used(self) -> int:
        return sum(r.size for r in self._records.values())

    # -- writes -------------------------------------------------------------
    def _insert(self, rec: StoredRecord) -> None:
        self._records[rec.hash] = rec
        self._by_recipient.setdefault(rec.envelope.recipient, {})[rec.hash] = None

    def _remove(self, h: bytes) -> None:
        rec = self._records.pop(h)
        bucket = self._by_recipient[rec.envelope.recipient]
        del bucket[h]
        if not bucket:
            del self._by_recipient[rec.envelope.recipient]

    def store(self, env: Envelope, difficulty: int, now: int,
              own_swarm: int | None = None, ring_ids: Sequence[int] = ()) -> StoreOutcome:
        """Client-facing store: checks PoW, TTL, expiry and swarm ownership."""
        if env.ttl > MAX_TTL_S:
            return StoreOutcome("rejected", "ttl-exceeded", difficulty)
        if own_swarm is not None and ring_ids:
            correct = assign_pubkey(env.recipient, ring_ids)
            if correct != own_swarm:
                return StoreOutcome("rejected", "wrong-swarm", difficulty, swarm=correct)
        verdict = pow_.verify(env, difficulty, now)
        if not verdict:
            return StoreOutcome("rejected", verdict.reason, difficulty)
        return self.accept(env, now, own_swarm)

    def accept(self, env: Envelope, now: int, origin_swarm: int | None = None) -> StoreOutcome:
        """Peer-facing store used by propagation and migration: no PoW."""
        if env.ttl > MAX_TTL_S:
            return StoreOutcome("rejected", "ttl-exceeded")
        if env.expiry <= now:
            return StoreOutcome("rejected", "expired")
        rec = make_record(env, origin_swarm)
        if rec.hash in self._records:
            return StoreOutcome("duplicate", record=self._records[rec.hash])
        self._insert(rec)
        return StoreOutcome("stored", record=rec)

    def accept_record(self, rec: StoredRecord, now: int, difficulty: int = 1) -> StoreOutcome:
        if self.strict_propagation and not pow_.verify(rec.envelope, difficulty):
            return StoreOutcome("rejected", "pow-invalid", difficulty)
        return self.accept(rec.envelope, now, rec.origin_swarm)

    def expire(self, now: int) -> int:
        dead = [h for h, r in self._records.items() if r.expiry <= now]
        for h in dead:
            self._remove(h)
        return len(dead)

    def erase(self) -> int:
        n = len(self._records)
        self._records.clear()
        self._by_recipient.clear()
        return n

    # -- reads --------------------------------------------------------------
    def retrieve(self, recipient: bytes, since: bytes | None = None, now: int = 0,
                 limit: int | None = None) -> tuple[list[StoredRecord], bytes | None]:
        """Unexpired records for ``recipient`` in hash order after ``since``.

        Returns the page and the cursor to pass back (the last hash
        returned, or ``since`` unchanged when the page is empty).
        """
        bucket = self._by_recipient.get(recipient, {})
        page = []
        for h in sorted(bucket):
            if since is not None and h <= since:
                continue
            rec = self._records[h]
            if rec.expiry <= now:
                continue
            page.append(rec)
            if limit is not None and len(page) >= limit:
                break
        cursor = page[-1].hash if page else since
        return page, cursor


def propagate(rec: StoredRecord, peers: Iterable[NodeStore], now: int,
              reachable: Callable[[str], bool] = lambda _: True) -> list[str]:
    """Offer ``rec`` to every peer; returns ids of peers that now hold it."""
    delivered = []
    for peer in peers:
        if not reachable(peer.node_id):
            continue
        if peer.accept_record(rec, now).ok:
            delivered.append(peer.node_id)
    return delivered


def anti_entropy(a: NodeStore, b: NodeStore, now: int) -> int:
    """Exchange missing records in both directions; returns records moved."""
    moved = 0
    for src, dst in ((a, b), (b, a)):
        missing = [h for h in src.hashes() if h not in dst]
        for h in missing:
            if dst.accept_record(src.get(h), now).status == "stored":
                moved += 1
    return moved


def push_all(sources: Iterable[NodeStore], target: NodeStore, now: int) -> int:
    n = 0
    for src in sources:
        if src is target:
            continue
        for rec in src.records():
            if target.accept_record(rec, now).status == "stored":
                n += 1
    return n


def apply_migration(plan: MigrationPlan, stores: Mapping[str, NodeStore],
                    swarms: Mapping[int, Sequence[str]], now: int) -> list[StoredRecord]:
    """Execute a rebalance plan against the live stores.

    ``swarms`` is the membership after the rebalance.  Returns records that
    could not be delivered (destination swarm unknown or empty); those stay
    where they are.
    """
    flagged: list[StoredRecord] = []
    for ins in plan:
        if ins.kind == "erase":
            if ins.target in stores:
                stores[ins.target].erase()
        elif ins.kind == "push_all":
            if ins.target in stores:
                push_all([stores[s] for s in ins.sources if s in stores], stores[ins.target], now)
        elif ins.kind == "route":
            seen: set[bytes] = set()
            for src_id in ins.sources:
                src = stores.get(src_id)
                if src is None:
                    continue
                for rec in src.records():
                    if rec.hash in seen or rec.expiry <= now:
                        continue
                    if assign_pubkey(rec.envelope.recipient, ins.ring_ids) != ins.dest_swarm:
                        continue
                    seen.add(rec.hash)
                    dest = ins.dest_swarm
                    if dest not in swarms and swarms:
                        # destination vanished later in the same pass
                        dest = assign_pubkey(rec.envelope.recipient, sorted(swarms))
                    members = [stores[n] for n in swarms.get(dest, ()) if n in stores]
                    if not members:
                        flagged.append(rec)
                    for dst in members:
                        dst.accept_record(rec, now)
        else:
            raise ValueError(f"unknown instruction kind {ins.kind!r}")
    return flagged
