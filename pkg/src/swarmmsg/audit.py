"""Peer storage testing: per-block tester/verifier pairs, record
challenges, failure reports and the decommission policy."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence

from .ring import assign_pubkey
from .storage import NodeStore, StoredRecord

HEIGHT_TOLERANCE = 2
GRACE_MS = 10_000


@dataclass(frozen=True)
class TestPair:
    __test__ = False  # not a pytest class

    height: int
    swarm: int
    tested: str
    verifier: str


def derive_pair(blockhash: bytes, swarm_id: int, members: Sequence[str],
                height: int = 0) -> TestPair | None:
    """Deterministic (tested, verifier) for one swarm at one block.

    tested = sorted_members[u64(h[0:8]) mod n]; the verifier is
    ``1 + u64(h[8:16]) mod (n-1)`` positions further on, so every other
    member is equally likely to verify.
    """
    ordered = sorted(members)
    n = len(ordered)
    if n < 2:
        return None
    h = hashlib.sha512(blockhash + struct.pack(">Q", swarm_id)).digest()
    t = int.from_bytes(h[:8], "big") % n
    v = (t + 1 + int.from_bytes(h[8:16], "big") % (n - 1)) % n
    return TestPair(height, swarm_id, ordered[t], ordered[v])


@dataclass(frozen=True)
class Challenge:
    record_hash: bytes
    height: int
    swarm: int
    verifier: str


def eligible_records(store: NodeStore, swarm_id: int, ring_ids: Sequence[int],
                     now: int) -> list[StoredRecord]:
    """Unexpired records that belong to ``swarm_id`` under the current ring."""
    return [r for r in store.records()
            if r.expiry > now and assign_pubkey(r.envelope.recipient, ring_ids) == swarm_id]


def issue_challenge(verifier: NodeStore, pair: TestPair, ring_ids: Sequence[int], now: int,
                    rng) -> Challenge | None:
    """None means V has nothing to test with; that counts as a pass."""
    candidates = eligible_records(verifier, pair.swarm, ring_ids, now)
    if not candidates:
        return None
    rec = rng.choice(candidates)
    return Challenge(rec.hash, pair.height, pair.swarm, pair.verifier)


@dataclass(frozen=True)
class Answer:
    status: str  # data | not_found | wait | refused
    record: StoredRecord | None = None
    reason: str = ""


def answer_challenge(tested: NodeStore, challenge: Challenge, expected: TestPair | None,
                     current_height: int, now: int, waited_ms: int = 0,
                     grace_ms: int = GRACE_MS) -> Answer:
    """T's side.  ``expected`` is T's own derivation of the pair at the
    challenge height.  Returns ``wait`` while the grace window is open and
    the record has not arrived yet."""
    if abs(current_height - challenge.height) > HEIGHT_TOLERANCE:
        return Answer("refused", reason="height out of range")
    if (expected is None or expected.tested != tested.node_id
            or expected.verifier != challenge.verifier or expected.swarm != challenge.swarm):
        return Answer("refused", reason="not the pair for this height")
    rec = tested.get(challenge.record_hash)
    if rec is not None and rec.expiry > now:
        return Answer("data", rec)
    if waited_ms < grace_ms:
        return Answer("wait")
    return Answer("not_found")


def check_answer(verifier: NodeStore, challenge: Challenge, answer: Answer | None) -> bool:
    """V's verdict; ``None`` is a timeout."""
    if answer is None or answer.status != "data" or answer.record is None:
        return False
    mine = verifier.get(challenge.record_hash)
    return mine is not None and answer.record.envelope == mine.envelope


@dataclass(frozen=True)
class DecommissionPolicy:
    failures: int = 2
    window: int = 50
    min_reporters: int = 2

    def should_decommission(self, reports: Sequence[tuple[int, str, bool]], height: int) -> bool:
        recent = [(h, who) for h, who, ok in reports if not ok and h > height - self.window]
        return len(recent) >= self.failures and len({who for _, who in recent}) >= self.min_reporters


@dataclass
class LedgerEntry:
    height: int
    swarm: int
    tested: str
    verifier: str
    passed: bool


@dataclass
class ReputationLedger:
    policy: DecommissionPolicy = field(default_factory=DecommissionPolicy)
    entries: list[LedgerEntry] = field(default_factory=list)
    decommissioned: dict[str, int] = field(default_factory=dict)

    def reports_for(self, node: str) -> list[tuple[int, str, bool]]:
        return [(e.height, e.verifier, e.passed) for e in self.entries if e.tested == node]

    def status(self, node: str) -> str:
        return "decommissioned" if node in self.decommissioned else "active"

    def report(self, pair: TestPair, passed: bool) -> bool:
        """Record one result; True when it pushes the node over the policy."""
        self.entries.append(LedgerEntry(pair.height, pair.swarm, pair.tested, pair.verifier, passed))
        if passed or pair.tested in self.decommissioned:
            return False
        if self.policy.should_decommission(self.reports_for(pair.tested), pair.height):
            self.decommissioned[pair.tested] = pair.height
            return True
        return False

    def export_csv(self) -> str:
        lines = ["height,swarm,tested,verifier,result"]
        lines += [f"{e.height},{e.swarm},{e.tested},{e.verifier},{'pass' if e.passed else 'fail'}"
                  for e in self.entries]
        return "\n".join(lines) + "\n"


def run_audit(stores: dict[str, NodeStore], swarms: dict[int, list[str]], blocks: int,
              blockhash, now: int, rng, ledger: ReputationLedger | None = None,
              cheaters: Sequence[str] = (), drop=lambda: False) -> ReputationLedger:
    """Block loop over static swarms without a network: every block each
    swarm runs one challenge.  ``blockhash(h)`` supplies block hashes;
    ``drop()`` decides whether a response is lost.  Decommissioned nodes
    leave their swarm immediately."""
    ledger = ledger or ReputationLedger()
    swarms = {s: list(m) for s, m in swarms.items()}
    for height in range(blocks):
        bh = blockhash(height)
        ring_ids = sorted(swarms)
        for sid in ring_ids:
            pair = derive_pair(bh, sid, swarms[sid], height)
            if pair is None:
                continue
            ch = issue_challenge(stores[pair.verifier], pair, ring_ids, now, rng)
            if ch is None:
                ledger.report(pair, True)
                continue
            answer = None
            if pair.tested in cheaters:
                answer = Answer("not_found")
            elif not drop():
                expected = derive_pair(bh, sid, swarms[sid], height)
                answer = answer_challenge(stores[pair.tested], ch, expected, height, now,
                                          waited_ms=GRACE_MS)
            if ledger.report(pair, check_answer(stores[pair.verifier], ch, answer)):
                swarms[sid].remove(pair.tested)
    return ledger
