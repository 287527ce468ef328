"""Swarm identifiers on a wrapping 64-bit number line, key-to-swarm
mapping and swarm membership rebalancing.

The ring has ``M = 2**64 - 1`` positions ``0 .. 2**64 - 2``; incrementing
``2**64 - 2`` wraps to 0 and ``2**64 - 1`` is reserved as the "unknown"
sentinel.  Every function takes ``m`` so tests can use miniature rings.
"""

from __future__ import annotations

import bisect
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

RING_SIZE = 2**64 - 1
SENTINEL = 2**64 - 1

N_MIN = 5
N_TARGET = 7
N_MAX = 10


class RingError(ValueError):
    pass


def _check(x: int, m: int) -> None:
    if not 0 <= x < m:
        raise RingError(f"{x} is not a valid ring point for ring size {m}")


def ring_distance(a: int, b: int, m: int = RING_SIZE) -> int:
    _check(a, m)
    _check(b, m)
    if a == b:
        return m
    return min((b - a) % m, (a - b) % m)


def _assign_distance(k: int, s: int, m: int) -> int:
    return 0 if k == s else ring_distance(k, s, m)


def forward_gaps(ids: Iterable[int], m: int = RING_SIZE) -> list[tuple[int, int]]:
    """(start, gap) for each swarm id to its successor, ascending by start."""
    ordered = sorted(set(ids))
    if len(ordered) == 1:
        return [(ordered[0], m)]
    return [(a, (b - a) % m) for a, b in zip(ordered, ordered[1:] + ordered[:1])]


def next_swarm_id(existing: Iterable[int], m: int = RING_SIZE) -> int:
    """Id for a new swarm: midpoint of the widest gap (lowest start on ties)."""
    existing = list(existing)
    if not existing:
        return 0
    for x in existing:
        _check(x, m)
    start, gap = max(forward_gaps(existing, m), key=lambda sg: (sg[1], -sg[0]))
    if gap < 2:
        raise RingError("ring is full")
    return (start + gap // 2) % m


def reduce_pubkey(key: bytes, m: int = RING_SIZE) -> int:
    """XOR-fold 32 key bytes into one u64, then reduce onto the ring."""
    if len(key) != 32:
        raise RingError("expected a 32-byte key (no version byte)")
    acc = 0
    for i in range(0, 32, 8):
        acc ^= int.from_bytes(key[i : i + 8], "big")
    return acc % m


def assign_key(k: int, swarms: Sequence[int], m: int = RING_SIZE) -> int:
    if not swarms:
        raise RingError("no swarms to assign to")
    ordered = sorted(swarms)
    if len(ordered) == 1:
        return ordered[0]
    # only the ring neighbours of k can be nearest
    i = bisect.bisect_left(ordered, k)
    candidates = {ordered[i % len(ordered)], ordered[(i - 1) % len(ordered)]}
    return min(candidates, key=lambda s: (_assign_distance(k, s, m), s))


def assign_pubkey(key: bytes, swarms: Sequence[int], m: int = RING_SIZE) -> int:
    return assign_key(reduce_pubkey(key, m), swarms, m)


# -- membership ---------------------------------------------------------------


@dataclass(frozen=True)
class Join:
    node: str
    blockhash: bytes = b""


@dataclass(frozen=True)
class Leave:
    node: str
    blockhash: bytes = b""


@dataclass(frozen=True)
class Instruction:
    """One migration step.

    kind:
      ``push_all``   every record ``source_swarm`` holds goes to ``target``
      ``route``      records held by ``sources`` whose key maps to
                     ``dest_swarm`` under ``ring_ids`` go to that swarm
      ``erase``      ``target`` drops everything (left a swarm normally)
    """

    kind: str
    sources: tuple[str, ...]
    dest_swarm: int | None = None
    target: str | None = None
    source_swarm: int | None = None
    ring_ids: tuple[int, ...] = ()


@dataclass
class MigrationPlan:
    instructions: list[Instruction] = field(default_factory=list)

    def __iter__(self):
        return iter(self.instructions)

    def __len__(self):
        return len(self.instructions)


@dataclass
class SwarmRegistry:
    swarms: dict[int, list[str]] = field(default_factory=dict)
    pool: list[str] = field(default_factory=list)
    log: list[str] = field(default_factory=list)
    m: int = RING_SIZE
    n_min: int = N_MIN
    n_target: int = N_TARGET
    n_max: int = N_MAX

    def copy(self) -> "SwarmRegistry":
        return SwarmRegistry(
            {s: list(ms) for s, ms in self.swarms.items()},
            list(self.pool),
            list(self.log),
            self.m,
            self.n_min,
            self.n_target,
            self.n_max,
        )

    def swarm_of(self, node: str) -> int | None:
        for sid, members in self.swarms.items():
            if node in members:
                return sid
        return None

    def ids(self) -> list[int]:
        return sorted(self.swarms)

    def nodes(self) -> list[str]:
        out = [n for sid in self.ids() for n in self.swarms[sid]]
        return out + list(self.pool)

    def members_for_key(self, key: bytes) -> list[str]:
        return list(self.swarms[assign_pubkey(key, self.ids(), self.m)])

    def export(self) -> str:
        lines = [f"swarm {sid}: {','.join(self.swarms[sid])}" for sid in self.ids()]
        if self.pool:
            lines.append(f"pool: {','.join(self.pool)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, **kwargs) -> "SwarmRegistry":
        reg = cls(**kwargs)
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            head, _, rest = line.partition(":")
            members = [n.strip() for n in rest.split(",") if n.strip()]
            if head == "pool":
                reg.pool.extend(members)
            elif head.startswith("swarm "):
                try:
                    sid = int(head[6:])
                except ValueError:
                    raise RingError(f"line {lineno}: bad swarm id {head[6:]!r}") from None
                _check(sid, reg.m)
                reg.swarms[sid] = members
            else:
                raise RingError(f"line {lineno}: expected 'swarm <id>:' or 'pool:'")
        seen: set[str] = set()
        for n in reg.nodes():
            if n in seen:
                raise RingError(f"node {n} listed twice")
            seen.add(n)
        return reg


def _seeded_rank(node: str, blockhash: bytes, salt: str = "") -> bytes:
    return hashlib.sha512(node.encode() + b"|" + blockhash + salt.encode()).digest()


def rebalance(
    reg: SwarmRegistry, event: Join | Leave | None = None
) -> tuple[SwarmRegistry, MigrationPlan]:
    """Apply one membership event and restore the size bounds.

    Pure: ``reg`` is not modified.  The returned plan lists the record
    movements needed to keep every record on the swarm its key maps to.
    """
    new = reg.copy()
    plan = MigrationPlan()
    blockhash = event.blockhash if event else b""

    if isinstance(event, Join):
        if event.node in new.nodes():
            raise RingError(f"node {event.node} already registered")
        _place(new, plan, event.node, blockhash)
    elif isinstance(event, Leave):
        sid = new.swarm_of(event.node)
        if sid is None:
            if event.node not in new.pool:
                raise RingError(f"unknown node {event.node}")
            new.pool.remove(event.node)
        else:
            new.swarms[sid].remove(event.node)
            new.log.append(f"leave {event.node} swarm={sid}")
            plan.instructions.append(Instruction("erase", (event.node,), target=event.node))

    _settle(new, plan, blockhash)
    return new, plan


def _place(reg: SwarmRegistry, plan: MigrationPlan, node: str, blockhash: bytes) -> None:
    open_swarms = [s for s in reg.ids() if len(reg.swarms[s]) < reg.n_max]
    if not open_swarms:
        reg.pool.append(node)
        reg.log.append(f"pool {node}")
        return
    smallest = min(len(reg.swarms[s]) for s in open_swarms)
    tied = [s for s in open_swarms if len(reg.swarms[s]) == smallest]
    sid = min(tied, key=lambda s: _seeded_rank(node, blockhash, str(s)))
    reg.swarms[sid].append(node)
    reg.log.append(f"join {node} swarm={sid}")
    plan.instructions.append(Instruction("push_all", tuple(m for m in reg.swarms[sid] if m != node),
                                         target=node, source_swarm=sid))


def _settle(reg: SwarmRegistry, plan: MigrationPlan, blockhash: bytes) -> None:
    # Each pass fixes one violation; sizes only move toward the bounds, so it ends.
    for _ in range(10_000):
        if reg.pool and any(len(reg.swarms[s]) < reg.n_max for s in reg.swarms):
            node = reg.pool.pop(0)
            _place(reg, plan, node, blockhash)
            continue
        if len(reg.pool) >= reg.n_target and (not reg.swarms or all(
            len(reg.swarms[s]) >= reg.n_max for s in reg.swarms
        )):
            _create(reg, plan, blockhash)
            continue
        starving = [s for s in reg.ids() if len(reg.swarms[s]) < reg.n_min]
        if not starving or len(reg.swarms) == 1:
            return
        sid = starving[0]
        donors = [s for s in reg.ids() if s != sid and len(reg.swarms[s]) > reg.n_min]
        if donors:
            donor = max(donors, key=lambda s: (len(reg.swarms[s]), -s))
            node = min(reg.swarms[donor], key=lambda n: _seeded_rank(n, blockhash, "steal"))
            reg.swarms[donor].remove(node)
            reg.swarms[sid].append(node)
            reg.log.append(f"steal {node} from={donor} to={sid}")
            plan.instructions.append(Instruction("erase", (node,), target=node))
            plan.instructions.append(Instruction("push_all", tuple(m for m in reg.swarms[sid] if m != node),
                                                 target=node, source_swarm=sid))
        else:
            _dissolve(reg, plan, sid, blockhash)
    raise RuntimeError("rebalance did not converge")


def _create(reg: SwarmRegistry, plan: MigrationPlan, blockhash: bytes) -> None:
    chosen = sorted(reg.pool, key=lambda n: _seeded_rank(n, blockhash, "create"))[: reg.n_target]
    old_ids = reg.ids()
    sid = next_swarm_id(old_ids, reg.m)
    reg.pool = [n for n in reg.pool if n not in chosen]
    reg.swarms[sid] = sorted(chosen)
    reg.log.append(f"create swarm={sid} members={','.join(reg.swarms[sid])}")
    # records of the neighbouring swarms whose keys now map to the new id
    for nb in _neighbours(old_ids, sid, reg.m):
        plan.instructions.append(Instruction("route", tuple(reg.swarms[nb]), dest_swarm=sid,
                                             source_swarm=nb, ring_ids=tuple(reg.ids())))


def _neighbours(ids: list[int], sid: int, m: int) -> list[int]:
    if not ids:
        return []
    ordered = sorted(ids)
    i = bisect.bisect_left(ordered, sid)
    return sorted({ordered[i % len(ordered)], ordered[(i - 1) % len(ordered)]})


def _dissolve(reg: SwarmRegistry, plan: MigrationPlan, sid: int, blockhash: bytes) -> None:
    members = reg.swarms.pop(sid)
    reg.log.append(f"dissolve swarm={sid} members={','.join(members)}")
    # one instruction per destination: each record maps to exactly one swarm
    for dest in reg.ids():
        plan.instructions.append(Instruction("route", tuple(members), dest_swarm=dest,
                                             source_swarm=sid, ring_ids=tuple(reg.ids())))
    for node in members:
        plan.instructions.append(Instruction("erase", (node,), target=node))
        _place(reg, plan, node, blockhash)


def genesis(nodes: Sequence[str], blockhash: bytes = b"", m: int = RING_SIZE) -> SwarmRegistry:
    """Initial layout for a network that starts with ``nodes`` registered at
    once: about ``len(nodes) // N_TARGET`` swarms, never more than
    ``N_MAX`` per swarm, filled round robin in seeded order so sizes differ
    by at most one."""
    reg = SwarmRegistry(m=m)
    if not nodes:
        return reg
    count = max(1, len(nodes) // reg.n_target, -(-len(nodes) // reg.n_max))
    ids: list[int] = []
    for _ in range(count):
        ids.append(next_swarm_id(ids, m))
    order = sorted(nodes, key=lambda n: _seeded_rank(n, blockhash, "genesis"))
    for sid in ids:
        reg.swarms[sid] = []
    for i, node in enumerate(order):
        reg.swarms[ids[i % count]].append(node)
    for sid in ids:
        reg.swarms[sid].sort()
        reg.log.append(f"genesis swarm={sid} members={','.join(reg.swarms[sid])}")
    return reg
