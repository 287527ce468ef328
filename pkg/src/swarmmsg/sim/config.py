"""Scenario files.

A scenario is line oriented::

    simver 1
    [sim]
    nodes = 50
    [events]
    20 = kill c001
    [assert]
    delivery_rate.min = 1.0
    log_absent = knowledge-violation

``#`` starts a comment.  Keys in ``[events]`` are simulated seconds and may
repeat; ``log_absent`` may repeat.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

SIMVER = "simver 1"

EVENT_ACTIONS = ("kill", "revive", "leave", "join", "difficulty")


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class SimConfig:
    seed: int = 1
    nodes: int = 50
    clients: int = 10
    duration_s: int = 60
    latency_ms: int = 40
    jitter_ms: int = 10
    drop_rate: float = 0.0
    block_interval_s: float = 2.0
    difficulty: int = 1
    ttl_s: int = 86_400
    crypto: str = "real"  # real | fast
    preload: int = 0  # records placed on their swarms before t=0
    anti_entropy_s: float = 10.0
    # traffic
    messages: int = 3  # text messages per side per conversation
    interval_s: float = 2.0
    start_s: float = 0.0
    sync: bool = False
    warmup: int = 0  # async messages before waiting for the sync handshake
    sync_wait_s: float = 0.0
    poll_s: float = 2.0
    pull_s: float = 0.5
    refresh_every_s: float = 15.0
    refreshes: int = 0  # refreshes per client, 0 = unlimited while running
    # churn
    leave_fraction: float = 0.0
    churn_at_s: float = 0.0
    churn_spread_s: float = 0.0
    joins: int = 0
    # adversaries
    cheaters: int = 0
    droppers: int = 0
    observers: int = 0
    liars: int = 0
    events: list[tuple[float, str, str]] = field(default_factory=list)

    def validate(self) -> None:
        if self.nodes < 1:
            raise ScenarioError("nodes must be >= 1")
        if self.clients < 0 or self.duration_s <= 0:
            raise ScenarioError("clients must be >= 0 and duration_s > 0")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ScenarioError("drop_rate must be in [0, 1)")
        if not 0.0 <= self.leave_fraction < 1.0:
            raise ScenarioError("leave_fraction must be in [0, 1)")
        if self.crypto not in ("real", "fast"):
            raise ScenarioError("crypto must be 'real' or 'fast'")
        if self.block_interval_s <= 0 or self.difficulty < 1:
            raise ScenarioError("block_interval_s must be > 0 and difficulty >= 1")
        if self.cheaters + self.droppers + self.observers + self.liars >= self.nodes:
            raise ScenarioError("adversaries must leave at least one ordinary node")


# which scenario keys map onto which config field
_SECTIONS: dict[str, dict[str, str]] = {
    "sim": {k: k for k in ("seed", "nodes", "clients", "duration_s", "latency_ms", "jitter_ms",
                           "drop_rate", "block_interval_s", "difficulty", "ttl_s", "crypto",
                           "preload", "anti_entropy_s")},
    "traffic": {k: k for k in ("messages", "interval_s", "start_s", "sync", "warmup", "sync_wait_s",
                               "poll_s", "pull_s", "refresh_every_s", "refreshes")},
    "churn": {"leave_fraction": "leave_fraction", "at_s": "churn_at_s", "spread_s": "churn_spread_s",
              "joins": "joins"},
    "adversaries": {k: k for k in ("cheaters", "droppers", "observers", "liars")},
}

_TYPES = {f.name: f.type for f in dataclasses.fields(SimConfig)}


@dataclass(frozen=True)
class Assertion:
    metric: str
    op: str  # min | max | eq | log_absent
    value: float | str
    line: int

    def check(self, metrics: dict[str, float], log_text: str) -> str | None:
        """None on success, else a description of the failure."""
        if self.op == "log_absent":
            if self.value in log_text:
                return f"log contains {self.value!r}"
            return None
        if self.metric not in metrics:
            return f"unknown metric {self.metric}"
        got = metrics[self.metric]
        ok = {"min": got >= self.value, "max": got <= self.value,
              "eq": abs(got - self.value) <= 1e-9}[self.op]
        return None if ok else f"{self.metric}={got} fails {self.op} {self.value}"

    def __str__(self) -> str:
        if self.op == "log_absent":
            return f"log_absent {self.value}"
        return f"{self.metric}.{self.op} {self.value}"


@dataclass
class Scenario:
    config: SimConfig
    assertions: list[Assertion]
    name: str = "scenario"


def _coerce(name: str, raw: str, line: int):
    kind = _TYPES[name]
    try:
        if kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind == "int":
            return int(raw, 0)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ScenarioError(f"bad value {raw!r} for {name}", line) from None


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    lines = text.splitlines()
    first = next((i for i, l in enumerate(lines) if l.split("#", 1)[0].strip()), None)
    if first is None or lines[first].split("#", 1)[0].strip() != SIMVER:
        raise ScenarioError(f"first line must be '{SIMVER}'", (first or 0) + 1)
    cfg = SimConfig()
    assertions: list[Assertion] = []
    section = None
    for no, raw in enumerate(lines[first + 1 :], start=first + 2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError(f"malformed section header {line!r}", no)
            section = line[1:-1].strip()
            if section not in _SECTIONS and section not in ("events", "assert"):
                raise ScenarioError(f"unknown section [{section}]", no)
            continue
        if "=" not in line:
            raise ScenarioError(f"expected 'key = value', got {line!r}", no)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key or not value:
            raise ScenarioError("empty key or value", no)
        if section is None:
            raise ScenarioError("key outside of any section", no)
        if section == "events":
            try:
                at = float(key)
            except ValueError:
                raise ScenarioError(f"event time {key!r} is not a number", no) from None
            parts = value.split()
            if len(parts) != 2 or parts[0] not in EVENT_ACTIONS:
                raise ScenarioError(f"event must be '<{'|'.join(EVENT_ACTIONS)}> <target>'", no)
            cfg.events.append((at, parts[0], parts[1]))
        elif section == "assert":
            assertions.append(_parse_assertion(key, value, no))
        else:
            fields = _SECTIONS[section]
            if key not in fields:
                raise ScenarioError(f"unknown key {key!r} in [{section}]", no)
            setattr(cfg, fields[key], _coerce(fields[key], value, no))
    try:
        cfg.validate()
    except ScenarioError as exc:
        raise ScenarioError(str(exc), len(lines)) from None
    cfg.events.sort(key=lambda e: e[0])
    return Scenario(cfg, assertions, name)


def _parse_assertion(key: str, value: str, no: int) -> Assertion:
    if key == "log_absent":
        return Assertion("", "log_absent", value, no)
    metric, _, op = key.rpartition(".")
    if op not in ("min", "max", "eq") or not metric:
        raise ScenarioError(f"assertion key must be <metric>.min|max|eq or log_absent, got {key!r}", no)
    try:
        return Assertion(metric, op, float(value), no)
    except ValueError:
        raise ScenarioError(f"assertion bound {value!r} is not a number", no) from None


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_scenario(text, name=path.rsplit("/", 1)[-1].rsplit(".", 1)[0])
