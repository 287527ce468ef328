"""Command line entry point: ``swarmmsg simulate | pow | swarm | inspect``."""

from __future__ import annotations

import argparse
import hashlib
import sys

from . import pow as pow_
from .core import EnvelopeError, Envelope, pack_store_request, unpack_store_request
from .ring import RingError, SwarmRegistry, assign_pubkey, reduce_pubkey
from .sim.config import ScenarioError, load_scenario
from .sim.world import format_metrics, run


class UsageError(Exception):
    pass


def _scenario(path: str, seed: int | None):
    try:
        sc = load_scenario(path)
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    if seed is not None:
        sc.config.seed = seed
    return sc


def _write(path: str | None, text: str) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_simulate(args) -> int:
    sc = _scenario(args.scenario, args.seed)
    result = run(sc.config)
    metrics = format_metrics(result.metrics)
    _write(args.metrics_out, metrics)
    _write(args.log_out, result.log_text)
    _write(args.ledger_out, result.world.ledger.export_csv())
    if args.observer_out:
        _write(args.observer_out, "".join(l + "\n" for l in result.world.observer_log()))
    if not args.metrics_out:
        sys.stdout.write(metrics)
    failed = 0
    for a in sc.assertions:
        problem = a.check(result.metrics, result.log_text)
        print(f"{'PASS' if problem is None else 'FAIL'} {a}" + (f" ({problem})" if problem else ""))
        failed += problem is not None
    print(f"scenario {sc.name} seed={sc.config.seed}: "
          f"{len(sc.assertions) - failed}/{len(sc.assertions)} assertions passed")
    return 2 if failed else 0


def _payload(args) -> bytes:
    if args.payload_hex is not None:
        try:
            return bytes.fromhex(args.payload_hex)
        except ValueError:
            raise UsageError("--payload-hex is not valid hex") from None
    if args.text is not None:
        return args.text.encode()
    raise UsageError("give --payload-hex or --text")


def _recipient(value: str) -> bytes:
    try:
        key = bytes.fromhex(value)
    except ValueError:
        raise UsageError("--recipient is not valid hex") from None
    if len(key) == 33 and key[0] == 0x05:
        key = key[1:]
    if len(key) != 32:
        raise UsageError("--recipient must be 32 key bytes (or 05 + key)")
    return key


def cmd_pow_mine(args) -> int:
    if args.difficulty is not None:
        if args.recipient is None:
            raise UsageError("envelope mode needs --recipient")
        env = Envelope(_recipient(args.recipient), args.ttl, args.timestamp, _payload(args))
        verdict_env = pow_.mine_envelope(env, args.difficulty, max_attempts=args.max_attempts)
        threshold = pow_.compute_threshold(args.difficulty, env.ttl, len(env.ciphertext))
        print(f"nonce={verdict_env.nonce}")
        print(f"threshold={threshold}")
        print(f"request={pack_store_request(verdict_env).hex()}")
        return 0
    if args.threshold is None:
        raise UsageError("give --threshold (raw payload) or --difficulty (envelope)")
    res = pow_.mine(_payload(args), args.threshold, args.start_nonce, args.max_attempts)
    print(f"nonce={res.nonce} hash_head={res.hash_head:016x} attempts={res.attempts}")
    return 0


def cmd_pow_verify(args) -> int:
    if args.request_hex is not None:
        if args.difficulty is None:
            raise UsageError("--request-hex needs --difficulty")
        try:
            env = unpack_store_request(bytes.fromhex(args.request_hex))
        except (ValueError, EnvelopeError) as exc:
            print(f"reject reason=malformed ({exc})")
            return 1
        v = pow_.verify(env, args.difficulty, args.now_ms)
        print(f"{'accept' if v else 'reject'} reason={v.reason} threshold={v.threshold} "
              f"hash_head={v.hash_head:016x}")
        return 0 if v else 1
    if args.threshold is None or args.nonce is None:
        raise UsageError("raw mode needs --nonce and --threshold")
    digest = hashlib.sha512(_payload(args)).digest()
    head = pow_.hash_head(digest, args.nonce)
    ok = head < args.threshold
    print(f"{'accept' if ok else 'reject'} threshold={args.threshold} hash_head={head:016x}")
    return 0 if ok else 1


def cmd_swarm_map(args) -> int:
    if args.registry:
        with open(args.registry, encoding="utf-8") as fh:
            ids = SwarmRegistry.parse(fh.read()).ids()
    elif args.swarms:
        ids = sorted(int(s, 0) for s in args.swarms.split(","))
    else:
        ids = [0]
    if not ids:
        raise UsageError("no swarms to map onto")
    with open(args.keys, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                key = _recipient(line)
            except UsageError:
                raise UsageError(f"{args.keys}:{lineno}: not a 32-byte hex key") from None
            point = reduce_pubkey(key)
            print(f"{line} -> {assign_pubkey(key, ids)} (point {point})")
    return 0


def cmd_inspect(args) -> int:
    sc = _scenario(args.scenario, args.seed)
    world = run(sc.config).world
    node = world.nodes.get(args.node)
    if node is None:
        print(f"unknown node {args.node}", file=sys.stderr)
        return 1
    store = node.store
    reports = [e for e in world.ledger.entries if e.tested == args.node]
    recipients = len({r.envelope.recipient for r in store.records()})
    swarm = world.registry.swarm_of(args.node)
    status = world.ledger.status(args.node) if node.active or args.node in world.ledger.decommissioned else "left"
    print(f"node={args.node}")
    print(f"profile={node.profile}")
    print(f"status={status}")
    print(f"swarm={'-' if swarm is None else swarm}")
    print(f"records={len(store)}")
    print(f"bytes={store.bytes_used()}")
    print(f"recipients={recipients}")
    print(f"tests_passed={sum(e.passed for e in reports)}")
    print(f"tests_failed={sum(not e.passed for e in reports)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmmsg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and check its assertions")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--metrics-out")
    s.add_argument("--log-out")
    s.add_argument("--ledger-out")
    s.add_argument("--observer-out")
    s.set_defaults(fn=cmd_simulate)

    pw = sub.add_parser("pow", help="proof of work tools").add_subparsers(dest="pow_command", required=True)
    for name, fn in (("mine", cmd_pow_mine), ("verify", cmd_pow_verify)):
        q = pw.add_parser(name)
        q.add_argument("--payload-hex")
        q.add_argument("--text")
        q.add_argument("--threshold", type=lambda v: int(v, 0))
        q.add_argument("--difficulty", type=int)
        q.set_defaults(fn=fn)
        if name == "mine":
            q.add_argument("--recipient", help="hex key for envelope mode")
            q.add_argument("--ttl", type=int, default=86_400)
            q.add_argument("--timestamp", type=int, default=0)
            q.add_argument("--start-nonce", type=int, default=0)
            q.add_argument("--max-attempts", type=int, default=pow_.DEFAULT_ATTEMPT_CAP)
        else:
            q.add_argument("--nonce", type=int)
            q.add_argument("--request-hex", help="nonce || payload as produced by mine")
            q.add_argument("--now-ms", type=int)

    sw = sub.add_parser("swarm", help="swarm tools").add_subparsers(dest="swarm_command", required=True)
    m = sw.add_parser("map", help="map public keys onto swarm ids")
    m.add_argument("--keys", required=True, help="file with one hex public key per line")
    m.add_argument("--registry", help="registry export ('swarm <id>: members' lines)")
    m.add_argument("--swarms", help="comma separated swarm ids")
    m.set_defaults(fn=cmd_swarm_map)

    i = sub.add_parser("inspect", help="run a scenario and summarise one node's store")
    i.add_argument("--node", required=True)
    i.add_argument("--scenario", required=True)
    i.add_argument("--seed", type=int)
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors; we use 1
        return 0 if exc.code == 0 else 1
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, RingError, EnvelopeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except pow_.PowExhausted as exc:
        print(f"error: no nonce found in {exc.attempts} attempts", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
