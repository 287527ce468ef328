import random

import pytest

from swarmmsg.sim.config import ScenarioError, SimConfig, parse_scenario
from swarmmsg.sim.kernel import Future, Kernel, SimTimeout
from swarmmsg.sim.network import NO_REPLY, Network, Unreachable
from swarmmsg.sim.world import format_metrics, run


def test_kernel_orders_by_time_then_insertion():
    k, seen = Kernel(), []
    k.at(5, seen.append, "b")
    k.at(1, seen.append, "a")
    k.at(5, seen.append, "c")
    k.run(10)
    assert seen == ["a", "b", "c"] and k.now == 10


def test_processes_sleep_wait_and_gather():
    k = Kernel()
    f1, f2 = Future(), Future()

    def proc():
        yield 100
        got = yield f1
        both = yield [f2, k.sleep(5)]
        return (k.now, got, both)

    out = k.spawn(proc())
    k.schedule(150, f1.set_result, "x")
    k.schedule(160, f2.set_error, ValueError("boom"))
    k.run(1000)
    t, got, both = out.value
    assert (t, got) == (160, "x")  # sleep ends at 155, f2 fails at 160
    assert isinstance(both[0], ValueError) and both[1] is None


def test_errors_thrown_into_process():
    k = Kernel()

    def proc():
        try:
            yield k.with_timeout(Future(), 50)
        except SimTimeout:
            return k.now

    out = k.spawn(proc())
    k.run(100)
    assert out.value == 50


def test_network_request_and_timeout():
    k = Kernel()
    net = Network(k, random.Random(1), latency_ms=10, jitter_ms=0)
    net.register("a", lambda s, b: None)
    net.register("b", lambda s, b: ("echo", b))
    net.register("c", lambda s, b: NO_REPLY)
    r1 = net.request("a", "b", 7, 1000)
    r2 = net.request("a", "c", 7, 100)
    r3 = net.request("a", "zz", 7, 100)
    k.run(500)
    assert r1.value == ("echo", 7)
    assert isinstance(r2.error, SimTimeout) and isinstance(r3.error, Unreachable)


def test_network_offline_drops():
    k = Kernel()
    net = Network(k, random.Random(1), latency_ms=10, jitter_ms=0)
    got = []
    net.register("a", lambda s, b: None)
    net.register("b", lambda s, b: got.append(b))
    net.set_online("b", False)
    net.send("a", "b", 1)
    k.run(100)
    assert got == [] and net.dropped == 1


GOOD = """simver 1
# comment
[sim]
nodes = 12
crypto = fast
[traffic]
sync = yes
[churn]
at_s = 5
[events]
20 = kill c001
3 = leave n004
[assert]
delivery_rate.min = 1
log_absent = knowledge-violation
"""


def test_parse_scenario():
    sc = parse_scenario(GOOD, "demo")
    c = sc.config
    assert (c.nodes, c.crypto, c.sync, c.churn_at_s) == (12, "fast", True, 5.0)
    assert c.events == [(3.0, "leave", "n004"), (20.0, "kill", "c001")]
    assert [str(a) for a in sc.assertions] == ["delivery_rate.min 1.0", "log_absent knowledge-violation"]


@pytest.mark.parametrize("text,line", [
    ("simver 2\n", 1),
    ("simver 1\n[sim]\nnodes = 5\nbogus = 1\n", 4),
    ("simver 1\n[nope]\n", 2),
    ("simver 1\n[sim]\nnodes = five\n", 3),
    ("simver 1\nnodes = 5\n", 2),
    ("simver 1\n[events]\nsoon = kill n1\n", 3),
    ("simver 1\n[events]\n1 = explode n1\n", 3),
    ("simver 1\n[assert]\ndelivery_rate.avg = 1\n", 3),
    ("simver 1\n[sim]\nnodes = 0\n", 3),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert info.value.line == line
    assert f"line {line}:" in str(info.value)


def test_assertion_check():
    sc = parse_scenario("simver 1\n[assert]\nx.min = 2\nx.max = 3\nx.eq = 2\nlog_absent = bad\n")
    assert [a.check({"x": 2}, "ok") for a in sc.assertions] == [None, None, None, None]
    assert all(a.check({"x": 5}, "bad") for a in sc.assertions[1:])
    assert "unknown metric" in sc.assertions[0].check({}, "")


def test_small_world_runs_and_is_deterministic():
    cfg = SimConfig(seed=3, nodes=14, clients=2, duration_s=40, crypto="fast", messages=2)
    a, b = run(cfg), run(SimConfig(**vars(cfg)))
    assert a.log_text == b.log_text
    assert a.metrics["delivery_rate"] == 1.0 and a.metrics["messages_sent"] == 4
    assert "messages_sent=4\n" in format_metrics(a.metrics)
