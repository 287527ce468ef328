from swarmmsg.client import NodeList, refresh_node_list
from swarmmsg.onion import NodeInfo


def nl(*ids, key=b"\x01"):
    return NodeList(tuple(NodeInfo(i, key * 32) for i in ids), "test")


CUR = nl("a", "b")


def test_unanimous_responses_adopted():
    new, adopted = refresh_node_list(CUR, [nl("c", "a", "b"), nl("a", "b", "c"), nl("b", "c", "a")])
    assert adopted and new.ids() == ["a", "b", "c"] and new.source == "consensus-refresh"


def test_any_disagreement_keeps_current():
    resp = [nl("a", "b", "c"), nl("a", "b", "c"), nl("a", "b", "c", "x")]
    assert refresh_node_list(CUR, resp) == (CUR, False)


def test_key_mismatch_counts_as_disagreement():
    resp = [nl("a", "b"), nl("a", "b"), nl("a", "b", key=b"\x02")]
    assert refresh_node_list(CUR, resp) == (CUR, False)


def test_missing_or_empty_or_short_responses_keep_current():
    good = nl("a", "b", "c")
    assert refresh_node_list(CUR, [good, good]) == (CUR, False)
    assert refresh_node_list(CUR, [good, good, None]) == (CUR, False)
    assert refresh_node_list(CUR, [good, good, nl()]) == (CUR, False)


def test_wire_roundtrip():
    lst = nl("z", "a")
    assert NodeList.from_wire(lst.to_wire(), "x").canonical() == lst.canonical()
    assert lst.get("z").node_id == "z" and lst.get("q") is None
