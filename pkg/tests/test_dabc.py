from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from cobalt import drivers
from cobalt.common import ConfigurationError, Message
from cobalt.dabc import Dabc, Ratification, TimeParams, amendment_id
from cobalt.rbc import OPPOSE, SUPPORT
from cobalt.topology import TrustConfig

import helpers

CFG = TrustConfig.complete("abcd", 1)
STAMP = ("dabc", "stamp")


def make(node="a", **kw):
    d = Dabc(helpers.ctx_for(node, CFG), TimeParams(10, 20), **kw)
    d._start_slot(0)
    return d


def sent(d):
    return [(m.label, m.payload) for m in d.ctx.drain()]


def test_time_params_validation():
    with pytest.raises(ConfigurationError):
        TimeParams(0)
    with pytest.raises(ConfigurationError):
        TimeParams(10, -1)


def test_amendment_ids_are_stable_and_slot_bound():
    assert amendment_id("X", 0) == amendment_id("X", 0)
    assert amendment_id("X", 0) != amendment_id("X", 1)
    assert Ratification(0, "X", 20).amendment == amendment_id("X", 0)


def test_propose_sends_init_of_pair():
    d = make()
    tag = d.propose("X", 0)
    assert tag == ("dabc", "drbc", "a", 0)
    assert sent(d) == [("INIT", (("X", 0),))]
    with pytest.raises(ConfigurationError):
        d.propose("X", -1)


def test_support_depends_on_slot_and_context():
    d = make(supports=lambda p, prefix: p != "BAD")
    assert d._predicate(("X", 0)) == SUPPORT
    assert d._predicate(("BAD", 0)) == OPPOSE
    assert d._predicate(("X", 1)) is None  # undecided until slot 0 ratifies
    assert d._predicate("junk") == OPPOSE


def test_tick_broadcasts_check_and_orders_boundaries():
    d = make()
    d.P.add(("X", 0))
    d.tick(0)
    assert sent(d) == [("CHECK", (frozenset({("X", 0)}), 0))]
    with pytest.raises(ConfigurationError):
        d.tick(5)
    with pytest.raises(ConfigurationError):
        d.tick(0)


def test_quorum_of_checks_yields_accept():
    d = make()
    pair = ("X", 0)
    for s in "ab":
        d.handle(Message(STAMP, "CHECK", (frozenset({pair}), 10), s))
    assert sent(d) == []
    d.handle(Message(STAMP, "CHECK", (frozenset({pair}), 10), "c"))
    assert sent(d) == [("ACCEPT", (pair, 10))]


def test_duplicate_check_sender_ignored():
    d = make()
    pair = ("X", 0)
    for s in "aaa":
        d.handle(Message(STAMP, "CHECK", (frozenset({pair}), 10), s))
    assert sent(d) == []


def test_malformed_check_is_counted_not_fatal():
    d = make()
    d.handle(Message(STAMP, "CHECK", (frozenset({0, 1}), 0), "b"))
    d.handle(Message(STAMP, "CHECK", (frozenset({("X", -1)}), 0), "b"))
    assert d.ctx.metrics["malformed"] == 2
    assert d.known(25) is None


def test_strong_accept_closes_slot_and_feeds_agreement():
    d = make()
    d.P = {("X", 0), ("Y", 0), ("Z", 1)}
    pair = ("X", 0)
    d.handle(Message(STAMP, "ACCEPT", (pair, 10), "b"))
    d.handle(Message(STAMP, "ACCEPT", (pair, 10), "c"))
    assert sent(d) == [("ACCEPT", (pair, 10))]  # weak support relays
    d.handle(Message(STAMP, "ACCEPT", (pair, 10), "a"))
    assert 0 in d.closed and d.P == {("Z", 1)}
    assert d.mvba[0].values() == [("X", 30)]  # activation = tau + advance


def test_known_waits_for_quorum_of_settled_checks():
    d = make()
    assert d.known(25) is None
    for s in "abc":
        d.handle(Message(STAMP, "CHECK", (frozenset(), 0), s))
    assert d.known(25) == []  # horizon 5 covers boundary 0 only
    assert d.known(35) is None  # needs boundary 10 as well


def test_pending_cap_counts_overflow():
    d = make(pending_cap=1)
    d._on_drbc_accept(("X", 0))
    d._on_drbc_accept(("Y", 0))
    assert d.P == {("X", 0)} and d.overflow == 1


def test_competing_proposals_scenario():
    sc = scenario_file()
    for seed in range(5):
        res = drivers.run(sc, seed)
        assert res.ok, res.violations
        assert res.stats["ratified"] == 2


def scenario_file():
    from pathlib import Path

    from cobalt import scenario

    return scenario.load(Path(__file__).parent.parent / "scenarios" / "dabc_compete.toml")


def test_opposed_payload_never_ratified():
    doc = helpers.dabc_doc(0)
    doc["faults"] = {"byzantine": []}
    doc["adversary"].pop("script", None)
    doc["proposals"] = [{"node": "n0", "at": 1, "payload": "BAD", "slot": 0},
                        {"node": "n1", "at": 1, "payload": "GOOD", "slot": 0}]
    doc["inputs"] = {"expect_slots": 1, "oppose": {i: ["BAD"] for i in helpers.ids(4)}}
    for seed in range(5):
        res = drivers.run(helpers.parse(doc), seed)
        assert res.ok, res.violations
        assert all(p.dabc.ratified[0].payload == "GOOD" for p in res.procs.values())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_dabc_properties_fuzz(seed):
    res = drivers.run(helpers.parse(helpers.dabc_doc(seed)), seed)
    assert res.ok, res.violations
