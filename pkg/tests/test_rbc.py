from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from cobalt import drivers
from cobalt.common import Message, NodeContext, ProtocolViolation
from cobalt.rbc import OPPOSE, SUPPORT, RbcInstance
from cobalt.topology import TrustConfig

import helpers

CFG = TrustConfig.complete("abcd", 1)
TAG = ("rbc", "a")


def inst(node="b", **kw):
    return RbcInstance(NodeContext(node, CFG.subsets(node)), TAG, "a", **kw)


def deliver(i, label, content, *senders):
    for s in senders:
        i.handle(Message(TAG, label, (content,), s))
    return [(m.label, m.payload[0]) for m in i.ctx.drain()]


def test_broadcaster_emits_one_init():
    a = inst("a")
    a.start_broadcast("M")
    assert [(m.label, m.payload) for m in a.ctx.drain()] == [("INIT", ("M",))]
    with pytest.raises(ProtocolViolation):
        a.start_broadcast("M")


def test_only_the_broadcaster_may_start():
    with pytest.raises(ProtocolViolation):
        inst("b").start_broadcast("M")


def test_init_from_non_broadcaster_ignored():
    b = inst()
    assert deliver(b, "INIT", "M", "c") == []


def test_echo_ready_accept_sequence():
    b = inst()
    assert deliver(b, "INIT", "M", "a") == [("ECHO", "M")]
    assert deliver(b, "ECHO", "M", "a", "b") == []
    assert deliver(b, "ECHO", "M", "c") == [("READY", "M")]
    assert deliver(b, "READY", "M", "a", "b") == []
    assert not b.has_accepted
    deliver(b, "READY", "M", "c")
    assert b.has_accepted and b.accepted == "M"


def test_empty_content_is_opaque():
    b = inst()
    deliver(b, "INIT", "", "a")
    deliver(b, "ECHO", "", "a", "b", "c")
    deliver(b, "READY", "", "a", "b", "c")
    assert b.has_accepted and b.accepted == ""


def test_weak_echo_support_triggers_echo_without_init():
    b = inst()
    assert deliver(b, "ECHO", "M", "c", "d") == [("ECHO", "M")]


def test_weak_ready_support_amplifies():
    b = inst()
    assert deliver(b, "READY", "M", "c", "d") == [("READY", "M")]


def test_single_message_rule_and_first_content_wins():
    b = inst()
    deliver(b, "INIT", "M1", "a")
    deliver(b, "INIT", "M2", "a")
    deliver(b, "ECHO", "M1", "c")
    deliver(b, "ECHO", "M2", "c")
    assert b.echo_from == {"c": "M1"}
    assert b.equivocations == 2
    out = deliver(b, "ECHO", "M2", "a", "b", "d")
    assert out == [("READY", "M2")]
    assert b.echo_sent == "M1"  # one ECHO ever


def test_opposed_content_is_never_echoed():
    b = inst(predicate=lambda c: OPPOSE)
    assert deliver(b, "INIT", "M", "a") == []
    assert deliver(b, "ECHO", "M", "c", "d") == []
    # READY amplification is not gated by support
    assert deliver(b, "READY", "M", "c", "d") == [("READY", "M")]


def test_support_verdict_cannot_flip():
    b = inst(democratic=True)
    b.set_support("M", SUPPORT)
    with pytest.raises(ProtocolViolation):
        b.set_support("M", OPPOSE)


def test_late_support_releases_echo():
    b = inst(democratic=True)
    assert deliver(b, "INIT", "M", "a") == []
    b.set_support("M", SUPPORT)
    assert [(m.label, m.payload[0]) for m in b.ctx.drain()] == [("ECHO", "M")]


# simulations


def test_honest_broadcaster_everyone_accepts():
    sc = helpers.loads("""
        protocol = "rbc"
        [nodes]
        ids = ["a", "b", "c", "d"]
        complete_t = 1
        [inputs]
        broadcasters = ["a"]
        content = { a = "M" }
        expect_accept = true
    """)
    for seed in range(20):
        res = drivers.run(sc, seed)
        assert res.ok, res.violations
        assert all(p.instances["a"].accepted == "M" for p in res.procs.values())


def test_silent_broadcaster_nobody_accepts():
    sc = helpers.loads("""
        protocol = "rbc"
        [nodes]
        ids = ["a", "b", "c", "d"]
        complete_t = 1
        [faults]
        byzantine = ["a"]
        [adversary]
        script = "silent"
        [inputs]
        broadcasters = ["a"]
    """)
    res = drivers.run(sc, 1)
    assert res.ok and res.stats["accepts"] == 0


def test_drbc_all_oppose_nobody_accepts():
    sc = helpers.loads("""
        protocol = "drbc"
        [nodes]
        ids = ["a", "b", "c", "d"]
        complete_t = 1
        [inputs]
        broadcasters = ["a"]
        content = { a = "M" }
        support = { a = [], b = [], c = [], d = [] }
    """)
    for seed in range(10):
        res = drivers.run(sc, seed)
        assert res.ok and res.stats["accepts"] == 0


def test_drbc_all_support_behaves_like_rbc():
    sc = helpers.loads("""
        protocol = "drbc"
        [nodes]
        ids = ["a", "b", "c", "d"]
        complete_t = 1
        [inputs]
        broadcasters = ["a"]
        content = { a = "M" }
        expect_accept = true
    """)
    res = drivers.run(sc, 3)
    assert res.ok and res.stats["accepts"] == 4


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_drbc_democracy_under_mixed_support(seed):
    rng = random.Random(seed)
    nodes = helpers.ids(7)
    byz = rng.sample(nodes, 2)
    support = {i: (["M"] if rng.random() < 0.5 else []) for i in nodes}
    doc = {"protocol": "drbc", "nodes": {"ids": nodes, "complete_t": 2},
           "faults": {"byzantine": byz},
           "adversary": {"script": rng.choice(["equivocate", "random"]),
                         "max_delay": rng.randint(1, 9)},
           "inputs": {"broadcasters": [nodes[0]], "content": {nodes[0]: "M"}, "support": support}}
    res = drivers.run(helpers.parse(doc), seed)
    assert not res.violations["democracy"]
    assert not res.violations["consistency"]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_consistency_and_validity_fuzz(seed):
    res = drivers.run(helpers.parse(helpers.rbc_doc(seed)), seed)
    assert res.ok, res.violations


def test_locality_bystanders_cannot_break_focal_group():
    for seed in range(2, 60, 3):
        doc = helpers.rbc_doc(seed)
        assert "subsets" in doc
        res = drivers.run(helpers.parse(doc), seed)
        assert not res.violations["consistency"], res.violations
