from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from cobalt import drivers
from cobalt.abba import Abba
from cobalt.common import Message, ProtocolViolation
from cobalt.topology import TrustConfig

import helpers

CFG = TrustConfig.complete("abcd", 1)
TAG = ("abba",)


def make(node="a"):
    ctx = helpers.ctx_for(node, CFG)
    return Abba(ctx, TAG)


def feed(x, label, payload, *senders):
    for s in senders:
        x.handle(Message(TAG, label, payload, s))
    return [(m.label, m.payload) for m in x.ctx.drain()]


def test_input_broadcasts_init():
    x = make()
    x.input(1)
    assert [(m.label, m.payload) for m in x.ctx.drain()] == [("INIT", (1, 0))]


def test_input_validation():
    x = make()
    with pytest.raises(ValueError):
        x.input(2)
    x.input(0)
    with pytest.raises(ProtocolViolation):
        x.input(1)


def test_weak_support_relays_other_value():
    x = make()
    x.input(0)
    x.ctx.drain()
    assert feed(x, "INIT", (1, 0), "b", "c") == [("INIT", (1, 0))]


def test_round_flow_to_coin_request():
    x = make()
    x.input(1)
    x.ctx.drain()
    assert feed(x, "INIT", (1, 0), "b", "c") == []
    assert feed(x, "INIT", (1, 0), "a") == [("AUX", (1, 0))]
    assert feed(x, "AUX", (1, 0), "a", "b", "c") == [("CONF", (frozenset({1}), 0))]
    feed(x, "CONF", ({1}, 0), "a", "b", "c")
    assert list(x.ctx.crs.requests) == [TAG + ("coin", 0)]


def reach_coin(values, others):
    """Drive node a of round 0 up to the coin request with the given value set."""
    x = make()
    x.input(min(values))
    for v in values:
        feed(x, "INIT", (v, 0), *others)
    for s in "abc":
        x.handle(Message(TAG, "AUX", (min(values), 0), s))
    feed(x, "CONF", (set(values), 0), "a", "b", "c")
    x.ctx.drain()
    return x


def test_single_value_matching_coin_sends_finish():
    x = reach_coin({1}, ["a", "b", "c"])
    x.ctx.crs.fire(TAG + ("coin", 0), 1)
    out = [(m.label, m.payload) for m in x.ctx.drain()]
    assert ("FINISH", (1,)) in out and ("INIT", (1, 1)) in out
    assert x.round == 1 and x.est[1] == 1


def test_single_value_other_coin_keeps_estimate():
    x = reach_coin({1}, ["a", "b", "c"])
    x.ctx.crs.fire(TAG + ("coin", 0), 0)
    out = [(m.label, m.payload) for m in x.ctx.drain()]
    assert ("FINISH", (1,)) not in out and x.est[1] == 1


@pytest.mark.parametrize("coin", [0, 1])
def test_both_values_adopt_coin(coin):
    x = reach_coin({0, 1}, ["a", "b", "c"])
    x.ctx.crs.fire(TAG + ("coin", 0), coin)
    assert x.est[1] == coin
    assert x.finish_sent is None


def test_finish_amplification_and_decision():
    x = make()
    assert feed(x, "FINISH", (0,), "b", "c") == [("FINISH", (0,))]
    got = []
    x.on_decide = got.append
    feed(x, "FINISH", (0,), "d")
    assert x.decided == 0 and got == [0]


def test_malformed_conf_counted():
    x = make()
    x.input(0)
    feed(x, "CONF", ({2}, 0), "b")
    feed(x, "CONF", (5, 0), "b")
    assert x.ctx.metrics["malformed"] == 2


def scenario(values, **extra):
    doc = {"protocol": "abba", "nodes": {"ids": list("abcd"), "complete_t": 1},
           "inputs": {"values": dict(zip("abcd", values)), "round_cap": 30}}
    doc.update(extra)
    return helpers.parse(doc)


@pytest.mark.parametrize("v", [0, 1])
def test_unanimous_inputs_decide_that_value(v):
    for seed in range(10):
        res = drivers.run(scenario([v] * 4), seed)
        assert res.ok, res.violations
        assert res.stats["decision"] == v


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["crash", "byz"]))
def test_agreement_on_split_inputs(seed, strategy):
    res = drivers.run(helpers.parse(helpers.abba_doc(seed, strategy)), seed)
    assert res.ok, res.violations
    assert res.stats["decision"] in (0, 1)
