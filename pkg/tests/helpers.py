"""Seeded scenario generators shared by the protocol suites and the acceptance run."""

from __future__ import annotations

import random
import textwrap

from cobalt import scenario
from cobalt.common import NodeContext


def loads(text: str) -> scenario.Scenario:
    return scenario.loads(textwrap.dedent(text))


def ids(n: int, prefix: str = "n") -> list[str]:
    return [f"{prefix}{x}" for x in range(n)]


class FakeCrs:
    """Coin service stub: records sample requests and fires them on demand."""

    def __init__(self) -> None:
        self.requests: dict = {}

    def sample(self, tag, space, callback=None, at=None) -> None:
        self.requests.setdefault(tag, []).append(callback)

    def fire(self, tag, value: int) -> None:
        for cb in self.requests.pop(tag, []):
            if cb is not None:
                cb(value)


def ctx_for(node: str, config) -> NodeContext:
    ctx = NodeContext(node, config.subsets(node))
    ctx.crs = FakeCrs()
    return ctx


def _adversary(rng: random.Random, byz: list, honest: list) -> dict:
    kind = rng.choice(["uniform", "partition", "target", "fifo"])
    ad = {"delay": kind, "max_delay": rng.randint(1, 12), "fairness": rng.randint(20, 200)}
    if kind == "partition":
        nodes = honest + byz
        rng.shuffle(nodes)
        cut = len(nodes) // 2
        ad["groups"] = [nodes[:cut], nodes[cut:]]
    if kind == "target":
        ad["targets"] = rng.sample(honest, 1)
    if byz:
        ad["script"] = rng.choice(["equivocate", "random", "silent", "equivocate"])
    return ad


def rbc_doc(seed: int) -> dict:
    """Reliable broadcast on 4 to 7 nodes with maximal in-bound faults.

    Every third seed builds a locality scenario instead: a focal group of
    four shares one valid subset while every other node trusts a subset
    overrun by Byzantine nodes.
    """
    rng = random.Random(seed)
    if seed % 3 == 2:
        return _rbc_locality(rng)
    n = rng.randint(4, 7)
    nodes = ids(n)
    t = (n - 1) // 3
    byz = rng.sample(nodes, t)
    honest = [i for i in nodes if i not in byz]
    bcs = sorted(set(byz[:1] + rng.sample(honest, rng.randint(0, 2))))
    doc = {
        "protocol": "rbc",
        "tick_budget": 4000,
        "nodes": {"ids": nodes, "complete_t": t},
        "faults": {"byzantine": byz},
        "adversary": _adversary(rng, byz, honest),
        "inputs": {"broadcasters": bcs, "content": {b: f"M-{b}" for b in bcs},
                   "expect_accept": True},
    }
    return doc


def _rbc_locality(rng: random.Random) -> dict:
    focal = ids(4, "f")
    extra = rng.randint(1, 3)
    others = ids(extra, "x")
    outer_byz = ids(rng.randint(2, 3), "z")
    fbyz = rng.sample(focal, 1)
    nodes = focal + others + outer_byz
    outer = others + outer_byz
    k = len(outer)
    t_out = max(0, (k - 1) // 3)
    subsets = [
        {"owners": focal, "members": focal, "t": 1, "q": 3},
        {"owners": outer, "members": outer, "t": t_out, "q": k - t_out},
    ]
    byz = fbyz + outer_byz
    honest = [i for i in nodes if i not in byz]
    bcs = sorted(fbyz + outer_byz[:1])
    return {
        "protocol": "rbc",
        "tick_budget": 4000,
        "nodes": {"ids": nodes},
        "subsets": subsets,
        "faults": {"byzantine": byz},
        "adversary": _adversary(rng, byz, honest),
        "inputs": {"broadcasters": bcs, "content": {b: f"M-{b}" for b in bcs}},
    }


def abba_doc(seed: int, strategy: str) -> dict:
    """Four nodes, t = 1, 2-2 split inputs; one crash or one active Byzantine node."""
    rng = random.Random(seed)
    nodes = ids(4)
    vals = [0, 0, 1, 1]
    rng.shuffle(vals)
    victim = rng.choice(nodes)
    doc = {"protocol": "abba", "tick_budget": 50_000,
           "nodes": {"ids": nodes, "complete_t": 1},
           "inputs": {"values": dict(zip(nodes, vals)), "round_cap": 30}}
    honest = [i for i in nodes if i != victim]
    if strategy == "crash":
        doc["faults"] = {"crash_at": {victim: rng.randint(0, 40)}}
        doc["adversary"] = {"delay": rng.choice(["uniform", "fifo"]), "max_delay": rng.randint(1, 10)}
    else:
        doc["faults"] = {"byzantine": [victim]}
        ad = _adversary(rng, [victim], honest)
        ad["script"] = rng.choice(["equivocate", "random", "silent"])
        doc["adversary"] = ad
    return doc


def mvba_doc(n_values: int) -> dict:
    return {"protocol": "mvba", "tick_budget": 50_000,
            "nodes": {"ids": ids(4), "complete_t": 1},
            "inputs": {"n_values": n_values, "spread": 3}}


def dabc_doc(seed: int) -> dict:
    """Competing proposals, CHECK/ACCEPT withholding, one Byzantine node."""
    rng = random.Random(seed)
    nodes = ids(4)
    byz = rng.sample(nodes, 1) if seed % 2 else []
    honest = [i for i in nodes if i not in byz]
    props = []
    for k in range(rng.randint(2, 4)):
        props.append({"node": rng.choice(honest), "at": rng.randint(0, 60),
                      "payload": f"P{k}", "slot": rng.choice([0, 0, 1])})
    if rng.random() < 0.3:
        props.append({"node": rng.choice(honest), "at": rng.randint(40, 90),
                      "payload": f"ALLOW:{rng.choice(honest)}", "slot": 1})
    ad = {"delay": "withhold", "labels": ["CHECK", "ACCEPT"], "until": rng.randint(0, 80),
          "max_delay": rng.randint(1, 6), "targets": rng.sample(nodes, rng.randint(0, 2))}
    if byz:
        ad["script"] = rng.choice(["random", "equivocate", "silent"])
    return {
        "protocol": "dabc", "tick_budget": 3000,
        "nodes": {"ids": nodes, "complete_t": 1},
        "faults": {"byzantine": byz},
        "adversary": ad,
        "time": {"tick_interval": 10, "advance": rng.choice([10, 20, 30]), "last_boundary": 200},
        "proposals": props,
        "waits": sorted(rng.sample(range(20, 180, 10), 2)),
        "inputs": {"expect_slots": 1 if any(p["slot"] == 0 for p in props) else 0},
    }


def tx_doc(seed: int) -> dict:
    """Kill view 1 at a random tick; every fourth seed makes all of view 1 Byzantine."""
    rng = random.Random(seed)
    v1 = {"id": 1, "members": ids(4, "m"), "t": 1}
    if seed % 4 == 3:
        v1["byzantine"] = list(v1["members"])
    v2 = {"id": 2, "members": ids(4, "w"), "t": 1}
    doc = {
        "protocol": "txorder", "tick_budget": 4000,
        "nodes": {"ids": ids(4, "c"), "complete_t": 1},
        "views": [v1, v2],
        "adversary": {"delay": rng.choice(["uniform", "fifo"]), "max_delay": rng.randint(1, 6),
                      "script": rng.choice(["equivocate", "random", "silent"])},
        "tx": {"kill_view": 1, "kill_range": [5, 200], "vc_timeout": 60,
               "block_interval": rng.randint(3, 8)},
    }
    return doc


def fallback_doc(seed: int) -> dict:
    rng = random.Random(seed)
    return {
        "protocol": "txorder", "tick_budget": 6000,
        "nodes": {"ids": ids(4, "c"), "complete_t": 1},
        "views": [{"id": 1, "members": ids(4, "m"), "t": 1}],
        "adversary": {"delay": "uniform", "max_delay": rng.randint(1, 6)},
        "tx": {"fallback_now": True, "fallback_random": rng.randint(1, 3)},
    }


def parse(doc: dict) -> scenario.Scenario:
    return scenario.parse(doc)


# one line per acceptance criterion, printed in the pytest terminal summary
RESULTS: list[str] = []
