"""Run-log assertions shared by the harness, the sweeps and the tests.

Every check takes the run's outputs and returns a list of human-readable
violation strings; an empty list means the property held on that run.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Hashable, Iterable

from .simnet import RunRecord
from .topology import FaultAssignment, TrustConfig, linked


def _honest(faults: FaultAssignment, i) -> bool:
    return faults.honest(i)


def _linked_pairs(config: TrustConfig, faults: FaultAssignment, nodes: Iterable) -> list[tuple]:
    nodes = sorted(nodes, key=str)
    return [(i, j) for x, i in enumerate(nodes) for j in nodes[x + 1:]
            if linked(config, faults, i, j)]


def consistency(record: RunRecord, config: TrustConfig, faults: FaultAssignment, kind: str,
                key: str = "tag", value: str = "value") -> list[str]:
    """Linked honest nodes never output different values under the same key."""
    got: dict = defaultdict(dict)  # key -> node -> value
    for _, _, node, _, f in record.outputs(kind):
        if node in config.nodes and _honest(faults, node):
            got[_h(f.get(key))].setdefault(node, f[value])
    out = []
    for k, per in got.items():
        if len({_h(v) for v in per.values()}) < 2:
            continue
        for i, j in _linked_pairs(config, faults, per):
            if per[i] != per[j]:
                out.append(f"{kind} {k!r}: linked {i} and {j} output {per[i]!r} vs {per[j]!r}")
    return out


def _h(x) -> Hashable:
    if isinstance(x, list):
        return tuple(_h(v) for v in x)
    if isinstance(x, set):
        return frozenset(x)
    if isinstance(x, dict):
        return tuple(sorted((k, _h(v)) for k, v in x.items()))
    return x


# reliable broadcast


def rbc_validity(record: RunRecord, faults: FaultAssignment, inputs: dict) -> list[str]:
    """An honest broadcaster's instance accepts only its own content at honest nodes."""
    out = []
    for _, _, node, _, f in record.outputs("rbc_accept"):
        b = f["tag"][1]
        if _honest(faults, b) and _honest(faults, node) and b in inputs and f["content"] != inputs[b]:
            out.append(f"{node} accepted {f['content']!r} from honest {b} who sent {inputs[b]!r}")
    return out


def democracy(config: TrustConfig, faults: FaultAssignment, node, content,
              supporters: set) -> bool:
    """Some subset of ``node`` where a majority of its honest members supported ``content``."""
    for s in config.subsets(node):
        honest = {m for m in s.members if _honest(faults, m)}
        if 2 * len(honest & supporters) > len(honest):
            return True
    return False


def rbc_democracy(record: RunRecord, config: TrustConfig, faults: FaultAssignment,
                  verdicts: dict) -> list[str]:
    """``verdicts[node][content]`` is the node's support verdict."""
    out = []
    for _, _, node, _, f in record.outputs("rbc_accept"):
        if not _honest(faults, node):
            continue
        c = f["content"]
        sup = {m for m, v in verdicts.items() if v.get(c) == "support"}
        if not democracy(config, faults, node, c, sup):
            out.append(f"{node} accepted {c!r} without a supporting majority in any subset")
    return out


# binary agreement


def abba_validity(record: RunRecord, faults: FaultAssignment) -> list[str]:
    """Every decided bit is the input of some honest node.

    This is the endpoint of the relay chain: an honest INIT for a value in
    round 0 traces back to an honest input, and later rounds carry only
    values already present.
    """
    inputs: dict = defaultdict(set)
    for _, _, node, _, f in record.outputs("abba_input"):
        if _honest(faults, node):
            inputs[_h(f["tag"])].add(f["value"])
    out = []
    for _, _, node, _, f in record.outputs("abba_decide"):
        if _honest(faults, node) and f["value"] not in inputs[_h(f["tag"])]:
            out.append(f"{node} decided {f['value']} which no honest node input")
    return out


def abba_coin_blindness(record: RunRecord, faults: FaultAssignment) -> list[str]:
    """Singleton step-10 values are fixed before the round's coin becomes visible.

    Per round: all honest singleton values agree, and some honest CONF
    carrying that value was logged before the first honest share reveal.
    """
    first_sample: dict = {}
    confs: dict = defaultdict(list)  # (tag, r) -> [(index, values)]
    for x, _, node, kind, f in record.outputs():
        if not _honest(faults, node):
            continue
        if kind == "crs_sample":
            t = _h(f["tag"])
            if len(t) >= 2 and t[-2] == "coin":
                first_sample.setdefault((t[:-2], t[-1]), x)
        elif kind == "abba_conf":
            confs[(_h(f["tag"]), f["round"])].append((x, frozenset(f["values"])))
    singles: dict = defaultdict(set)
    for _, _, node, _, f in record.outputs("abba_round"):
        if _honest(faults, node) and len(f["values"]) == 1:
            singles[(_h(f["tag"]), f["round"])].add(next(iter(f["values"])))
    out = []
    for key, vals in singles.items():
        if len(vals) > 1:
            out.append(f"round {key}: honest singleton values disagree {sorted(vals)}")
            continue
        (v,) = vals
        seen = first_sample.get(key)
        if seen is None or not any(x < seen and v in vs for x, vs in confs[key]):
            out.append(f"round {key}: value {v} not fixed before the coin was revealed")
    return out


def abba_est_lock(record: RunRecord, faults: FaultAssignment) -> list[str]:
    """After a singleton round that matched the coin, later honest rounds carry only that value."""
    fixed: dict = {}
    rows = [f for _, _, n, _, f in record.outputs("abba_round") if _honest(faults, n)]
    for f in rows:
        if set(f["values"]) == {f["coin"]}:
            k = _h(f["tag"])
            fixed[k] = min(fixed.get(k, (f["round"], f["coin"])), (f["round"], f["coin"]))
    out = []
    for f in rows:
        k = _h(f["tag"])
        if k in fixed and f["round"] >= fixed[k][0]:
            r0, s = fixed[k]
            if f["est"] != s or (f["round"] > r0 and set(f["values"]) != {s}):
                out.append(f"{k} round {f['round']}: est {f['est']} after lock on {s} at {r0}")
    return out


# multi-valued agreement


def mvba_validity(procs: dict, faults: FaultAssignment, insts) -> list[str]:
    """``insts`` maps node -> list of Mvba instances to inspect."""
    out = []
    for node, lst in insts.items():
        if not _honest(faults, node):
            continue
        for m in lst:
            if m.has_decided and m.decided not in m._r(0).vset:
                out.append(f"{node} decided {m.decided!r} outside its values[0]")
    return out


def mvba_shrinkage(faults: FaultAssignment, insts) -> list[str]:
    """A node's round-(r+1) candidates drop some round-r value once round r failed."""
    out = []
    for node, lst in insts.items():
        if not _honest(faults, node):
            continue
        for m in lst:
            for r, rd in sorted(m.rounds.items()):
                nxt = m.rounds.get(r + 1)
                if nxt is None or not nxt.values or rd.abba is None or rd.abba.decided != 0:
                    continue
                if len(rd.vset) >= 2 and rd.vset <= nxt.vset:
                    out.append(f"{node} {m.tag} round {r}: candidates did not shrink")
    return out


# democratic atomic broadcast


def _ratifications(record: RunRecord, faults: FaultAssignment) -> dict:
    logs: dict = defaultdict(list)
    for x, _, node, _, f in record.outputs("ratify"):
        if _honest(faults, node):
            logs[node].append((x, f["slot"], _h(f["payload"]), f["activation"]))
    return logs


def dabc_agreement(record: RunRecord, faults: FaultAssignment) -> list[str]:
    per_slot: dict = defaultdict(set)
    for node, rows in _ratifications(record, faults).items():
        for _, slot, p, a in rows:
            per_slot[slot].add((p, a))
    return [f"slot {s}: conflicting ratifications {sorted(map(repr, v))}"
            for s, v in sorted(per_slot.items()) if len(v) > 1]


def dabc_linearizability(record: RunRecord, config: TrustConfig, faults: FaultAssignment) -> list[str]:
    logs = {n: [(s, p, a) for _, s, p, a in rows] for n, rows in _ratifications(record, faults).items()}
    out = []
    for i, j in _linked_pairs(config, faults, logs):
        a, b = logs[i], logs[j]
        k = min(len(a), len(b))
        if a[:k] != b[:k]:
            out.append(f"ratification logs of {i} and {j} are not prefix-equal")
    return out


def dabc_democracy(record: RunRecord, config: TrustConfig, faults: FaultAssignment) -> list[str]:
    """Witness from logged support verdicts, in the context of the ratified prefix."""
    support: dict = defaultdict(set)  # (payload, slot) -> nodes supporting
    for _, _, node, _, f in record.outputs("support"):
        if f["verdict"] == "support":
            support[_h(f["content"])].add(node)
    out = []
    for node, rows in _ratifications(record, faults).items():
        for _, slot, p, _ in rows:
            if not democracy(config, faults, node, (p, slot), support[(p, slot)]):
                out.append(f"{node} ratified {p!r} at slot {slot} without a supporting majority")
    return out


def dabc_full_knowledge(record: RunRecord, faults: FaultAssignment) -> list[str]:
    rats = _ratifications(record, faults)
    out = []
    for x, _, node, _, f in record.outputs("known"):
        if not _honest(faults, node):
            continue
        tau = f["tau"]
        known = {(s, _h(p), a) for s, p, a in f["ratified"]}
        for y, s, p, a in rats.get(node, []):
            if y > x and a < tau and (s, p, a) not in known:
                out.append(f"{node}: slot {s} activation {a} ratified after knowing up to {tau}")
    return out


def dabc_slot_closure(record: RunRecord, faults: FaultAssignment) -> list[str]:
    closed: dict = defaultdict(set)
    out = []
    for _, _, node, kind, f in record.outputs():
        if kind in ("stamp", "ratify"):
            closed[node].add(f["slot"])
        elif kind == "pending" and f["slot"] in closed[node] and _honest(faults, node):
            out.append(f"{node} added a pending pair for closed slot {f['slot']}")
    return out


# transaction ordering


def tx_cross_view_safety(record: RunRecord, config: TrustConfig, faults: FaultAssignment) -> list[str]:
    acc: dict = defaultdict(dict)  # seq -> node -> block
    for _, _, node, _, f in record.outputs("tx_accept"):
        if node in config.nodes and _honest(faults, node):
            prev = acc[f["seq"]].setdefault(node, f["block"])
            if prev != f["block"]:
                return [f"{node} accepted two blocks at {f['seq']}"]
    out = []
    for n, per in sorted(acc.items()):
        if len(set(per.values())) < 2:
            continue
        for i, j in _linked_pairs(config, faults, per):
            if per[i] != per[j]:
                out.append(f"sequence {n}: {i} accepted {per[i]!r}, {j} accepted {per[j]!r}")
    return out


def tx_view_agreement(record: RunRecord, faults: FaultAssignment) -> list[str]:
    mins: dict = defaultdict(set)
    for _, _, node, _, f in record.outputs("adopt"):
        if _honest(faults, node):
            mins[f["view"]].add(f["min"])
    return [f"view {v}: adopted with different minimum sequences {sorted(m)}"
            for v, m in sorted(mins.items()) if len(m) > 1]


def tx_fallback_pins(record: RunRecord, faults: FaultAssignment, nodes) -> list[str]:
    """Every pinned block is ratified by every correct node by the end of the run."""
    pinned = {_h(f["block"]) for _, _, n, _, f in record.outputs("fb_pin") if _honest(faults, n)}
    rat: dict = defaultdict(set)
    for _, _, n, _, f in record.outputs("fb_ratify"):
        rat[n].add(_h(f["block"]))
    out = []
    for n in nodes:
        if faults.correct(n):
            for b in sorted(pinned - rat[n], key=repr):
                out.append(f"{n} never ratified pinned block {b!r}")
    return out


def crs_consistency(record: RunRecord, config: TrustConfig, faults: FaultAssignment) -> list[str]:
    return consistency(record, config, faults, "crs_output")
