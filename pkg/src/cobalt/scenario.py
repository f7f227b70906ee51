"""TOML scenario and topology files.

One parser serves both topology analysis and simulation. Surface syntax::

    protocol = "abba"          # rbc | drbc | abba | mvba | dabc | txorder
    tick_budget = 10000

    [nodes]
    ids = ["a", "b", "c", "d"]
    complete_t = 1             # shorthand: one all-node subset, q = n - t

    [[subsets]]                # explicit subsets (instead of complete_t)
    owners = ["a", "b"]        # default: every node
    members = ["a", "b", "c", "d"]
    t = 1
    q = 3                      # default: n - t

    [faults]
    byzantine = ["d"]
    crashed = []               # crashed from the start
    crash_at = { c = 40 }      # crash at a tick

    [adversary]
    delay = "uniform"          # uniform | fifo | partition | target | withhold
    max_delay = 5
    fairness = 200
    script = "equivocate"      # default script for Byzantine nodes
    scripts = { d = "silent" } # per-node override

    [inputs]                   # protocol specific, see below
    [time]                     # tick_interval, advance, last_boundary
    [[proposals]]              # node, at, payload, slot
    [[views]]                  # id, members, t, byzantine (scripted members)
    [tx]                       # txorder knobs
    [[quorum_checks]]          # n_i, q_i, n_j, q_j, overlap
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .byzantine import SCRIPTS
from .common import ConfigurationError
from .dabc import TimeParams
from .simnet import DELAY_KINDS, DelayPolicy
from .topology import EssentialSubset, FaultAssignment, Status, TrustConfig
from .txorder import View

PROTOCOLS = ("rbc", "drbc", "abba", "mvba", "dabc", "txorder")


@dataclass
class Adversary:
    policy: DelayPolicy = field(default_factory=DelayPolicy)
    fairness: int | None = 200
    void_on_crash: bool = True
    scripts: dict = field(default_factory=dict)  # node -> script name


@dataclass
class Scenario:
    config: TrustConfig
    faults: FaultAssignment = field(default_factory=FaultAssignment)
    protocol: str | None = None
    crash_at: dict = field(default_factory=dict)
    adversary: Adversary = field(default_factory=Adversary)
    inputs: dict = field(default_factory=dict)
    time: TimeParams = field(default_factory=TimeParams)
    last_boundary: int = 400
    proposals: list = field(default_factory=list)  # (node, tick, payload, slot)
    waits: list = field(default_factory=list)
    views: list = field(default_factory=list)
    tx: dict = field(default_factory=dict)
    member_byzantine: frozenset = frozenset()
    quorum_checks: list = field(default_factory=list)
    tick_budget: int = 10_000
    seed: int = 0

    @property
    def nodes(self) -> list:
        return sorted(self.config.nodes, key=str)


def _need(d: dict, key: str, kind, where: str):
    if key not in d:
        raise ConfigurationError(f"{where}: missing {key!r}")
    return _typed(d[key], kind, f"{where}.{key}")


def _typed(v, kind, where: str):
    if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise ConfigurationError(f"{where}: expected an integer, got {v!r}")
    if kind is list and not isinstance(v, list):
        raise ConfigurationError(f"{where}: expected a list, got {v!r}")
    if kind is str and not isinstance(v, str):
        raise ConfigurationError(f"{where}: expected a string, got {v!r}")
    if kind is dict and not isinstance(v, dict):
        raise ConfigurationError(f"{where}: expected a table, got {v!r}")
    return v


def _ids(v, nodes: frozenset | None, where: str) -> list:
    v = _typed(v, list, where)
    for x in v:
        if not isinstance(x, str):
            raise ConfigurationError(f"{where}: node ids must be strings, got {x!r}")
        if nodes is not None and x not in nodes:
            raise ConfigurationError(f"{where}: unknown node {x!r}")
    return list(v)


def parse_topology(doc: dict) -> TrustConfig:
    nd = _typed(doc.get("nodes", {}), dict, "nodes")
    ids = _ids(_need(nd, "ids", list, "nodes"), None, "nodes.ids")
    if len(set(ids)) != len(ids):
        raise ConfigurationError("nodes.ids: duplicate node ids")
    nodes = frozenset(ids)
    if "complete_t" in nd:
        if "subsets" in doc:
            raise ConfigurationError("nodes.complete_t and [[subsets]] are exclusive")
        t = _typed(nd["complete_t"], int, "nodes.complete_t")
        q = nd.get("complete_q")
        return TrustConfig.complete(nodes, t, None if q is None else _typed(q, int, "nodes.complete_q"))
    es: dict = {i: [] for i in ids}
    for x, sd in enumerate(_typed(doc.get("subsets", []), list, "subsets")):
        where = f"subsets[{x}]"
        _typed(sd, dict, where)
        members = frozenset(_ids(_need(sd, "members", list, where), nodes, where + ".members"))
        t = _need(sd, "t", int, where)
        q = _typed(sd.get("q", len(members) - t), int, where + ".q")
        owners = _ids(sd.get("owners", ids), nodes, where + ".owners")
        s = EssentialSubset(members, t, q)
        for o in owners:
            if s not in es[o]:
                es[o].append(s)
    return TrustConfig(nodes, es)


def parse(doc: dict) -> Scenario:
    config = parse_topology(doc)
    nodes = config.nodes
    sc = Scenario(config)
    proto = doc.get("protocol")
    if proto is not None and proto not in PROTOCOLS:
        raise ConfigurationError(f"protocol: unknown protocol {proto!r}")
    sc.protocol = proto
    sc.tick_budget = _typed(doc.get("tick_budget", 10_000), int, "tick_budget")
    sc.seed = _typed(doc.get("seed", 0), int, "seed")

    fd = _typed(doc.get("faults", {}), dict, "faults")
    status: dict = {}
    for i in _ids(fd.get("byzantine", []), nodes, "faults.byzantine"):
        status[i] = Status.BYZANTINE
    for i in _ids(fd.get("crashed", []), nodes, "faults.crashed"):
        if i in status:
            raise ConfigurationError(f"faults: {i!r} is both Byzantine and crashed")
        status[i] = Status.CRASHED
    crash_at = _typed(fd.get("crash_at", {}), dict, "faults.crash_at")
    for i, at in crash_at.items():
        if i not in nodes and not _is_member(doc, i):
            raise ConfigurationError(f"faults.crash_at: unknown node {i!r}")
        _typed(at, int, f"faults.crash_at.{i}")
        if i in nodes and status.get(i) is Status.BYZANTINE:
            raise ConfigurationError(f"faults: {i!r} is both Byzantine and crash-scheduled")
        if i in nodes:
            status.setdefault(i, Status.CRASHED)
    sc.faults = FaultAssignment(status)
    sc.crash_at = dict(crash_at)

    ad = _typed(doc.get("adversary", {}), dict, "adversary")
    kind = ad.get("delay", "uniform")
    if kind not in DELAY_KINDS:
        raise ConfigurationError(f"adversary.delay: unknown policy {kind!r}")
    groups = tuple(frozenset(_ids(g, None, "adversary.groups")) for g in ad.get("groups", []))
    policy = DelayPolicy(kind, _typed(ad.get("max_delay", 5), int, "adversary.max_delay"),
                         groups, frozenset(_ids(ad.get("targets", []), None, "adversary.targets")),
                         frozenset(_typed(ad.get("labels", []), list, "adversary.labels")),
                         _typed(ad.get("until", 0), int, "adversary.until"))
    fairness = ad.get("fairness", 200)
    if fairness is not None and fairness is not False:
        fairness = _typed(fairness, int, "adversary.fairness")
    else:
        fairness = None
    default = ad.get("script", "equivocate")
    per = _typed(ad.get("scripts", {}), dict, "adversary.scripts")
    scripts: dict = {}
    byz = set(sc.faults.byzantine()) | set(_member_byz(doc))
    for i in sorted(byz):
        name = per.get(i, default)
        if name not in SCRIPTS:
            raise ConfigurationError(f"adversary: unknown script {name!r}")
        scripts[i] = name
    for i in per:
        if i not in byz:
            raise ConfigurationError(f"adversary.scripts: {i!r} is not Byzantine")
    sc.adversary = Adversary(policy, fairness, bool(ad.get("void_on_crash", True)), scripts)

    sc.inputs = _typed(doc.get("inputs", {}), dict, "inputs")
    td = _typed(doc.get("time", {}), dict, "time")
    sc.time = TimeParams(_typed(td.get("tick_interval", 10), int, "time.tick_interval"),
                         _typed(td.get("advance", 0), int, "time.advance"))
    sc.last_boundary = _typed(td.get("last_boundary", 400), int, "time.last_boundary")
    for x, pd in enumerate(_typed(doc.get("proposals", []), list, "proposals")):
        where = f"proposals[{x}]"
        node = _need(pd, "node", str, where)
        if node not in nodes:
            raise ConfigurationError(f"{where}: unknown node {node!r}")
        sc.proposals.append((node, _typed(pd.get("at", 0), int, where + ".at"),
                             _need(pd, "payload", str, where), _typed(pd.get("slot", 0), int, where + ".slot")))
    sc.waits = [_typed(w, int, "waits") for w in _typed(doc.get("waits", []), list, "waits")]
    seen_ids = set()
    for x, vd in enumerate(_typed(doc.get("views", []), list, "views")):
        where = f"views[{x}]"
        vid = _need(vd, "id", int, where)
        if vid in seen_ids:
            raise ConfigurationError(f"{where}: duplicate view id {vid}")
        seen_ids.add(vid)
        members = tuple(_ids(_need(vd, "members", list, where), None, where + ".members"))
        clash = set(members) & nodes
        if clash:
            raise ConfigurationError(f"{where}: view members overlap trust-graph nodes {sorted(clash)}")
        t = _need(vd, "t", int, where)
        if EssentialSubset(frozenset(members), t, len(members) - t).violations():
            raise ConfigurationError(f"{where}: invalid view threshold t={t} for {len(members)} members")
        sc.views.append(View(vid, members, t))
    sc.tx = _typed(doc.get("tx", {}), dict, "tx")
    sc.member_byzantine = frozenset(_member_byz(doc))
    for x, qd in enumerate(_typed(doc.get("quorum_checks", []), list, "quorum_checks")):
        where = f"quorum_checks[{x}]"
        sc.quorum_checks.append(tuple(_need(qd, k, int, where)
                                      for k in ("n_i", "q_i", "n_j", "q_j", "overlap")))
    if proto is not None:
        config.validate()
    if proto == "txorder" and not sc.views:
        raise ConfigurationError("txorder scenarios need at least one [[views]] entry")
    return sc


def _is_member(doc: dict, i: str) -> bool:
    return any(i in vd.get("members", []) for vd in doc.get("views", []) if isinstance(vd, dict))


def _member_byz(doc: dict) -> list:
    out = []
    for vd in doc.get("views", []):
        if isinstance(vd, dict):
            out += [m for m in vd.get("byzantine", []) if m in vd.get("members", [])]
    return out


def _locate(text: str, where: str) -> int | None:
    """Line of the table or key named by an error location such as ``subsets[1].t``."""
    lines = text.splitlines()
    parts = [p for p in where.split(".") if p]
    start = 0
    found = None
    for part in parts:
        name, _, idx = part.partition("[")
        nth = int(idx.rstrip("]")) if idx else 0
        hits = [x for x in range(start, len(lines))
                if lines[x].strip() in (f"[{name}]", f"[[{name}]]")
                or lines[x].lstrip().startswith((f"{name} =", f"{name}="))]
        if len(hits) <= nth:
            break
        found = start = hits[nth]
        if not lines[found].strip().startswith("["):
            break
    return None if found is None else found + 1


def loads(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        msg = str(e)
        if "line" not in msg:
            msg += f" (line {max(1, len(text.splitlines()))})"
        raise ConfigurationError(f"parse error: {msg}") from None
    try:
        return parse(doc)
    except ConfigurationError as e:
        where = str(e).split(":", 1)[0].split()[0]
        line = _locate(text, where)
        if line is None:
            raise
        raise ConfigurationError(f"line {line}: {e}") from None


def load(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read {p}: {e.strerror}") from None
    try:
        return loads(text)
    except ConfigurationError as e:
        raise ConfigurationError(f"{p}: {e}") from None


def raw(sc: Scenario) -> dict[str, Any]:
    """A plain summary used by reports."""
    return {
        "protocol": sc.protocol,
        "nodes": sc.nodes,
        "faults": {i: s.value for i, s in sorted(sc.faults.status.items())},
        "tick_budget": sc.tick_budget,
    }
