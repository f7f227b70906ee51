"""Brute-force oracles for small instances.

``support_transfer`` and ``no_dual_strong_support`` enumerate every
shared-subset shape ``(n, t, q)`` and every sender/fault assignment by set,
not by count. ``rbc_schedules`` model-checks reliable broadcast on a
four-node complete network with an equivocating broadcaster by exploring
every delivery order of the honest state machines.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .common import ConfigurationError, Message, NodeContext
from .rbc import RbcInstance
from .topology import EssentialSubset, validate_subset

LEMMA_MAX_N = 7
RBC_MAX_N = 4


@dataclass
class OracleReport:
    name: str
    cases: int = 0
    counterexamples: list = field(default_factory=list)
    complete: bool = True

    @property
    def ok(self) -> bool:
        return self.complete and not self.counterexamples


def shapes(max_n: int = LEMMA_MAX_N):
    """Every valid (n, t, q) with 1 <= n <= max_n."""
    for n in range(1, max_n + 1):
        for t in range(n + 1):
            for q in range(n + 1):
                if not validate_subset(n, t, q):
                    yield n, t, q


def _subsets(items: tuple, max_size: int | None = None):
    top = len(items) if max_size is None else min(max_size, len(items))
    for k in range(top + 1):
        yield from itertools.combinations(items, k)


def support_transfer(max_n: int = LEMMA_MAX_N) -> OracleReport:
    """Strong support seen by a fully linked node leaves weak support for its peer.

    For every shape, Byzantine set B (|B| <= t, at least q correct members)
    and sender set X with |X| >= q, the honest senders X \\ B number at least
    t + 1, and the honest members that sent outnumber the honest ones that
    did not.
    """
    if max_n > LEMMA_MAX_N:
        raise ConfigurationError(f"lemma oracle bound is n <= {LEMMA_MAX_N}, got {max_n}")
    rep = OracleReport("support_transfer")
    for n, t, q in shapes(max_n):
        members = tuple(range(n))
        for byz in _subsets(members, t):
            b = set(byz)
            if n - len(b) < q:
                continue
            for xs in _subsets(members):
                if len(xs) < q:
                    continue
                rep.cases += 1
                honest_sent = set(xs) - b
                honest_silent = set(members) - b - set(xs)
                if len(honest_sent) < t + 1 or len(honest_sent) <= len(honest_silent):
                    rep.counterexamples.append({"shape": (n, t, q), "byzantine": byz, "senders": xs})
    return rep


def no_dual_strong_support(max_n: int = LEMMA_MAX_N) -> OracleReport:
    """Two linked nodes never see strong support for different messages in a shared subset.

    Honest members send one of M, M' or nothing to both observers; each
    Byzantine member (at most t) picks independently per observer.
    """
    if max_n > LEMMA_MAX_N:
        raise ConfigurationError(f"lemma oracle bound is n <= {LEMMA_MAX_N}, got {max_n}")
    rep = OracleReport("no_dual_strong_support")
    for n, t, q in shapes(max_n):
        if q == 0:
            # empty quorums are supported by anything; excluded by the liveness law when t >= 0
            continue
        members = tuple(range(n))
        for byz in _subsets(members, t):
            honest = [m for m in members if m not in byz]
            # only the counts matter once the honest/Byzantine split is fixed, but the
            # enumeration below stays per member to avoid relying on that argument
            for h in itertools.product((0, 1, 2), repeat=len(honest)):
                to_i_m = sum(1 for x in h if x == 1)
                to_j_m2 = sum(1 for x in h if x == 2)
                for bz in itertools.product((0, 1, 2), repeat=2 * len(byz)):
                    rep.cases += 1
                    bi = sum(1 for x in bz[0::2] if x == 1)
                    bj = sum(1 for x in bz[1::2] if x == 2)
                    if to_i_m + bi >= q and to_j_m2 + bj >= q:
                        rep.counterexamples.append({"shape": (n, t, q), "byzantine": byz,
                                                    "honest": h, "byz_choice": bz})
    return rep


# reliable broadcast model check


def _snapshot(inst: RbcInstance, cap: int) -> tuple:
    """Behaviour-determining state: sent flags plus threshold-capped tallies in insertion order.

    Support checks only compare tallies against t + 1 and q, and content
    choice follows dict insertion order, so states agreeing here have
    identical futures.
    """
    echo = () if inst._readied and inst._echoed else tuple((c, min(len(s), cap)) for c, s in inst.echo_by.items())
    ready = () if inst.has_accepted else tuple((c, min(len(s), cap)) for c, s in inst.ready_by.items())
    init = None if inst._echoed else (inst.has_init, inst.init)
    return (init, inst.echo_sent if inst._echoed else None, inst.ready_sent if inst._readied else None,
            inst.accepted if inst.has_accepted else None, echo, ready)


def _materialize(snap: tuple, ctx: NodeContext, tag: tuple, broadcaster: str,
                 members: tuple) -> RbcInstance:
    """A production instance in the state described by ``snap``.

    Tallies are rebuilt with canonical, disjoint member names; the model
    never delivers the same (sender, label) twice to a node, so only the
    counts and their insertion order matter.
    """
    init, echo_sent, ready_sent, accepted, echo, ready = snap
    inst = RbcInstance(ctx, tag, broadcaster)
    if init is not None:
        inst.has_init, inst.init = init
    inst._echoed, inst.echo_sent = echo_sent is not None, echo_sent
    inst._readied, inst.ready_sent = ready_sent is not None, ready_sent
    inst.has_accepted, inst.accepted = accepted is not None, accepted
    for tally, first, by in ((echo, inst.echo_from, inst.echo_by),
                             (ready, inst.ready_from, inst.ready_by)):
        names = iter(members)
        for c, k in tally:
            by[c] = set()
            for _ in range(k):
                m = next(names)
                first[m] = c
                by[c].add(m)
    return inst


def _pattern_orbits(k: int):
    """One representative per equivocation pattern up to honest-node permutation and content swap."""
    swap = {"M1": "M2", "M2": "M1"}
    for pattern in itertools.product(("M1", "M2"), repeat=3 * k):
        rows = [tuple(pattern[x + k * y] for y in range(3)) for x in range(k)]
        images = []
        for perm in itertools.permutations(rows):
            images.append(perm)
            images.append(tuple(tuple(swap[c] for c in r) for r in perm))
        if tuple(rows) == min(images):
            yield pattern


class _LocalModel:
    """Transition cache for one honest node, keyed by its behaviour-determining snapshot."""

    def __init__(self, node: str, es: tuple, tag: tuple, broadcaster: str, cap: int) -> None:
        self.node, self.es, self.tag, self.cap = node, es, tag, cap
        self.broadcaster = broadcaster
        self.members = tuple(sorted(es[0].members))
        self.initial = _snapshot(RbcInstance(NodeContext(node, es), tag, broadcaster), cap)
        self.cache: dict = {}

    def step(self, snap: tuple, label: str, content: str) -> tuple:
        key = (snap, label, content)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        ctx = NodeContext(self.node, self.es)
        inst = _materialize(snap, ctx, self.tag, self.broadcaster, self.members)
        if label == "INIT":
            frm = self.broadcaster
        else:
            used = inst.echo_from if label == "ECHO" else inst.ready_from
            frm = next(m for m in self.members if m not in used)
        inst.handle(Message(self.tag, label, (content,), frm))
        new = _snapshot(inst, self.cap)
        outs = tuple((m.label, m.payload[0]) for m in ctx.drain())
        relevant = (not inst._echoed and not inst.has_init, not (inst._readied and inst._echoed),
                    not inst.has_accepted)
        res = (new, outs, inst.accepted if inst.has_accepted else None, relevant)
        self.cache[key] = res
        return res


_LABEL = {"INIT": 0, "ECHO": 1, "READY": 2}


def rbc_schedules(n: int = 4, max_states: int = 5_000_000, symmetry: bool = True,
                  quorum: int | None = None) -> OracleReport:
    """Every delivery order for every equivocation pattern of a Byzantine broadcaster.

    Node 0 is the Byzantine broadcaster. It sends INIT(M1) or INIT(M2) to each
    honest node and, per honest recipient, one ECHO and one READY for M1 or M2.
    Honest nodes run the production state machine. Patterns that differ only
    by renaming honest nodes or swapping M1/M2 are explored once when
    ``symmetry`` is set. ``quorum`` overrides q_S (mutation testing only:
    an unsafe quorum must produce counterexamples).
    """
    if n != RBC_MAX_N:
        raise ConfigurationError(f"schedule oracle is bounded to n = {RBC_MAX_N}, got {n}")
    nodes = [f"p{x}" for x in range(n)]
    byz, honest = nodes[0], nodes[1:]
    es = (EssentialSubset(frozenset(nodes), 1, n - 1 if quorum is None else quorum),)
    rep = OracleReport("rbc_schedules")
    tag = ("rbc", byz)
    k = len(honest)
    models = [_LocalModel(h, es, tag, byz, es[0].q) for h in honest]
    patterns = _pattern_orbits(k) if symmetry else itertools.product(("M1", "M2"), repeat=3 * k)
    for pattern in patterns:
        # pending: sorted tuple of (recipient index, label, content), multiset
        pend0 = tuple(sorted((x, lab, pattern[x + k * y])
                             for x in range(k) for y, lab in enumerate(("INIT", "ECHO", "READY"))))
        start = (tuple(m.initial for m in models), (None,) * k, ((True, True, True),) * k, pend0)
        seen = {start[0::3]}
        stack = [start]
        while stack:
            snaps, acc, rel, pend = stack.pop()
            rep.cases += 1
            if rep.cases > max_states:
                rep.complete = False
                return rep
            got = {a for a in acc if a is not None}
            if len(got) > 1:
                rep.counterexamples.append({"pattern": pattern, "accepted": sorted(got)})
                continue
            prev = None
            for idx, m in enumerate(pend):
                if m == prev:
                    continue  # identical pending copies lead to identical successors
                prev = m
                to, label, c = m
                new, outs, a, r = models[to].step(snaps[to], label, c)
                rest = list(pend[:idx] + pend[idx + 1:])
                for lab, cc in outs:
                    rest.extend((y, lab, cc) for y in range(k))
                nsnaps = snaps[:to] + (new,) + snaps[to + 1:]
                nacc = acc[:to] + (a,) + acc[to + 1:]
                nrel = rel[:to] + (r,) + rel[to + 1:]
                rest = tuple(sorted(x for x in rest if nrel[x[0]][_LABEL[x[1]]]))
                key = (nsnaps, rest)
                if key in seen:
                    continue
                seen.add(key)
                stack.append((nsnaps, nacc, nrel, rest))
    return rep


def run_instance(doc: dict) -> list[OracleReport]:
    """Dispatch an oracle instance description (parsed TOML)."""
    kind = doc.get("kind", "all")
    max_n = int(doc.get("max_n", LEMMA_MAX_N))
    out = []
    if kind in ("lemmas", "all"):
        out.append(support_transfer(max_n))
        out.append(no_dual_strong_support(max_n))
    if kind in ("rbc", "all"):
        out.append(rbc_schedules(int(doc.get("n", RBC_MAX_N)), int(doc.get("max_states", 5_000_000))))
    if not out:
        raise ConfigurationError(f"unknown oracle kind {kind!r}")
    return out
