"""Multi-valued agreement with external validity, reduced to binary agreement.

Each round elects, votes on stopping through an embedded binary agreement,
and otherwise shrinks the candidate set by keeping, at each node, the value
with the smallest coin-keyed hash index.
"""

from __future__ import annotations

from typing import Callable, Hashable

from .abba import Abba
from .common import Message, NodeContext, NodeId, ProtocolViolation, digest
from .crs import U128
from .topology import has_strong_support, has_weak_support

INDEX_BITS = 128


class IndexCollision(ProtocolViolation):
    """Two distinct candidates hashed to the same round index."""


def index(value: Hashable, seed: int) -> int:
    """I_r(A): first 128 bits of a hash over the length-prefixed value and seed."""
    return int.from_bytes(digest(b"I", value, seed)[: INDEX_BITS // 8], "big")


def argmin_index(values, seed: int) -> Hashable:
    best = None
    best_i = None
    for v in values:
        i = index(v, seed)
        if best_i is not None and i == best_i and v != best:
            raise IndexCollision(f"index collision between {best!r} and {v!r}")
        if best_i is None or i < best_i:
            best, best_i = v, i
    return best


class _Round:
    __slots__ = ("values", "vset", "elect", "elect_sent", "step3_done", "finish_by",
                 "finish_from", "finish_sent", "cont_latest", "cont_seen", "cont_sent",
                 "voted", "abba", "seed_requested", "seed", "est_next", "init_by",
                 "init_sent", "step5_cont")

    def __init__(self) -> None:
        self.values: list = []
        self.vset: set = set()
        self.elect: dict[NodeId, Hashable] = {}
        self.elect_sent = False
        self.step3_done = False
        self.finish_by: dict[Hashable, set] = {}
        self.finish_from: dict[NodeId, Hashable] = {}
        self.finish_sent = False
        self.cont_latest: dict[NodeId, frozenset] = {}
        self.cont_seen: list[frozenset] = []
        self.cont_sent: frozenset | None = None
        self.voted: int | None = None
        self.abba: Abba | None = None
        self.seed_requested = False
        self.seed: int | None = None
        self.est_next: Hashable | None = None
        self.init_by: dict[Hashable, set] = {}  # INIT(A, r+1) senders, stored on round r
        self.init_sent: set = set()
        self.step5_cont = False


class Mvba:
    """One node's multi-valued agreement instance."""

    def __init__(self, ctx: NodeContext, tag: tuple,
                 on_decide: Callable[[Hashable], None] | None = None,
                 pipeline: bool = False, coin_at: int | None = None) -> None:
        self.ctx = ctx
        self.tag = tag
        self.on_decide = on_decide
        self.pipeline = pipeline
        self.coin_at = coin_at
        self.round = 0
        self.rounds: dict[int, _Round] = {}
        self.decided: Hashable | None = None
        self.has_decided = False
        self.decided_round: int | None = None
        self._busy = False
        self._again = False

    def _r(self, r: int) -> _Round:
        rd = self.rounds.get(r)
        if rd is None:
            rd = self.rounds[r] = _Round()
        return rd

    def values(self, r: int = 0) -> list:
        rd = self.rounds.get(r)
        return list(rd.values) if rd else []

    # inputs

    def add_valid_input(self, value: Hashable) -> None:
        if self.has_decided:
            return
        if self._add_value(0, value):
            self._progress()

    def _add_value(self, r: int, value: Hashable) -> bool:
        rd = self._r(r)
        if value in rd.vset:
            return False
        rd.vset.add(value)
        rd.values.append(value)
        # step 6: a late value with a smaller index than our estimate is relayed
        if rd.est_next is not None and rd.seed is not None:
            if index(value, rd.seed) < index(rd.est_next, rd.seed):
                self._send_init(r, value)
        return True

    def _abba(self, r: int) -> Abba:
        rd = self._r(r)
        if rd.abba is None:
            rd.abba = Abba(self.ctx, self.tag + ("stop", r),
                           on_decide=lambda v: self._progress(), coin_at=self.coin_at)
        return rd.abba

    def handle(self, msg: Message) -> None:
        if self.has_decided:
            return
        n = len(self.tag)
        if len(msg.tag) > n and msg.tag[n] == "stop":
            r = msg.tag[n + 1]
            if isinstance(r, int) and r >= 0:
                self._abba(r).handle(msg)
                self._progress()
            return
        try:
            self._record(msg)
        except (TypeError, ValueError):
            self.ctx.bump("malformed")
            return
        self._progress()

    def _record(self, msg: Message) -> None:
        lab, s, p = msg.label, msg.sender, msg.payload
        if lab == "ELECT":
            a, r = p
            self._check_round(r)
            self._r(r).elect.setdefault(s, a)
        elif lab == "FINISH":
            a, r = p
            self._check_round(r)
            rd = self._r(r)
            if s not in rd.finish_from:
                rd.finish_from[s] = a
                rd.finish_by.setdefault(a, set()).add(s)
        elif lab == "CONT":
            c, r = p
            self._check_round(r)
            c = frozenset(c)
            rd = self._r(r)
            rd.cont_latest[s] = c
            if len(c) >= 2 and c not in rd.cont_seen:
                rd.cont_seen.append(c)
        elif lab == "INIT":
            a, r1 = p
            self._check_round(r1)
            if r1 < 1:
                return
            self._r(r1 - 1).init_by.setdefault(a, set()).add(s)

    @staticmethod
    def _check_round(r) -> None:
        if not isinstance(r, int) or isinstance(r, bool) or r < 0:
            raise ValueError("bad round")

    # transitions

    def _send_init(self, r: int, value: Hashable) -> None:
        rd = self._r(r)
        if value not in rd.init_sent:
            rd.init_sent.add(value)
            self.ctx.broadcast(self.tag, "INIT", (value, r + 1))

    def _send_cont(self, r: int, rd: _Round) -> None:
        cur = frozenset(rd.vset)
        if rd.cont_sent != cur:
            rd.cont_sent = cur
            self.ctx.broadcast(self.tag, "CONT", (cur, r))

    def _progress(self) -> None:
        if self._busy:
            self._again = True
            return
        self._busy = True
        try:
            self._again = True
            while self._again and not self.has_decided:
                self._again = False
                for r in sorted(self.rounds):
                    if r > self.round:
                        break
                    self._step(r, self.rounds[r])
                    if self.has_decided:
                        break
        finally:
            self._busy = False

    def _step(self, r: int, rd: _Round) -> None:
        ctx, es = self.ctx, self.ctx.es
        # step 2
        if not rd.elect_sent and rd.values:
            rd.elect_sent = True
            ctx.broadcast(self.tag, "ELECT", (rd.values[0], r))
        # step 3
        if rd.elect_sent and not rd.step3_done:
            ok = {s for s, a in rd.elect.items() if a in rd.vset}
            if has_strong_support(es, ok):
                rd.step3_done = True
                if len(rd.values) == 1:
                    rd.finish_sent = True
                    ctx.broadcast(self.tag, "FINISH", (rd.values[0], r))
                else:
                    self._send_cont(r, rd)
        # step 4
        if rd.step3_done and rd.voted is None:
            vote = None
            for a, ss in rd.finish_by.items():
                if has_strong_support(es, ss):
                    vote = 1
                    break
            if vote is None and self._valid_cont(rd):
                self._send_cont(r, rd)
                vote = 0
            if vote is not None:
                rd.voted = vote
                ab = self._abba(r)
                if ab.decided is None:
                    ab.input(vote)
        # step 5
        ab = rd.abba
        if ab is None or ab.decided is None:
            return
        if ab.decided == 1:
            if any(self.rounds[x].abba is None or self.rounds[x].abba.decided != 0
                   for x in range(r)):
                return  # termination follows the first round deciding 1
            if not rd.finish_sent:
                for a, ss in rd.finish_by.items():
                    if has_weak_support(es, ss):
                        rd.finish_sent = True
                        ctx.broadcast(self.tag, "FINISH", (a, r))
                        break
            v0 = self._r(0).vset
            for a, ss in rd.finish_by.items():
                if a in v0 and has_strong_support(es, ss):
                    self._decide(a, r)
                    return
            return
        if not rd.step5_cont:
            if self._valid_cont(rd):
                rd.step5_cont = True
        if rd.step5_cont:
            self._send_cont(r, rd)
            if not rd.seed_requested:
                ok = {s for s, c in rd.cont_latest.items() if c <= rd.vset}
                if has_strong_support(es, ok):
                    rd.seed_requested = True
                    ctx.crs.sample(self.tag + ("seed", r), U128,
                                   lambda s, r=r: self._on_seed(r, s), at=self.coin_at)
        if rd.seed is not None and rd.est_next is None:
            rd.est_next = argmin_index(rd.values, rd.seed)
            ctx.log("mvba_round", tag=self.tag, round=r, values=frozenset(rd.vset),
                    est=rd.est_next)
            self._send_init(r, rd.est_next)
        # step 6 and 7, INIT(A, r+1) tallied on round r
        for a, ss in list(rd.init_by.items()):
            if a not in rd.init_sent and has_weak_support(es, ss):
                self._send_init(r, a)
            if has_strong_support(es, ss) and self._add_value(r + 1, a):
                self._again = True
        if self.round == r and self.rounds.get(r + 1) and self.rounds[r + 1].values:
            if self.pipeline or ab.decided == 0:
                self.round = r + 1
                self._again = True

    def _valid_cont(self, rd: _Round) -> bool:
        return any(c <= rd.vset for c in rd.cont_seen)

    def _on_seed(self, r: int, s: int) -> None:
        self._r(r).seed = s
        self._progress()

    def _decide(self, a: Hashable, r: int) -> None:
        self.has_decided = True
        self.decided = a
        self.decided_round = r
        self.ctx.log("mvba_decide", tag=self.tag, value=a, round=r)
        if self.on_decide is not None:
            self.on_decide(a)


class MvbaProcess:
    """Host for standalone runs: valid inputs arrive on a per-node schedule."""

    def __init__(self, ctx: NodeContext, schedule: list, tag: tuple = ("mvba",),
                 pipeline: bool = False) -> None:
        self.ctx = ctx
        self.schedule = sorted(schedule, key=lambda x: x[0])  # (tick, value)
        self.inst = Mvba(ctx, tag, pipeline=pipeline)

    def start(self) -> None:
        for x, (at, _) in enumerate(self.schedule):
            if at <= 0:
                self.inst.add_valid_input(self.schedule[x][1])
            else:
                self.ctx.set_timer(at, ("input", x))

    def on_timer(self, name) -> None:
        if name[0] == "input":
            self.inst.add_valid_input(self.schedule[name[1]][1])

    def on_message(self, msg: Message) -> None:
        if msg.tag[0] == "crs":
            self.ctx.crs.handle(msg)
        elif msg.tag[: len(self.inst.tag)] == self.inst.tag:
            self.inst.handle(msg)
