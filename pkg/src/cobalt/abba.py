"""Asynchronous binary agreement with a FINISH short-circuit and per-round coin.

Every step keeps running once reached. After each event the instance
re-evaluates all enabled conditions until nothing changes.
"""

from __future__ import annotations

from typing import Callable

from .common import Message, NodeContext, NodeId, ProtocolViolation
from .crs import BIT
from .topology import has_strong_support, has_weak_support

BOTH = frozenset({0, 1})


class _Round:
    __slots__ = ("init_by", "init_sent", "values", "aux", "aux_sent", "conf", "conf_sent",
                 "coin_requested", "coin")

    def __init__(self) -> None:
        self.init_by: dict[int, set] = {0: set(), 1: set()}
        self.init_sent: set = set()
        self.values: set = set()
        self.aux: dict[NodeId, int] = {}
        self.aux_sent = False
        self.conf: dict[NodeId, frozenset] = {}
        self.conf_sent = False
        self.coin_requested = False
        self.coin: int | None = None


class Abba:
    """One node's binary agreement instance.

    ``tag`` namespaces wire messages and coin tags. ``on_decide`` fires once.
    """

    def __init__(self, ctx: NodeContext, tag: tuple,
                 on_decide: Callable[[int], None] | None = None,
                 coin_at: int | None = None) -> None:
        self.ctx = ctx
        self.tag = tag
        self.on_decide = on_decide
        self.coin_at = coin_at
        self.round = 0
        self.est: dict[int, int] = {}
        self.has_input = False
        self.rounds: dict[int, _Round] = {}
        self.finish_by: dict[int, set] = {0: set(), 1: set()}
        self.finish_from: dict[NodeId, int] = {}
        self.finish_sent: int | None = None
        self.decided: int | None = None
        self.decided_round: int | None = None
        self._busy = False
        self._again = False

    def _r(self, r: int) -> _Round:
        rd = self.rounds.get(r)
        if rd is None:
            rd = self.rounds[r] = _Round()
        return rd

    # inputs

    def input(self, v: int) -> None:
        if v not in (0, 1):
            raise ValueError("binary agreement input must be 0 or 1")
        if self.decided is not None:
            raise ProtocolViolation("input after decision")
        if self.has_input:
            raise ProtocolViolation("double input")
        self.has_input = True
        self.round = 0
        self.est[0] = v
        self.ctx.log("abba_input", tag=self.tag, value=v)
        self._send_init(v, 0)
        self._progress()

    def handle(self, msg: Message) -> None:
        if self.decided is not None:
            return
        p = msg.payload
        s = msg.sender
        lab = msg.label
        try:
            if lab == "FINISH":
                (v,) = p
                if v not in (0, 1) or s in self.finish_from:
                    return
                self.finish_from[s] = v
                self.finish_by[v].add(s)
            elif lab == "INIT":
                v, r = p
                if v not in (0, 1) or not isinstance(r, int) or r < 0:
                    return
                self._r(r).init_by[v].add(s)
            elif lab == "AUX":
                v, r = p
                if v not in (0, 1) or not isinstance(r, int) or r < 0:
                    return
                self._r(r).aux.setdefault(s, v)
            elif lab == "CONF":
                c, r = p
                c = frozenset(c)
                if not c or not c <= BOTH or not isinstance(r, int) or r < 0:
                    self.ctx.bump("malformed")
                    return
                self._r(r).conf.setdefault(s, c)
            else:
                return
        except (TypeError, ValueError):
            self.ctx.bump("malformed")
            return
        self._progress()

    def _on_coin(self, r: int, s: int) -> None:
        self._r(r).coin = s
        self._progress()

    # transitions

    def _send_init(self, v: int, r: int) -> None:
        rd = self._r(r)
        if v not in rd.init_sent:
            rd.init_sent.add(v)
            self.ctx.broadcast(self.tag, "INIT", (v, r))

    def _progress(self) -> None:
        if self._busy:
            self._again = True
            return
        self._busy = True
        try:
            self._again = True
            while self._again and self.decided is None:
                self._again = False
                self._step()
        finally:
            self._busy = False

    def _step(self) -> None:
        es = self.ctx.es
        ctx = self.ctx
        for v in (0, 1):
            if self.finish_sent is None and has_weak_support(es, self.finish_by[v]):
                self.finish_sent = v
                ctx.broadcast(self.tag, "FINISH", (v,))
        for v in (0, 1):
            if has_strong_support(es, self.finish_by[v]):
                self.decided = v
                self.decided_round = self.round
                ctx.log("abba_decide", tag=self.tag, value=v, round=self.round)
                if self.on_decide is not None:
                    self.on_decide(v)
                return
        if not self.has_input:
            return
        for r in range(self.round + 1):
            rd = self.rounds.get(r)
            if rd is None:
                continue
            for v in (0, 1):
                ss = rd.init_by[v]
                if not ss:
                    continue
                if v not in rd.init_sent and has_weak_support(es, ss):
                    self._send_init(v, r)
                if v not in rd.values and has_strong_support(es, ss):
                    rd.values.add(v)
                    if not rd.aux_sent:
                        rd.aux_sent = True
                        ctx.broadcast(self.tag, "AUX", (v, r))
        r = self.round
        rd = self._r(r)
        if not rd.conf_sent and rd.values:
            ok = {s for s, v in rd.aux.items() if v in rd.values}
            if has_strong_support(es, ok):
                rd.conf_sent = True
                vals = frozenset(rd.values)
                ctx.log("abba_conf", tag=self.tag, round=r, values=vals)
                ctx.broadcast(self.tag, "CONF", (vals, r))
        if rd.conf_sent and not rd.coin_requested:
            ok = {s for s, c in rd.conf.items() if c <= rd.values}
            if has_strong_support(es, ok):
                rd.coin_requested = True
                ctx.crs.sample(self.tag + ("coin", r), BIT, lambda s, r=r: self._on_coin(r, s),
                               at=self.coin_at)
        if rd.coin is not None:
            self._finish_round(r, rd)

    def _finish_round(self, r: int, rd: _Round) -> None:
        s = rd.coin
        vals = frozenset(rd.values)
        if len(vals) == 2:
            est = s
        else:
            (est,) = vals
            if est == s and self.finish_sent is None:
                self.finish_sent = s
                self.ctx.broadcast(self.tag, "FINISH", (s,))
        self.ctx.log("abba_round", tag=self.tag, round=r, values=vals, coin=s, est=est)
        self.round = r + 1
        self.est[r + 1] = est
        self._send_init(est, r + 1)
        self._again = True


class AbbaProcess:
    """Host for standalone agreement runs: one instance plus the node's coin service."""

    def __init__(self, ctx: NodeContext, value: int | None, tag: tuple = ("abba",)) -> None:
        self.ctx = ctx
        self.value = value
        self.inst = Abba(ctx, tag)

    def start(self) -> None:
        if self.value is not None:
            self.inst.input(self.value)

    def on_message(self, msg: Message) -> None:
        if msg.tag[0] == "crs":
            self.ctx.crs.handle(msg)
        elif msg.tag == self.inst.tag:
            self.inst.handle(msg)

    def on_timer(self, name) -> None:
        pass
