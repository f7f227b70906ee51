"""Democratic atomic broadcast: amendments, stamping, per-slot agreement, waiting.

Proposals travel over democratic reliable broadcast as ``(payload, slot)``.
Accepted pairs enter the pending set ``P``; at each interval boundary the
node announces ``CHECK(P, tau)`` and pairs seen in a quorum of CHECKs become
``ACCEPT(pair, tau)``. A strongly supported ACCEPT yields the valid input
``(payload, tau + tau_adv)`` to the agreement instance of that slot, and the
agreed value is ratified with its activation time.

The agreement instance for slot ``n`` starts only after slots below ``n`` are
ratified locally, so every node snapshots the same randomizing-key set for its
coins. Traffic for a slot that has not started yet is buffered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable

from .common import ConfigurationError, Message, NodeContext, NodeId, digest
from .mvba import Mvba
from .rbc import OPPOSE, SUPPORT, RbcInstance
from .topology import has_strong_support, has_weak_support

ALLOW_PREFIX = "ALLOW:"

# (payload, ratified prefix as list of (slot, payload, activation)) -> bool
ContextSupport = Callable[[Hashable, list], bool]


def amendment_id(payload: Hashable, slot: int) -> str:
    return digest(b"amendment", payload, slot).hex()[:16]


@dataclass(frozen=True)
class TimeParams:
    tick_interval: int = 10
    advance: int = 0

    def __post_init__(self) -> None:
        if self.tick_interval <= 0:
            raise ConfigurationError("tick interval must be positive")
        if self.advance < 0:
            raise ConfigurationError("advance must be nonnegative")


@dataclass(frozen=True)
class Ratification:
    slot: int
    payload: Hashable
    activation: int

    @property
    def amendment(self) -> str:
        return amendment_id(self.payload, self.slot)


def support_all(payload: Hashable, prefix: list) -> bool:
    return True


class Dabc:
    """One node's amendment pipeline."""

    def __init__(
        self,
        ctx: NodeContext,
        time: TimeParams = TimeParams(),
        supports: ContextSupport = support_all,
        pending_cap: int = 16,
        on_allow: Callable[[str, int], None] | None = None,
        ns: tuple = ("dabc",),
        pipeline: bool = False,
    ) -> None:
        self.ctx = ctx
        self.time = time
        self.supports = supports
        self.pending_cap = pending_cap
        self.on_allow = on_allow
        self.ns = ns
        self.pipeline = pipeline
        self.P: set = set()  # (payload, slot)
        self.closed: set = set()
        self.ratified: list[Ratification] = []
        self.decided: dict[int, tuple] = {}  # slot -> (payload, activation) awaiting order
        self.drbc: dict[tuple, RbcInstance] = {}
        self.mvba: dict[int, Mvba] = {}
        self.buffer: dict[int, list] = {}  # slot -> buffered mvba messages / inputs
        self.last_tick: int | None = None
        self.checks: dict[int, dict[NodeId, frozenset]] = {}
        self.accept_sent: set = set()
        self.accept_by: dict[tuple, set] = {}
        self.accept_from: dict[tuple, set] = {}  # (sender, tau) -> pairs, dedup
        self._proposals = 0
        self.overflow = 0

    # helpers

    @property
    def next_slot(self) -> int:
        return len(self.ratified)

    def ratified_slots(self) -> int:
        return len(self.ratified)

    def _tag(self, *rest) -> tuple:
        return self.ns + rest

    # proposals

    def propose(self, payload: Hashable, slot: int) -> tuple:
        """Start a democratic broadcast of ``(payload, slot)`` from this node."""
        if not isinstance(slot, int) or slot < 0:
            raise ConfigurationError("slot must be a nonnegative integer")
        tag = self._tag("drbc", self.ctx.node_id, self._proposals)
        self._proposals += 1
        inst = self._drbc(tag)
        inst.start_broadcast((payload, slot))
        return tag

    def _predicate(self, content: Hashable) -> str | None:
        try:
            payload, slot = content
        except (TypeError, ValueError):
            return OPPOSE
        if not isinstance(slot, int) or slot < 0:
            return OPPOSE
        if slot < self.next_slot:
            return OPPOSE
        if slot > self.next_slot:
            return None
        prefix = [(r.slot, r.payload, r.activation) for r in self.ratified]
        ok = self.supports(payload, prefix)
        self.ctx.log("support", content=content, verdict=SUPPORT if ok else OPPOSE)
        return SUPPORT if ok else OPPOSE

    def _drbc(self, tag: tuple) -> RbcInstance:
        inst = self.drbc.get(tag)
        if inst is None:
            inst = RbcInstance(self.ctx, tag, tag[len(self.ns) + 1], predicate=self._predicate,
                               on_accept=self._on_drbc_accept)
            self.drbc[tag] = inst
        return inst

    def _on_drbc_accept(self, content: Hashable) -> None:
        try:
            payload, slot = content
        except (TypeError, ValueError):
            return
        if not isinstance(slot, int) or slot in self.closed or slot < self.next_slot:
            return
        if sum(1 for _, s in self.P if s == slot) >= self.pending_cap:
            self.overflow += 1
            self.ctx.bump("pending_overflow")
            return
        self.P.add((payload, slot))
        self.ctx.log("pending", payload=payload, slot=slot)

    # stamping

    def tick(self, tau: int) -> None:
        if tau % self.time.tick_interval:
            raise ConfigurationError(f"boundary {tau} is not a multiple of the interval")
        if self.last_tick is not None and tau <= self.last_tick:
            raise ConfigurationError(f"out-of-order boundary {tau} after {self.last_tick}")
        self.last_tick = tau
        self.ctx.broadcast(self._tag("stamp"), "CHECK", (frozenset(self.P), tau))

    def _on_check(self, msg: Message) -> None:
        p, tau = msg.payload
        if not isinstance(tau, int) or tau < 0:
            return
        pairs = frozenset(p)
        if not all(isinstance(pr, tuple) and len(pr) == 2 and isinstance(pr[1], int) and pr[1] >= 0
                   for pr in pairs):
            self.ctx.bump("malformed")
            return
        seen = self.checks.setdefault(tau, {})
        if msg.sender in seen:
            return
        seen[msg.sender] = pairs
        es = self.ctx.es
        for pair in sorted(pairs, key=repr):
            if (pair, tau) in self.accept_sent:
                continue
            holders = {s for s, ps in seen.items() if pair in ps}
            if has_strong_support(es, holders):
                self._send_accept(pair, tau)

    def _send_accept(self, pair: tuple, tau: int) -> None:
        if (pair, tau) not in self.accept_sent:
            self.accept_sent.add((pair, tau))
            self.ctx.broadcast(self._tag("stamp"), "ACCEPT", (pair, tau))

    def _on_accept(self, msg: Message) -> None:
        pair, tau = msg.payload
        payload, slot = pair
        if not isinstance(slot, int) or slot < 0 or not isinstance(tau, int):
            return
        key = (pair, tau)
        ss = self.accept_by.setdefault(key, set())
        if msg.sender in ss:
            return
        ss.add(msg.sender)
        if slot < self.next_slot:
            return
        es = self.ctx.es
        if key not in self.accept_sent and has_weak_support(es, ss):
            self._send_accept(pair, tau)
        if has_strong_support(es, ss):
            self.ctx.log("stamp", payload=payload, slot=slot, tau=tau)
            self.closed.add(slot)
            self.P = {pr for pr in self.P if pr[1] != slot}
            self._mvba_input(slot, (payload, tau + self.time.advance))

    # agreement per slot

    def _mvba_input(self, slot: int, value: tuple) -> None:
        inst = self.mvba.get(slot)
        if inst is None:
            self.buffer.setdefault(slot, []).append(("input", value))
        else:
            inst.add_valid_input(value)

    def _start_slot(self, slot: int) -> None:
        if slot in self.mvba:
            return
        inst = Mvba(self.ctx, self._tag("mvba", slot),
                    on_decide=lambda v, slot=slot: self._on_decide(slot, v),
                    coin_at=slot, pipeline=self.pipeline)
        self.mvba[slot] = inst
        for kind, item in self.buffer.pop(slot, []):
            if kind == "input":
                inst.add_valid_input(item)
            else:
                inst.handle(item)

    def _on_decide(self, slot: int, value: tuple) -> None:
        self.decided[slot] = value
        while self.next_slot in self.decided:
            s = self.next_slot
            payload, act = self.decided.pop(s)
            r = Ratification(s, payload, act)
            self.ratified.append(r)
            self.closed.add(s)
            self.P = {pr for pr in self.P if pr[1] != s}
            self.ctx.log("ratify", slot=s, payload=payload, activation=act,
                         amendment=r.amendment)
            if isinstance(payload, str) and payload.startswith(ALLOW_PREFIX) and self.on_allow:
                self.on_allow(payload[len(ALLOW_PREFIX):], s + 1)
            self._start_slot(self.next_slot)
        for inst in list(self.drbc.values()):
            inst.recheck()

    # waiting protocol

    def known(self, tau: int) -> list[Ratification] | None:
        """Ratifications with activation before ``tau`` once that set is final, else None."""
        horizon = tau - self.time.advance
        es = self.ctx.es
        ratified = set(range(self.next_slot))
        b = 0
        while b <= horizon:
            seen = self.checks.get(b, {})
            ok = {s for s, ps in seen.items() if all(sl in ratified for _, sl in ps)}
            if not has_strong_support(es, ok):
                return None
            b += self.time.tick_interval
        return [r for r in self.ratified if r.activation < tau]

    # routing

    def handle(self, msg: Message) -> None:
        n = len(self.ns)
        kind = msg.tag[n] if len(msg.tag) > n else None
        try:
            if kind == "drbc":
                if len(msg.tag) != n + 3:
                    return
                self._drbc(msg.tag).handle(msg)
            elif kind == "stamp":
                if msg.label == "CHECK":
                    self._on_check(msg)
                elif msg.label == "ACCEPT":
                    self._on_accept(msg)
            elif kind == "mvba":
                slot = msg.tag[n + 1]
                if not isinstance(slot, int) or slot < self.next_slot and slot not in self.mvba:
                    return
                inst = self.mvba.get(slot)
                if inst is None:
                    self.buffer.setdefault(slot, []).append(("msg", msg))
                else:
                    inst.handle(msg)
        except (TypeError, ValueError):
            self.ctx.bump("malformed")


class DabcProcess:
    """Host process: ticks boundaries, fires scheduled proposals, answers waits."""

    def __init__(self, ctx: NodeContext, time: TimeParams, proposals: list,
                 waits: list, supports: ContextSupport = support_all,
                 last_boundary: int = 400, pending_cap: int = 16,
                 on_allow: Callable[[str, int], None] | None = None) -> None:
        self.ctx = ctx
        self.dabc = Dabc(ctx, time, supports, pending_cap, on_allow)
        self.proposals = sorted(proposals, key=lambda p: (p[0], repr(p)))  # (tick, payload, slot)
        self.waits = sorted(set(waits))
        self.answered: dict[int, list] = {}
        self.last_boundary = last_boundary

    def start(self) -> None:
        self.dabc._start_slot(0)
        self._boundary(0)
        for x, (at, _, _) in enumerate(self.proposals):
            if at <= 0:
                self._propose(x)
            else:
                self.ctx.set_timer(at, ("propose", x))

    def _boundary(self, tau: int) -> None:
        self.dabc.tick(tau)
        nxt = tau + self.dabc.time.tick_interval
        if nxt <= self.last_boundary:
            self.ctx.set_timer(nxt - self.ctx.now, ("tick", nxt))

    def _propose(self, x: int) -> None:
        _, payload, slot = self.proposals[x]
        self.dabc.propose(payload, slot)

    def on_timer(self, name) -> None:
        if name[0] == "tick":
            self._boundary(name[1])
        elif name[0] == "propose":
            self._propose(name[1])
        self._poll()

    def on_message(self, msg: Message) -> None:
        if msg.tag[0] == "crs":
            self.ctx.crs.handle(msg)
        elif msg.tag[0] == "dabc":
            self.dabc.handle(msg)
            self._poll()

    def _poll(self) -> None:
        for tau in self.waits:
            if tau in self.answered:
                continue
            got = self.dabc.known(tau)
            if got is None:
                break
            self.answered[tau] = got
            self.ctx.log("known", tau=tau,
                         ratified=[(r.slot, r.payload, r.activation) for r in got])
