"""Reliable broadcast over essential subsets, plus the democratic variant.

In the democratic variant a node only echoes content it supports; READY
relays are never gated, since a node may have to help finish a broadcast it
voted against.
"""

from __future__ import annotations

from typing import Callable, Hashable

from .common import Message, NodeContext, NodeId, ProtocolViolation
from .topology import has_strong_support, has_weak_support

SUPPORT = "support"
OPPOSE = "oppose"

# returns SUPPORT, OPPOSE or None while the node cannot decide yet
Predicate = Callable[[Hashable], "str | None"]


class RbcInstance:
    """One node's state for one broadcast instance.

    ``tag`` identifies the instance on the wire; ``broadcaster`` is the only
    sender whose INIT is honoured.
    """

    def __init__(
        self,
        ctx: NodeContext,
        tag: tuple,
        broadcaster: NodeId,
        predicate: Predicate | None = None,
        on_accept: Callable[[Hashable], None] | None = None,
        democratic: bool | None = None,
    ) -> None:
        self.ctx = ctx
        self.tag = tag
        self.broadcaster = broadcaster
        self.predicate = predicate
        self.democratic = predicate is not None if democratic is None else democratic
        self.on_accept = on_accept
        self.started = False
        self.init: Hashable | None = None
        self.has_init = False
        self.echo_from: dict[NodeId, Hashable] = {}
        self.ready_from: dict[NodeId, Hashable] = {}
        self.echo_by: dict[Hashable, set] = {}
        self.ready_by: dict[Hashable, set] = {}
        self.echo_sent: Hashable | None = None
        self.ready_sent: Hashable | None = None
        self._echoed = False
        self._readied = False
        self.accepted: Hashable | None = None
        self.has_accepted = False
        self.verdicts: dict[Hashable, str] = {}
        self.equivocations = 0

    # inputs

    def start_broadcast(self, content: Hashable) -> None:
        if self.ctx.node_id != self.broadcaster:
            raise ProtocolViolation("only the designated broadcaster may start this instance")
        if self.started:
            raise ProtocolViolation("broadcaster already sent INIT for this instance")
        self.started = True
        self.ctx.broadcast(self.tag, "INIT", (content,))

    def set_support(self, content: Hashable, verdict: str) -> None:
        if verdict not in (SUPPORT, OPPOSE):
            raise ValueError(f"verdict must be {SUPPORT!r} or {OPPOSE!r}")
        prev = self.verdicts.get(content)
        if prev is not None and prev != verdict:
            raise ProtocolViolation(f"support verdict for {content!r} flipped")
        self.verdicts[content] = verdict
        self._progress()

    def recheck(self) -> None:
        """Re-evaluate pending support decisions after the caller's context changed."""
        self._progress()

    def handle(self, msg: Message) -> None:
        if len(msg.payload) != 1:
            self.ctx.bump("malformed")
            return
        content = msg.payload[0]
        s = msg.sender
        if msg.label == "INIT":
            if s != self.broadcaster:
                return
            if self.has_init:
                if content != self.init:
                    self.equivocations += 1
                return
            self.has_init, self.init = True, content
        elif msg.label == "ECHO":
            if not self._record(self.echo_from, self.echo_by, s, content):
                return
        elif msg.label == "READY":
            if not self._record(self.ready_from, self.ready_by, s, content):
                return
        else:
            self.ctx.bump("malformed")
            return
        self._progress()

    def _record(self, first: dict, by: dict, s: NodeId, content: Hashable) -> bool:
        if s in first:
            if first[s] != content:
                self.equivocations += 1
                self.ctx.bump("equivocation")
            return False
        first[s] = content
        by.setdefault(content, set()).add(s)
        return True

    # transitions

    def _supports(self, content: Hashable) -> bool:
        if not self.democratic:
            return True
        v = self.verdicts.get(content)
        if v is None and self.predicate is not None:
            v = self.predicate(content)
            if v == OPPOSE:
                self.verdicts[content] = v  # opposition is permanent
            elif v == SUPPORT:
                self.verdicts[content] = v
        return v == SUPPORT

    def _progress(self) -> None:
        es = self.ctx.es
        if not self._echoed:
            cands = []
            if self.has_init:
                cands.append(self.init)
            cands.extend(c for c, ss in self.echo_by.items() if has_weak_support(es, ss))
            for c in cands:
                if self._supports(c):
                    self._echoed, self.echo_sent = True, c
                    self.ctx.broadcast(self.tag, "ECHO", (c,))
                    break
        if not self._readied:
            for c, ss in self.echo_by.items():
                if has_strong_support(es, ss):
                    self._send_ready(c)
                    break
        if not self._readied:
            for c, ss in self.ready_by.items():
                if has_weak_support(es, ss):
                    self._send_ready(c)
                    break
        if not self.has_accepted:
            for c, ss in self.ready_by.items():
                if has_strong_support(es, ss):
                    self.has_accepted, self.accepted = True, c
                    self.ctx.log("rbc_accept", tag=self.tag, content=c)
                    if self.on_accept is not None:
                        self.on_accept(c)
                    break

    def _send_ready(self, c: Hashable) -> None:
        self._readied, self.ready_sent = True, c
        self.ctx.broadcast(self.tag, "READY", (c,))


class RbcProcess:
    """Host process for standalone broadcast runs: one instance per broadcaster."""

    def __init__(self, ctx: NodeContext, broadcasters: list, content: Hashable | None = None,
                 verdicts: dict | None = None) -> None:
        self.ctx = ctx
        self.content = content
        self.verdicts = verdicts
        pred = None
        if verdicts is not None:
            pred = lambda c: verdicts.get(c, OPPOSE)  # noqa: E731
        self.instances = {
            b: RbcInstance(ctx, ("rbc", b), b, predicate=pred, democratic=verdicts is not None)
            for b in broadcasters
        }

    def start(self) -> None:
        inst = self.instances.get(self.ctx.node_id)
        if inst is not None and self.content is not None:
            inst.start_broadcast(self.content)

    def on_message(self, msg: Message) -> None:
        if msg.tag[0] != "rbc" or len(msg.tag) != 2:
            return
        inst = self.instances.get(msg.tag[1])
        if inst is not None:
            inst.handle(msg)

    def on_timer(self, name) -> None:
        pass
