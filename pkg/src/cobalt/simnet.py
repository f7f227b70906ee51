"""Deterministic discrete-event network with an adversarial scheduler.

Time is an integer tick. Every send becomes an event whose delivery tick is
chosen by the adversary's delay policy; ties are broken by timers first, then
by an adversary-drawn key, then by send order. A fairness bound forces
delivery of any correct-to-correct message that has waited longer than ``f``
deliveries, which stands in for the model's eventual-delivery guarantee.
"""

from __future__ import annotations

import heapq
import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Protocol

from .common import ConfigurationError, Message, NodeContext, NodeId, ProtocolViolation, canon
from .topology import Status


class Process(Protocol):
    ctx: NodeContext

    def start(self) -> None: ...

    def on_message(self, msg: Message) -> None: ...

    def on_timer(self, name: Hashable) -> None: ...


DELAY_KINDS = ("uniform", "fifo", "partition", "target", "withhold")


@dataclass
class DelayPolicy:
    """Adversarial delay choice per message.

    uniform: random delay in [0, max_delay].
    fifo: constant one-tick delay.
    partition: cross-group messages get max_delay, in-group ones 0..1.
    target: messages from or to ``targets`` get max_delay, others random.
    withhold: messages with a label in ``labels`` (any label when empty) from
    or to ``targets`` (anyone when empty) are held until tick ``until``.
    """

    kind: str = "uniform"
    max_delay: int = 5
    groups: tuple = ()
    targets: frozenset = frozenset()
    labels: frozenset = frozenset()
    until: int = 0

    def __post_init__(self) -> None:
        if self.kind not in DELAY_KINDS:
            raise ConfigurationError(f"unknown delay policy {self.kind!r}")
        if self.max_delay < 0:
            raise ConfigurationError("max_delay must be nonnegative")
        self.targets = frozenset(self.targets)
        self.labels = frozenset(self.labels)
        self.groups = tuple(frozenset(g) for g in self.groups)

    def delay(self, frm: NodeId, to: NodeId, msg: Message, now: int, rng: random.Random) -> int:
        k = self.kind
        if k == "uniform":
            return rng.randint(0, self.max_delay)
        if k == "fifo":
            return 1
        if k == "partition":
            same = any(frm in g and to in g for g in self.groups)
            return rng.randint(0, 1) if same else self.max_delay
        if k == "target":
            if frm in self.targets or to in self.targets:
                return self.max_delay
            return rng.randint(0, self.max_delay)
        # withhold
        hit = (not self.labels or msg.label in self.labels) and (
            not self.targets or frm in self.targets or to in self.targets
        )
        if hit and now < self.until:
            return self.until - now + rng.randint(0, self.max_delay)
        return rng.randint(0, self.max_delay)


class RunRecord:
    """Deterministic log of one simulation.

    ``events`` keeps structured records in order; :meth:`dumps` renders them
    as canonical JSON lines suitable for byte-equality replay checks.
    """

    def __init__(self, trace: bool = False) -> None:
        self.trace = trace
        self.events: list[tuple] = []
        self.metrics: dict = {}
        self.terminated = False
        self.end_tick = 0

    def delivery(self, tick: int, frm: NodeId, to: NodeId, msg: Message) -> None:
        if self.trace:
            self.events.append(("d", tick, frm, to, msg.tag, msg.label, msg.payload))

    def output(self, tick: int, node: NodeId, kind: str, fields: dict) -> None:
        self.events.append(("o", tick, node, kind, fields))

    def outputs(self, kind: str | None = None, node: NodeId | None = None) -> list[tuple]:
        """Output records as (index, tick, node, kind, fields)."""
        out = []
        for x, e in enumerate(self.events):
            if e[0] == "o" and (kind is None or e[3] == kind) and (node is None or e[2] == node):
                out.append((x, e[1], e[2], e[3], e[4]))
        return out

    def lines(self) -> list[str]:
        out = []
        for e in self.events:
            if e[0] == "d":
                rec = {"k": "deliver", "t": e[1], "from": e[2], "to": e[3], "tag": e[4],
                       "label": e[5], "payload": e[6]}
            else:
                rec = {"k": "output", "t": e[1], "node": e[2], "kind": e[3], "fields": e[4]}
            out.append(canon(rec).decode())
        out.append(canon({"k": "summary", "terminated": self.terminated, "end": self.end_tick,
                          "metrics": self.metrics}).decode())
        return out

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"


class SimNet:
    """Single-threaded event loop hosting honest and scripted processes."""

    def __init__(
        self,
        processes: dict,
        *,
        seed: int,
        policy: DelayPolicy | None = None,
        fairness: int | None = 200,
        status: dict | None = None,
        crash_at: dict | None = None,
        void_on_crash: bool = True,
        scripts: dict | None = None,
        recorder: RunRecord | None = None,
        observers: Iterable[Callable[[NodeId, NodeId, Message], None]] = (),
    ) -> None:
        self.procs = dict(processes)
        self.order = sorted(self.procs, key=str)
        self.rng = random.Random(seed)
        self.policy = policy or DelayPolicy()
        self.fairness = fairness
        self.status = {i: Status.CORRECT for i in self.procs}
        self.status.update(status or {})
        self.crash_at = dict(crash_at or {})
        self.void_on_crash = void_on_crash
        self.scripts = dict(scripts or {})
        for i in self.scripts:
            if self.status.get(i) is not Status.BYZANTINE:
                raise ConfigurationError(f"script attached to non-Byzantine node {i!r}")
        self.record = recorder or RunRecord()
        self.observers = list(observers)
        self.now = 0
        self.crashed: set = set()
        self._heap: list = []
        self._seq = 0
        self._live: dict[int, tuple] = {}
        self._fair: OrderedDict[int, int] = OrderedDict()  # seq -> delivered count at send
        self._bcast_left: dict[int, int] = {}  # broadcast id -> undelivered copies
        self._bcast_sent: dict[int, int] = {}
        self._bcast_of: dict[NodeId, list[int]] = {}
        self._bid = 0
        self.delivered = 0
        self.sent = 0
        self.forced = 0
        for i, p in self.procs.items():
            p.ctx.sink = self._sink

    # plumbing

    def _sink(self, node: NodeId, kind: str, fields: dict) -> None:
        self.record.output(self.now, node, kind, fields)

    def correct(self, i: NodeId) -> bool:
        return self.status.get(i) is Status.CORRECT and i not in self.crashed

    def alive(self, i: NodeId) -> bool:
        return i in self.procs and i not in self.crashed

    def _push(self, at: int, prio: int, item: tuple) -> int:
        self._seq += 1
        seq = self._seq
        heapq.heappush(self._heap, (at, prio, self.rng.random(), seq))
        self._live[seq] = item
        return seq

    def _enqueue(self, frm: NodeId, to: NodeId, msg: Message, bid: int | None) -> None:
        d = self.policy.delay(frm, to, msg, self.now, self.rng)
        seq = self._push(self.now + max(0, d), 1, ("m", frm, to, msg, bid))
        self.sent += 1
        if self.fairness is not None and self.correct(frm) and self.correct(to):
            self._fair[seq] = self.delivered

    # sending

    def broadcast(self, sender: NodeId, msg: Message) -> None:
        """Honest path: one event per listener, all-or-nothing for crashes."""
        if sender not in self.procs:
            raise ConfigurationError(f"unknown sender {sender!r}")
        if msg.sender != sender:
            raise ProtocolViolation(f"{sender!r} attempted to send as {msg.sender!r}")
        self._bid += 1
        bid = self._bid
        self._bcast_left[bid] = len(self.order)
        self._bcast_sent[bid] = len(self.order)
        self._bcast_of.setdefault(sender, []).append(bid)
        for to in self.order:
            self._enqueue(sender, to, msg, bid)

    def byz_send(self, sender: NodeId, sends: Iterable[tuple]) -> None:
        """Per-recipient messages from an actively Byzantine sender."""
        if self.status.get(sender) is not Status.BYZANTINE:
            raise ProtocolViolation(f"byz_send from non-Byzantine {sender!r}")
        for to, msg in sends:
            if msg.sender != sender:
                raise ProtocolViolation(f"{sender!r} attempted to forge {msg.sender!r}")
            if to in self.procs:
                self._enqueue(sender, to, msg, None)

    def _flush(self, i: NodeId) -> None:
        p = self.procs[i]
        ctx = p.ctx
        if ctx.timers:
            timers, ctx.timers = ctx.timers, []
            for delay, name in timers:
                self._push(self.now + delay, 0, ("t", i, name))
        if not ctx.outbox:
            return
        out = ctx.drain()
        script = self.scripts.get(i)
        if script is None:
            for m in out:
                self.broadcast(i, m)
        else:
            for m in out:
                self.byz_send(i, script.transform(m, self.order, self.rng))

    # crash handling

    def _crash(self, i: NodeId) -> None:
        self.crashed.add(i)
        self.record.output(self.now, i, "crash", {})
        if not self.void_on_crash:
            return
        for bid in self._bcast_of.get(i, []):
            if self._bcast_left.get(bid) == self._bcast_sent.get(bid) and self.rng.random() < 0.5:
                self._bcast_left[bid] = -1  # voided in its entirety
        for seq, item in list(self._live.items()):
            if item[0] == "m" and item[1] == i and item[4] is not None and self._bcast_left.get(item[4]) == -1:
                del self._live[seq]
                self._fair.pop(seq, None)

    def _check_crashes(self) -> None:
        for i in self.order:
            at = self.crash_at.get(i)
            if at is not None and i not in self.crashed and self.now >= at:
                self._crash(i)

    # running

    def start(self) -> None:
        self._check_crashes()
        for i in self.order:
            if self.alive(i):
                self.procs[i].ctx.now = self.now
                self.procs[i].start()
                self._flush(i)
                if i in self.scripts:
                    extra = self.scripts[i].on_start(i, self.order, self.rng)
                    if extra:
                        self.byz_send(i, extra)

    def _pop(self) -> tuple | None:
        if self._fair and self._overdue():
            oldest = next(iter(self._fair))
            self.forced += 1
            del self._fair[oldest]
            return self._live.pop(oldest)
        while self._heap:
            at, _, _, seq = heapq.heappop(self._heap)
            item = self._live.pop(seq, None)
            if item is None:
                continue
            self._fair.pop(seq, None)
            if at > self.now:
                self.now = at
                if self.crash_at:
                    self._check_crashes()
                    if item[0] == "m" and item[1] in self.crashed and item[4] is not None \
                            and self._bcast_left.get(item[4]) == -1:
                        continue
            return item
        return None

    def _overdue(self) -> bool:
        """Whether the oldest fair message must be forced now to keep every deadline.

        Entry j (in send order) can be delivered at the earliest j events
        from now, so forcing starts once its remaining slack reaches j.
        """
        left = len(self._fair)
        for j, at in enumerate(self._fair.values()):
            slack = at + self.fairness - self.delivered
            if slack <= j:
                return True
            if slack > left:
                return False
        return False

    def step(self) -> bool:
        item = self._pop()
        if item is None:
            return False
        if item[0] == "t":
            _, i, name = item
            if self.alive(i):
                p = self.procs[i]
                p.ctx.now = self.now
                p.on_timer(name)
                self._flush(i)
            return True
        _, frm, to, msg, bid = item
        if bid is not None and self._bcast_left.get(bid, 0) > 0:
            self._bcast_left[bid] -= 1
        self.delivered += 1
        if not self.alive(to):
            return True
        self.record.delivery(self.now, frm, to, msg)
        for ob in self.observers:
            ob(frm, to, msg)
        p = self.procs[to]
        p.ctx.now = self.now
        p.on_message(msg)
        self._flush(to)
        return True

    def run(self, done: Callable[[], bool] | None = None, tick_budget: int = 10_000,
            max_events: int = 2_000_000) -> RunRecord:
        """Run until ``done`` holds, the queue drains or the budget is exhausted."""
        if tick_budget <= 0:
            self.record.terminated = False
            self.record.end_tick = 0
            return self._finish(False)
        self.start()
        events = 0
        ok = bool(done and done())
        while not ok and events < max_events:
            if self._heap and self._heap[0][0] > tick_budget and not self._fair:
                break
            if not self.step():
                break
            events += 1
            if self.now > tick_budget:
                break
            ok = bool(done and done())
        return self._finish(ok)

    def idle(self) -> bool:
        """No queued message or timer remains."""
        return not self._live

    def pending_correct(self) -> int:
        return sum(1 for it in self._live.values()
                   if it[0] == "m" and self.correct(it[1]) and self.correct(it[2]))

    def _finish(self, ok: bool) -> RunRecord:
        rec = self.record
        rec.terminated = ok
        rec.end_tick = self.now
        rec.metrics.update({"sent": self.sent, "delivered": self.delivered, "forced": self.forced})
        merged: dict = {}
        for i in self.order:
            for k, v in self.procs[i].ctx.metrics.items():
                merged[k] = merged.get(k, 0) + v
        rec.metrics.update(merged)
        return rec
