"""Transaction ordering on top of the trust graph.

A committee ("view") of transaction members emits numbered blocks; Cobalt
nodes accept them through a reliable-broadcast cascade with an extra CHECK
phase that a view-change lock can shut off. A view change agrees, through
the Cobalt quorums, on the sequence number ``n_cont`` at which the next view
continues, so accepted blocks are never overwritten. When every planned view
is exhausted, blocks are ordered by a slot-free agreement chain in which a
node pins the first block it sees and supports nothing else until that block
is ratified.

Transaction members are separate processes outside the trust graph. They
observe Cobalt traffic through an observer essential-subset list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable

from .common import ConfigurationError, Message, NodeContext, NodeId
from .mvba import Mvba
from .rbc import OPPOSE, SUPPORT, RbcInstance
from .topology import EssentialSubset, has_strong_support, has_weak_support


@dataclass(frozen=True)
class View:
    view_id: int
    members: tuple
    t: int

    @property
    def subset(self) -> EssentialSubset:
        return EssentialSubset(frozenset(self.members), self.t, len(self.members) - self.t)

    @property
    def key_id(self) -> str:
        return f"view{self.view_id}"


def block_name(view: int, n: int) -> str:
    return f"blk-v{view}-n{n}"


class _Tally:
    """First-wins per-sender content with per-content sender sets."""

    __slots__ = ("first", "by")

    def __init__(self) -> None:
        self.first: dict[NodeId, Hashable] = {}
        self.by: dict[Hashable, set] = {}

    def add(self, s: NodeId, c: Hashable) -> bool:
        if s in self.first:
            return False
        self.first[s] = c
        self.by.setdefault(c, set()).add(s)
        return True

    def strong(self, es: tuple) -> Hashable | None:
        for c, ss in self.by.items():
            if has_strong_support(es, ss):
                return c
        return None

    def weak(self, es: tuple) -> Hashable | None:
        for c, ss in self.by.items():
            if has_weak_support(es, ss):
                return c
        return None


class _Seq:
    __slots__ = ("init_by", "echo", "ready", "check", "echo_sent", "ready_sent", "check_sent")

    def __init__(self) -> None:
        self.init_by: dict[Hashable, set] = {}
        self.echo = _Tally()
        self.ready = _Tally()
        self.check = _Tally()
        self.echo_sent = False
        self.ready_sent = False
        self.check_sent = False


class ReadyView:
    """READY evidence for blocks, shared by Cobalt nodes and members."""

    def __init__(self, es: tuple) -> None:
        self.es = es
        self.ready: dict[tuple, _Tally] = {}

    def add(self, v: int, n: int, s: NodeId, b: Hashable) -> None:
        self.ready.setdefault((v, n), _Tally()).add(s, b)

    def strong(self, v: int, n: int) -> Hashable | None:
        t = self.ready.get((v, n))
        return None if t is None else t.strong(self.es)


@dataclass
class _VC:
    change_by: set = field(default_factory=set)
    confirm_by: set = field(default_factory=set)
    locks: dict = field(default_factory=dict)  # sender -> cited n
    newview_by: dict = field(default_factory=dict)  # n -> members
    echo: _Tally = field(default_factory=_Tally)
    ready: _Tally = field(default_factory=_Tally)
    change_sent: bool = False
    confirm_sent: bool = False
    lock_sent: bool = False
    n_locked: int | None = None


def _locked(vc: _VC, es: tuple, min_src: int, ready: ReadyView, src: int) -> int | None:
    """Highest cited sequence over backed LOCKs, once they form a quorum."""
    backed = {s for s, n in vc.locks.items() if n < min_src or ready.strong(src, n) is not None}
    if not has_strong_support(es, backed):
        return None
    return max(vc.locks[s] for s in backed)


def _valid_cont(n: int, n_locked: int | None, min_src: int, ready: ReadyView, src: int) -> bool:
    if n_locked is None or not isinstance(n, int) or n <= n_locked or n < min_src:
        return False
    return n - 1 < min_src or ready.strong(src, n - 1) is not None


class FallbackChain:
    """Slot-free block ordering with pinning, run when no view is left."""

    def __init__(self, ctx: NodeContext, ns: tuple = ("tx", "fb")) -> None:
        self.ctx = ctx
        self.ns = ns
        self.valid: list = []  # accepted, not yet ratified, in acceptance order
        self.ratified: list = []
        self.ratified_set: set = set()
        self.drbc: dict[tuple, RbcInstance] = {}
        self.mvba: dict[int, Mvba] = {}
        self.buffer: dict[int, list] = {}
        self._proposals = 0
        self.pins: list = []

    @property
    def pinned(self) -> Hashable | None:
        return self.valid[0] if self.valid else None

    def propose(self, block: Hashable) -> None:
        tag = self.ns + ("drbc", self.ctx.node_id, self._proposals)
        self._proposals += 1
        self._drbc(tag).start_broadcast(block)

    def _predicate(self, block: Hashable) -> str | None:
        if block in self.ratified_set:
            return OPPOSE
        p = self.pinned
        if p is None or p == block:
            return SUPPORT
        return None  # refused until the pinned block is ratified

    def _drbc(self, tag: tuple) -> RbcInstance:
        inst = self.drbc.get(tag)
        if inst is None:
            inst = RbcInstance(self.ctx, tag, tag[len(self.ns) + 1], predicate=self._predicate,
                               on_accept=self._on_accept)
            self.drbc[tag] = inst
        return inst

    def _on_accept(self, block: Hashable) -> None:
        if block in self.ratified_set or block in self.valid:
            return
        self.valid.append(block)
        if len(self.valid) == 1:
            self.pins.append(block)
            self.ctx.log("fb_pin", block=block)
        slot = len(self.ratified)
        inst = self.mvba.get(slot)
        if inst is not None:
            inst.add_valid_input(block)

    def start(self) -> None:
        self._start_slot(0)

    def _start_slot(self, slot: int) -> None:
        if slot in self.mvba:
            return
        inst = Mvba(self.ctx, self.ns + ("mvba", slot),
                    on_decide=lambda b, slot=slot: self._on_decide(slot, b))
        self.mvba[slot] = inst
        for b in self.valid:
            inst.add_valid_input(b)
        for m in self.buffer.pop(slot, []):
            inst.handle(m)

    def _on_decide(self, slot: int, block: Hashable) -> None:
        if slot != len(self.ratified):
            return
        self.ratified.append(block)
        self.ratified_set.add(block)
        was_pinned = self.pinned
        self.valid = [b for b in self.valid if b != block]
        self.ctx.log("fb_ratify", slot=slot, block=block)
        if self.pinned is not None and self.pinned != was_pinned:
            self.pins.append(self.pinned)
            self.ctx.log("fb_pin", block=self.pinned)
        self._start_slot(slot + 1)
        for inst in list(self.drbc.values()):
            inst.recheck()

    def handle(self, msg: Message) -> None:
        n = len(self.ns)
        kind = msg.tag[n] if len(msg.tag) > n else None
        if kind == "drbc":
            if len(msg.tag) == n + 3:
                self._drbc(msg.tag).handle(msg)
        elif kind == "mvba":
            slot = msg.tag[n + 1]
            if not isinstance(slot, int) or slot < 0:
                return
            inst = self.mvba.get(slot)
            if inst is None:
                if slot >= len(self.ratified):
                    self.buffer.setdefault(slot, []).append(msg)
            else:
                inst.handle(msg)


class TxNode:
    """A Cobalt node accepting blocks, running view changes and the fallback chain."""

    def __init__(self, ctx: NodeContext, views: list[View], *, vc_timeout: int = 80,
                 fallback_blocks: list | None = None, fallback_now: bool = False,
                 watch_until: int = 10_000) -> None:
        self.ctx = ctx
        self.views = {v.view_id: v for v in views}
        if not self.views:
            raise ConfigurationError("at least one view is required")
        self.view = min(self.views)
        self.mins: dict[int, int] = {self.view: 0}
        self.locked: set = set()
        self.accepted: dict[int, tuple] = {}  # n -> (block, view)
        self.highest_checked: dict[int, int] = {}
        self.seqs: dict[tuple, _Seq] = {}
        self.readies = ReadyView(ctx.es)
        self.vcs: dict[tuple, _VC] = {}
        self.vecho_sent: set = set()  # source views
        self.vready_sent: set = set()
        self.requested: int | None = None
        self.adopting: tuple | None = None
        self.vc_timeout = vc_timeout
        self.watch_until = watch_until
        self.progress_mark = 0
        self._seen_mark = -1
        self.fallback = False
        self.chain = FallbackChain(ctx)
        self.fallback_blocks = list(fallback_blocks or [])  # (tick, block)
        self.fallback_now = fallback_now
        self.stalls = 0

    # lifecycle

    def start(self) -> None:
        self.chain.start()
        if self.fallback_now:
            self._enter_fallback()
        elif self.vc_timeout > 0:
            self.ctx.set_timer(self.vc_timeout, ("fd",))

    def on_timer(self, name) -> None:
        if name[0] == "fd":
            if self.fallback:
                return
            if self.progress_mark == self._seen_mark:
                self.request_view_change()
            self._seen_mark = self.progress_mark
            if self.ctx.now + self.vc_timeout <= self.watch_until:
                self.ctx.set_timer(self.vc_timeout, ("fd",))
        elif name[0] == "fb":
            self.chain.propose(self.fallback_blocks[name[1]][1])

    def _enter_fallback(self) -> None:
        if self.fallback:
            return
        self.fallback = True
        self.ctx.log("fallback", view=self.view)
        for x, (at, _) in enumerate(self.fallback_blocks):
            self.ctx.set_timer(max(1, at - self.ctx.now), ("fb", x))

    # view-scoped block acceptance

    def _min(self, v: int) -> int:
        return self.mins.get(v, 0)

    def _next_seq(self) -> int:
        n = self._min(self.view)
        while n in self.accepted:
            n += 1
        return n

    def _seq(self, v: int, n: int) -> _Seq:
        key = (v, n)
        s = self.seqs.get(key)
        if s is None:
            s = self.seqs[key] = _Seq()
        return s

    def handle_block_msg(self, msg: Message) -> None:
        try:
            v, n = msg.tag[2], msg.tag[3]
            (b,) = msg.payload
        except (IndexError, TypeError, ValueError):
            self.ctx.bump("malformed")
            return
        if v not in self.views or not isinstance(n, int) or n < 0:
            return
        if v < self.view:
            self.ctx.bump("stale_view")
            return
        sq = self._seq(v, n)
        lab, s = msg.label, msg.sender
        if lab == "INIT":
            if s not in self.views[v].members:
                return
            sq.init_by.setdefault(b, set()).add(s)
        elif lab == "ECHO":
            sq.echo.add(s, b)
        elif lab == "READY":
            if sq.ready.add(s, b):
                self.readies.add(v, n, s, b)
        elif lab == "CHECK":
            sq.check.add(s, b)
        else:
            return
        if v == self.view:
            self._block_progress()
            if self.adopting is not None:
                self._try_adopt()
            self._vc_progress_all()

    def _block_progress(self) -> None:
        v = self.view
        es = self.ctx.es
        view = self.views[v]
        n = self._min(v)
        while True:
            sq = self.seqs.get((v, n))
            if sq is None:
                break
            if not sq.echo_sent:
                b = next((b for b, ms in sq.init_by.items() if len(ms) >= view.t + 1), None)
                if b is None:
                    b = sq.echo.weak(es)
                if b is not None:
                    sq.echo_sent = True
                    self.ctx.broadcast(("tx", "blk", v, n), "ECHO", (b,))
            if not sq.ready_sent:
                b = sq.echo.strong(es)
                if b is None:
                    b = sq.ready.weak(es)
                if b is not None:
                    sq.ready_sent = True
                    self.ctx.broadcast(("tx", "blk", v, n), "READY", (b,))
            if not sq.check_sent and v not in self.locked:
                b = sq.ready.strong(es)
                if b is not None:
                    sq.check_sent = True
                    self.highest_checked[v] = max(self.highest_checked.get(v, -1), n)
                    self.ctx.broadcast(("tx", "blk", v, n), "CHECK", (b,))
            if n not in self.accepted:
                b = sq.check.strong(es)
                if b is None:
                    break
                self._accept(n, b, v)
            n += 1

    def _accept(self, n: int, b: Hashable, v: int) -> None:
        self.accepted[n] = (b, v)
        self.progress_mark += 1
        self.ctx.log("tx_accept", seq=n, block=b, view=v)

    # view change

    def request_view_change(self) -> None:
        base = self.requested if self.requested is not None else self.view
        target = base + 1
        if target not in self.views:
            self._enter_fallback()
            return
        self.requested = target
        vc = self._vc(self.view, target)
        if not vc.change_sent:
            vc.change_sent = True
            self.ctx.log("vc_request", source=self.view, target=target)
            self.ctx.broadcast(("tx", "vc", self.view, target), "CHANGE", ())
        self._vc_progress(self.view, target)

    def _vc(self, src: int, tgt: int) -> _VC:
        vc = self.vcs.get((src, tgt))
        if vc is None:
            vc = self.vcs[(src, tgt)] = _VC()
        return vc

    def handle_viewchange_msg(self, msg: Message) -> None:
        try:
            src, tgt = msg.tag[2], msg.tag[3]
        except IndexError:
            return
        if src not in self.views or tgt not in self.views or tgt <= src:
            return
        if src < self.view:
            self.ctx.bump("stale_view")
            return
        vc = self._vc(src, tgt)
        lab, s, p = msg.label, msg.sender, msg.payload
        try:
            if lab == "CHANGE":
                vc.change_by.add(s)
            elif lab == "CONFIRM":
                vc.confirm_by.add(s)
            elif lab == "LOCK":
                (n,) = p
                if isinstance(n, int) and s not in vc.locks:
                    vc.locks[s] = n
            elif lab == "NEWVIEW":
                (n,) = p
                if s in self.views[tgt].members and isinstance(n, int):
                    if not any(s in ms for ms in vc.newview_by.values()):
                        vc.newview_by.setdefault(n, set()).add(s)
            elif lab == "ECHO":
                (n,) = p
                vc.echo.add(s, n)
            elif lab == "READY":
                (n,) = p
                vc.ready.add(s, n)
            else:
                return
        except (TypeError, ValueError):
            self.ctx.bump("malformed")
            return
        if src == self.view:
            self._vc_progress(src, tgt)

    def _vc_progress_all(self) -> None:
        for (src, tgt) in list(self.vcs):
            if src == self.view:
                self._vc_progress(src, tgt)

    def _vc_progress(self, src: int, tgt: int) -> None:
        if self.adopting is not None or src != self.view:
            return
        es = self.ctx.es
        vc = self._vc(src, tgt)
        tag = ("tx", "vc", src, tgt)
        if not vc.confirm_sent and (has_strong_support(es, vc.change_by)
                                    or has_weak_support(es, vc.confirm_by)):
            vc.confirm_sent = True
            self.ctx.broadcast(tag, "CONFIRM", ())
        if not vc.lock_sent and has_strong_support(es, vc.confirm_by):
            vc.lock_sent = True
            self.locked.add(src)
            acc = [n for n, (_, v) in self.accepted.items() if v == src and n >= self._min(src)]
            cite = max(acc + [self.highest_checked.get(src, -1), self._min(src) - 1])
            self.ctx.log("vc_lock", source=src, target=tgt, seq=cite)
            self.ctx.broadcast(tag, "LOCK", (cite,))
        nl = _locked(vc, es, self._min(src), self.readies, src)
        if nl is not None and (vc.n_locked is None or nl > vc.n_locked):
            vc.n_locked = nl
        if src not in self.vecho_sent:
            t = self.views[tgt].t
            for n, ms in sorted(vc.newview_by.items()):
                if len(ms) >= t + 1 and _valid_cont(n, vc.n_locked, self._min(src), self.readies, src):
                    self._vecho(src, tag, n)
                    break
        if src not in self.vecho_sent:
            n = vc.echo.weak(es)
            if n is not None:
                self._vecho(src, tag, n)
        if src not in self.vready_sent:
            n = vc.echo.strong(es)
            if n is None:
                n = vc.ready.weak(es)
            if n is not None:
                self.vready_sent.add(src)
                self.ctx.broadcast(tag, "READY", (n,))
        n = vc.ready.strong(es)
        if n is not None:
            self.adopting = (src, tgt, n)
            self.ctx.log("vc_ready", source=src, target=tgt, n_cont=n)
            self._try_adopt()

    def _vecho(self, src: int, tag: tuple, n: int) -> None:
        self.vecho_sent.add(src)
        self.ctx.broadcast(tag, "ECHO", (n,))

    def _try_adopt(self) -> None:
        src, tgt, n_cont = self.adopting
        for m in range(self._min(src), n_cont):
            if m in self.accepted:
                continue
            b = self.readies.strong(src, m)
            if b is None:
                self.stalls += 1
                return
            self._accept(m, b, src)
        self.adopting = None
        self.view = tgt
        self.mins[tgt] = n_cont
        self.requested = None
        self.progress_mark += 1
        self.ctx.log("adopt", view=tgt, min=n_cont)
        self._block_progress()
        self._vc_progress_all()

    # routing

    def on_message(self, msg: Message) -> None:
        tag = msg.tag
        if tag[0] == "crs":
            self.ctx.crs.handle(msg)
        elif tag[0] != "tx" or len(tag) < 2:
            return
        elif tag[1] == "blk":
            self.handle_block_msg(msg)
        elif tag[1] == "vc":
            self.handle_viewchange_msg(msg)
        elif tag[1] == "fb":
            self.chain.handle(msg)

    def fallback_order(self, block: Hashable) -> None:
        """Propose a block on the fallback chain."""
        self._enter_fallback()
        self.chain.propose(block)


class TxMember:
    """A scripted transaction-network member.

    Honest members emit deterministic block names while their view is
    active and take part in view changes into views they belong to.
    """

    def __init__(self, ctx: NodeContext, views: list[View], observer_es: tuple, *,
                 block_interval: int = 5, max_blocks: int = 1000) -> None:
        self.ctx = ctx
        self.views = {v.view_id: v for v in views}
        self.mine = sorted(v.view_id for v in views if ctx.node_id in v.members)
        self.obs_es = observer_es
        self.block_interval = block_interval
        self.max_blocks = max_blocks
        first = min(self.views)
        self.mins: dict[int, int] = {first: 0}
        self.active: dict[int, int] = {}  # view -> next sequence to emit
        self.emitted: dict[int, int] = {}
        self.readies = ReadyView(observer_es)
        self.vcs: dict[tuple, _VC] = {}
        self.mvba: dict[tuple, Mvba] = {}
        self.buffer: dict[tuple, list] = {}
        self.newview_sent: set = set()
        self.candidates: dict[tuple, set] = {}

    def start(self) -> None:
        first = min(self.views)
        if first in self.mine:
            self._activate(first, 0)

    def _activate(self, v: int, start: int) -> None:
        if v in self.active:
            return
        self.active[v] = start
        self.emitted[v] = 0
        self.ctx.set_timer(1, ("emit", v))

    def on_timer(self, name) -> None:
        if name[0] != "emit":
            return
        v = name[1]
        if self.emitted[v] >= self.max_blocks:
            return
        n = self.active[v]
        self.active[v] = n + 1
        self.emitted[v] += 1
        self.ctx.broadcast(("tx", "blk", v, n), "INIT", (block_name(v, n),))
        self.ctx.set_timer(self.block_interval, ("emit", v))

    def on_message(self, msg: Message) -> None:
        tag = msg.tag
        if tag[0] == "crs":
            self.ctx.crs.handle(msg)
            return
        if tag[0] != "tx" or len(tag) < 4:
            return
        try:
            if tag[1] == "blk" and msg.label == "READY":
                (b,) = msg.payload
                self.readies.add(tag[2], tag[3], msg.sender, b)
                self._all_progress()
            elif tag[1] == "vc":
                self._observe_vc(msg)
            elif tag[1] == "vcm":
                key = (tag[2], tag[3])
                inst = self.mvba.get(key)
                if inst is None:
                    self.buffer.setdefault(key, []).append(msg)
                else:
                    inst.handle(msg)
        except (TypeError, ValueError):
            self.ctx.bump("malformed")

    def _observe_vc(self, msg: Message) -> None:
        src, tgt = msg.tag[2], msg.tag[3]
        if src not in self.views or tgt not in self.views:
            return
        vc = self.vcs.setdefault((src, tgt), _VC())
        if msg.label == "LOCK":
            (n,) = msg.payload
            if isinstance(n, int) and msg.sender not in vc.locks:
                vc.locks[msg.sender] = n
        elif msg.label == "READY":
            (n,) = msg.payload
            vc.ready.add(msg.sender, n)
            n = vc.ready.strong(self.obs_es)
            if n is not None and tgt not in self.mins:
                self.mins[tgt] = n
        self._all_progress()

    def _all_progress(self) -> None:
        for (src, tgt), vc in list(self.vcs.items()):
            if tgt in self.mine and src in self.mins:
                self._member_progress(src, tgt, vc)

    def _member_progress(self, src: int, tgt: int, vc: _VC) -> None:
        min_src = self.mins[src]
        nl = _locked(vc, self.obs_es, min_src, self.readies, src)
        if nl is None:
            return
        if vc.n_locked is None or nl > vc.n_locked:
            vc.n_locked = nl
        key = (src, tgt)
        inst = self.mvba.get(key)
        if inst is None:
            view = self.views[tgt]
            cctx = self.ctx.child((view.subset,))
            inst = Mvba(cctx, ("tx", "vcm", src, tgt),
                        on_decide=lambda n, key=key: self._on_decide(key, n),
                        coin_at=(view.key_id,))
            self.mvba[key] = inst
            for m in self.buffer.pop(key, []):
                inst.handle(m)
        c = vc.n_locked + 1
        cands = self.candidates.setdefault(key, set())
        if c not in cands and _valid_cont(c, vc.n_locked, min_src, self.readies, src):
            cands.add(c)
            inst.add_valid_input(c)

    def _on_decide(self, key: tuple, n: int) -> None:
        src, tgt = key
        if key in self.newview_sent:
            return
        self.newview_sent.add(key)
        self.ctx.log("newview", source=src, target=tgt, n_cont=n)
        self.ctx.broadcast(("tx", "vc", src, tgt), "NEWVIEW", (n,))
        self._activate(tgt, n)
