"""Wiring from a parsed scenario to a simulated run plus its invariant verdicts."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from . import checks
from .abba import AbbaProcess
from .byzantine import make_script
from .common import ConfigurationError, NodeContext, digest
from .crs import BIT, AdversaryView, CrsNode, KeyOracle, RandomizingKey, adversary_predict, default_keys
from .dabc import DabcProcess
from .mvba import MvbaProcess
from .rbc import OPPOSE, SUPPORT, RbcProcess
from .scenario import Scenario
from .simnet import RunRecord, SimNet
from .topology import Status, TrustConfig
from .txorder import TxMember, TxNode


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    record: RunRecord
    procs: dict
    violations: dict = field(default_factory=dict)  # check name -> messages
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def digest(self) -> str:
        return digest(self.record.dumps().encode()).hex()


def _rng(seed: int, *salt) -> random.Random:
    return random.Random(int.from_bytes(digest(seed, *salt)[:8], "big"))


def _contexts(sc: Scenario, oracle: KeyOracle, cobalt_keys: list | None = None) -> dict:
    ctxs = {}
    for i in sc.nodes:
        ctx = NodeContext(i, sc.config.subsets(i))
        ctx.crs = CrsNode(ctx, oracle, cobalt_keys)
        ctxs[i] = ctx
    return ctxs


def _net(sc: Scenario, procs: dict, seed: int, trace: bool, extra_status: dict | None = None,
         extra_crash: dict | None = None, observers=()) -> SimNet:
    status = {i: s for i, s in sc.faults.status.items()}
    status.update(extra_status or {})
    crash_at = {i: at for i, at in sc.crash_at.items()}
    for i, s in sc.faults.status.items():
        if s is Status.CRASHED and i not in crash_at:
            crash_at[i] = 0
    crash_at.update(extra_crash or {})
    # crash-scheduled nodes behave correctly until their crash tick
    for i in crash_at:
        if status.get(i) is Status.CRASHED:
            status[i] = Status.CORRECT
    scripts = {i: make_script(name) for i, name in sc.adversary.scripts.items() if i in procs}
    for i in scripts:
        status[i] = Status.BYZANTINE
    return SimNet(procs, seed=seed, policy=sc.adversary.policy, fairness=sc.adversary.fairness,
                  status=status, crash_at=crash_at, void_on_crash=sc.adversary.void_on_crash,
                  scripts=scripts, recorder=RunRecord(trace=trace), observers=observers)


def _finish(net: SimNet, done: Callable[[], bool] | None, budget: int) -> RunRecord:
    rec = net.run(done, tick_budget=budget)
    if done is None and budget > 0:
        rec.terminated = net.idle()
    return rec


def _correct(sc: Scenario, i) -> bool:
    return sc.faults.correct(i) and i not in sc.crash_at


# per-protocol drivers


def run_rbc(sc: Scenario, seed: int, trace: bool = False) -> RunResult:
    inp = sc.inputs
    bcs = list(inp.get("broadcasters", sc.nodes[:1]))
    content = dict(inp.get("content", {b: f"M-{b}" for b in bcs}))
    for b in bcs:
        sc.config.check_node(b)
    democratic = sc.protocol == "drbc"
    verdicts: dict | None = None
    if democratic:
        table = inp.get("support", {})
        default = set(content.values())
        verdicts = {}
        for i in sc.nodes:
            sup = set(table.get(i, default))
            verdicts[i] = {c: (SUPPORT if c in sup else OPPOSE) for c in set(content.values()) | sup}
            for c in inp.get("extra_contents", []):
                verdicts[i].setdefault(c, SUPPORT if c in sup else OPPOSE)
    oracle = KeyOracle(seed, default_keys(sc.config))
    ctxs = _contexts(sc, oracle)
    procs = {i: RbcProcess(ctxs[i], bcs, content.get(i),
                           None if verdicts is None else _Verdicts(verdicts[i]))
             for i in sc.nodes}
    net = _net(sc, procs, seed, trace)
    rec = _finish(net, None, sc.tick_budget)
    res = RunResult(sc, seed, rec, procs)
    res.violations["consistency"] = checks.consistency(rec, sc.config, sc.faults, "rbc_accept",
                                                       value="content")
    res.violations["validity"] = checks.rbc_validity(rec, sc.faults, content)
    if democratic:
        res.violations["democracy"] = checks.rbc_democracy(rec, sc.config, sc.faults, verdicts)
    if inp.get("expect_accept", False):
        miss = [f"{i} did not accept from {b}" for i in sc.nodes if _correct(sc, i)
                for b in bcs if sc.faults.honest(b) and not procs[i].instances[b].has_accepted]
        res.violations["liveness"] = miss
    res.stats["accepts"] = len(rec.outputs("rbc_accept"))
    return res


class _Verdicts(dict):
    """Static verdict table; unknown contents are opposed."""

    def get(self, key, default=OPPOSE):
        return super().get(key, default)


def _abba_values(sc: Scenario) -> dict:
    vals = sc.inputs.get("values")
    if vals is None:
        half = len(sc.nodes) // 2
        return {i: (0 if x < half else 1) for x, i in enumerate(sc.nodes)}
    for i, v in vals.items():
        sc.config.check_node(i)
        if v not in (0, 1):
            raise ConfigurationError(f"inputs.values.{i}: binary input must be 0 or 1")
    return dict(vals)


def run_abba(sc: Scenario, seed: int, trace: bool = False) -> RunResult:
    vals = _abba_values(sc)
    cap = sc.inputs.get("round_cap", 30)
    oracle = KeyOracle(seed, default_keys(sc.config))
    ctxs = _contexts(sc, oracle)
    procs = {i: AbbaProcess(ctxs[i], vals.get(i)) for i in sc.nodes}
    live = [i for i in sc.nodes if _correct(sc, i)]

    def done() -> bool:
        return all(procs[i].inst.decided is not None for i in live)

    net = _net(sc, procs, seed, trace)
    rec = _finish(net, done, sc.tick_budget)
    res = RunResult(sc, seed, rec, procs)
    res.violations["consistency"] = checks.consistency(rec, sc.config, sc.faults, "abba_decide")
    res.violations["validity"] = checks.abba_validity(rec, sc.faults)
    res.violations["coin_blindness"] = checks.abba_coin_blindness(rec, sc.faults)
    res.violations["est_lock"] = checks.abba_est_lock(rec, sc.faults)
    res.violations["crs_consistency"] = checks.crs_consistency(rec, sc.config, sc.faults)
    term = []
    if not rec.terminated:
        term.append("not every correct node decided within the budget")
    rounds = [procs[i].inst.decided_round for i in live if procs[i].inst.decided is not None]
    if rounds and max(rounds) > cap:
        term.append(f"decision after round {max(rounds)} exceeds the cap {cap}")
    res.violations["termination"] = term
    res.stats["rounds"] = max(rounds) if rounds else None
    res.stats["decision"] = next((procs[i].inst.decided for i in live
                                  if procs[i].inst.decided is not None), None)
    return res


def _mvba_schedules(sc: Scenario, seed: int) -> dict:
    inp = sc.inputs
    if "schedule" in inp:
        out = {}
        for i, rows in inp["schedule"].items():
            sc.config.check_node(i)
            out[i] = [(int(at), v) for at, v in rows]
        return out
    n = int(inp.get("n_values", len(sc.nodes)))
    spread = int(inp.get("spread", 0))
    values = [f"v{k}" for k in range(n)]
    out = {}
    for i in sc.nodes:
        rng = _rng(seed, "mvba-inputs", i)
        order = list(values)
        rng.shuffle(order)
        out[i] = [(rng.randint(0, spread) if spread else 0, v) for v in order]
    return out


def run_mvba(sc: Scenario, seed: int, trace: bool = False) -> RunResult:
    sched = _mvba_schedules(sc, seed)
    oracle = KeyOracle(seed, default_keys(sc.config))
    ctxs = _contexts(sc, oracle)
    pipeline = bool(sc.inputs.get("pipeline", False))
    procs = {i: MvbaProcess(ctxs[i], sched.get(i, []), pipeline=pipeline) for i in sc.nodes}
    live = [i for i in sc.nodes if _correct(sc, i)]

    def done() -> bool:
        return all(procs[i].inst.has_decided for i in live)

    net = _net(sc, procs, seed, trace)
    rec = _finish(net, done, sc.tick_budget)
    res = RunResult(sc, seed, rec, procs)
    insts = {i: [p.inst] for i, p in procs.items()}
    res.violations["consistency"] = checks.consistency(rec, sc.config, sc.faults, "mvba_decide")
    res.violations["validity"] = checks.mvba_validity(procs, sc.faults, insts)
    res.violations["shrinkage"] = checks.mvba_shrinkage(sc.faults, insts)
    res.violations["crs_consistency"] = checks.crs_consistency(rec, sc.config, sc.faults)
    res.violations["termination"] = [] if rec.terminated else ["not every correct node decided"]
    rounds = [procs[i].inst.decided_round for i in live if procs[i].inst.has_decided]
    res.stats["rounds"] = max(rounds) if rounds else None
    return res


def _dabc_support(sc: Scenario, node) -> Callable:
    oppose = set(sc.inputs.get("oppose", {}).get(node, []))

    def supports(payload, prefix) -> bool:
        return payload not in oppose

    return supports


def run_dabc(sc: Scenario, seed: int, trace: bool = False) -> RunResult:
    cfg = sc.config
    keys = default_keys(cfg)
    oracle = KeyOracle(seed, keys)
    ctxs = _contexts(sc, oracle)
    procs = {}
    for i in sc.nodes:
        props = [(at, payload, slot) for node, at, payload, slot in sc.proposals if node == i]
        crs = ctxs[i].crs

        def on_allow(name, epoch, crs=crs, cfg=cfg):
            # ALLOW:<node> enables a fresh key held by that node's subsets
            holders = tuple(s for s in cfg.all_subsets() if name in s.members) or tuple(cfg.all_subsets())
            crs.add_key(RandomizingKey(f"allow-{name}", holders), epoch)

        procs[i] = DabcProcess(ctxs[i], sc.time, props, sc.waits, _dabc_support(sc, i),
                               last_boundary=sc.last_boundary,
                               pending_cap=int(sc.inputs.get("pending_cap", 16)), on_allow=on_allow)
    net = _net(sc, procs, seed, trace)
    rec = _finish(net, None, sc.tick_budget)
    res = RunResult(sc, seed, rec, procs)
    res.violations["agreement"] = checks.dabc_agreement(rec, sc.faults)
    res.violations["linearizability"] = checks.dabc_linearizability(rec, cfg, sc.faults)
    res.violations["democracy"] = checks.dabc_democracy(rec, cfg, sc.faults)
    res.violations["full_knowledge"] = checks.dabc_full_knowledge(rec, sc.faults)
    res.violations["slot_closure"] = checks.dabc_slot_closure(rec, sc.faults)
    res.violations["crs_consistency"] = checks.crs_consistency(rec, cfg, sc.faults)
    insts = {i: list(p.dabc.mvba.values()) for i, p in procs.items()}
    res.violations["mvba_validity"] = checks.mvba_validity(procs, sc.faults, insts)
    live = [i for i in sc.nodes if _correct(sc, i)]
    expect = int(sc.inputs.get("expect_slots", 0))
    res.violations["liveness"] = [f"{i} ratified {len(procs[i].dabc.ratified)} of {expect} slots"
                                  for i in live if len(procs[i].dabc.ratified) < expect]
    unanswered = [f"{i} never answered wait {w}" for i in live for w in sc.waits
                  if w not in procs[i].answered]
    if sc.inputs.get("expect_known", bool(sc.waits)):
        res.violations["waiting"] = unanswered
    res.stats["ratified"] = max((len(procs[i].dabc.ratified) for i in live), default=0)
    return res


def run_txorder(sc: Scenario, seed: int, trace: bool = False) -> RunResult:
    cfg = sc.config
    tx = sc.tx
    views = sorted(sc.views, key=lambda v: v.view_id)
    keys = default_keys(cfg)
    oracle = KeyOracle(seed, keys + [RandomizingKey(v.key_id, (v.subset,)) for v in views])
    ctxs = _contexts(sc, oracle, [k.key_id for k in keys])
    rng = _rng(seed, "tx")
    fb: dict = {}
    for i, rows in tx.get("fallback_blocks", {}).items():
        cfg.check_node(i)
        fb[i] = [(int(at), b) for at, b in rows]
    if tx.get("fallback_random", 0):
        for i in sc.nodes:
            fb.setdefault(i, [])
            fb[i] += [(rng.randint(1, 60), f"fb-{i}-{k}") for k in range(int(tx["fallback_random"]))]
    procs: dict = {}
    for i in sc.nodes:
        procs[i] = TxNode(ctxs[i], views, vc_timeout=int(tx.get("vc_timeout", 80)),
                          fallback_blocks=fb.get(i, []),
                          fallback_now=bool(tx.get("fallback_now", False)),
                          watch_until=int(tx.get("watch_until", sc.tick_budget)))
    obs_node = tx.get("observer", sc.nodes[0])
    obs = tuple(cfg.subsets(obs_node))
    members = sorted({m for v in views for m in v.members})
    for m in members:
        ctx = NodeContext(m, ())
        ctx.crs = CrsNode(ctx, oracle)
        procs[m] = TxMember(ctx, views, obs, block_interval=int(tx.get("block_interval", 5)),
                            max_blocks=int(tx.get("max_blocks", 60)))
    crash: dict = {}
    kill = tx.get("kill_view")
    kill_tick = None
    if kill is not None:
        lo, hi = tx.get("kill_range", [10, 150])
        kill_tick = int(tx.get("kill_at", rng.randint(int(lo), int(hi))))
        for v in views:
            if v.view_id == kill:
                crash.update({m: kill_tick for m in v.members if m not in sc.member_byzantine})
    for m, at in sc.crash_at.items():
        if m in procs and m not in cfg.nodes:
            crash[m] = at
    status = {m: Status.BYZANTINE for m in sc.member_byzantine}
    net = _net(sc, procs, seed, trace, extra_status=status, extra_crash=crash)
    live = [i for i in sc.nodes if _correct(sc, i)]
    fallback = bool(tx.get("fallback_now")) or bool(tx.get("expect_fallback", False))
    target = int(tx.get("expect_view", views[-1].view_id if kill is not None else views[0].view_id))
    extra = int(tx.get("expect_blocks", 3))
    blocks = {b for rows in fb.values() for _, b in rows}

    def done() -> bool:
        if fallback:
            return all(blocks <= procs[i].chain.ratified_set for i in live)
        for i in live:
            p = procs[i]
            if p.view != target or target not in p.mins:
                return False
            if sum(1 for n in p.accepted if n >= p.mins[target]) < extra:
                return False
        return True

    rec = _finish(net, done, sc.tick_budget)
    res = RunResult(sc, seed, rec, procs)
    res.violations["cross_view_safety"] = checks.tx_cross_view_safety(rec, cfg, sc.faults)
    res.violations["view_agreement"] = checks.tx_view_agreement(rec, sc.faults)
    res.violations["crs_consistency"] = checks.crs_consistency(rec, cfg, sc.faults)
    if fallback:
        res.violations["fallback_pins"] = checks.tx_fallback_pins(rec, sc.faults, live)
    if tx.get("expect_progress", True):
        res.violations["liveness"] = [] if rec.terminated else [
            "correct nodes did not reach the expected view and progress"]
    mins = {procs[i].mins.get(target) for i in live}
    res.stats.update({"kill_tick": kill_tick, "min": sorted(m for m in mins if m is not None),
                      "stalls": sum(procs[i].stalls for i in live)})
    return res


class _CoinProcess:
    def __init__(self, ctx: NodeContext, tag) -> None:
        self.ctx, self.tag = ctx, tag

    def start(self) -> None:
        self.ctx.crs.sample(self.tag, BIT)

    def on_message(self, msg) -> None:
        if msg.tag[0] == "crs":
            self.ctx.crs.handle(msg)

    def on_timer(self, name) -> None:
        pass


def crs_prediction_rate(trials: int, controlled: int, n: int = 4, t: int = 1, seed0: int = 0) -> float:
    """Fraction of binary coins an adversary holding ``controlled`` shares predicts in advance.

    Each trial uses a fresh master secret on a complete network with one
    protected key. The adversary commits to its guess before any node
    samples; the coin is then produced by a full simulated run.
    """
    nodes = [f"n{x}" for x in range(n)]
    cfg = TrustConfig.complete(nodes, t)
    adv = frozenset(nodes[:controlled])
    hits = 0
    for k in range(trials):
        seed = seed0 + k
        keys = default_keys(cfg)
        oracle = KeyOracle(seed, keys)
        tag = ("trial", seed)
        guess = adversary_predict(AdversaryView(oracle, adv), tag, [key.key_id for key in keys])
        procs = {}
        for i in nodes:
            ctx = NodeContext(i, cfg.subsets(i))
            ctx.crs = CrsNode(ctx, oracle)
            procs[i] = _CoinProcess(ctx, tag)
        SimNet(procs, seed=seed).run(None, tick_budget=1_000)
        out = {procs[i].ctx.crs.output(tag) for i in nodes}
        if len(out) != 1 or None in out:
            raise RuntimeError(f"coin trial {seed} did not produce one common output: {out}")
        hits += guess == out.pop()
    return hits / trials


DRIVERS = {"rbc": run_rbc, "drbc": run_rbc, "abba": run_abba, "mvba": run_mvba,
           "dabc": run_dabc, "txorder": run_txorder}


def run(sc: Scenario, seed: int | None = None, trace: bool = False) -> RunResult:
    if sc.protocol is None:
        raise ConfigurationError("scenario does not name a protocol")
    return DRIVERS[sc.protocol](sc, sc.seed if seed is None else seed, trace)

