"""Acceptance criteria, one test per criterion with tolerances pinned as stated.

Each test records a PASS/FAIL line (shown in the pytest summary) and then
asserts. ``python3 tests/test_acceptance.py`` runs them without pytest.
"""

from __future__ import annotations

import math
import statistics
import time
from contextlib import contextmanager

from cobalt import drivers, oracle
from cobalt.drivers import crs_prediction_rate
from cobalt.topology import validate_subset

import helpers


@contextmanager
def criterion(k: int, name: str, limit_s: float):
    box: dict = {"ok": False, "detail": ""}
    t0 = time.perf_counter()
    try:
        yield box
    finally:
        secs = time.perf_counter() - t0
        ok = bool(box["ok"]) and secs < limit_s
        line = (f"[{'PASS' if ok else 'FAIL'}] {k}. {name}: {box['detail']} "
                f"({secs:.1f}s, limit {limit_s:g}s)")
        helpers.RESULTS.append(line)
        print(line)
    assert box["ok"], box["detail"]
    assert secs < limit_s, f"took {secs:.1f}s, limit {limit_s}s"


def _sweep(docs):
    bad = []
    results = []
    for seed, doc in docs:
        res = drivers.run(helpers.parse(doc), seed)
        results.append(res)
        for k, ms in res.violations.items():
            bad += [(seed, k, m) for m in ms]
    return results, bad


def test_1_parameter_laws():
    with criterion(1, "parameter laws, n <= 12", 1.0) as c:
        mismatches = 0
        cases = 0
        for n in range(0, 13):
            for t in range(-1, n + 2):
                for q in range(-1, n + 2):
                    cases += 1
                    direct = 0 <= t <= n and 0 <= q <= n and t < 2 * q - n and 2 * t < q
                    mismatches += direct != (not validate_subset(n, t, q))
        family = all(not validate_subset(n, t, n - t)
                     for t in range(0, 5) for n in range(max(3 * t + 1, 1), 13))
        c["ok"] = mismatches == 0 and family
        c["detail"] = f"{cases} shapes, {mismatches} mismatches, classic family accepted={family}"


def test_2_lemma_oracles():
    with criterion(2, "support-counting lemma oracles, n_S <= 7", 60.0) as c:
        reps = [oracle.support_transfer(7), oracle.no_dual_strong_support(7)]
        c["ok"] = all(r.ok for r in reps)
        c["detail"] = ", ".join(f"{r.name} {r.cases} cases {len(r.counterexamples)} counterexamples"
                                for r in reps)


def test_3_rbc_consistency_and_locality():
    with criterion(3, "RBC consistency and locality, 1000 runs", 120.0) as c:
        seeds = range(1000)
        results, bad = _sweep((s, helpers.rbc_doc(s)) for s in seeds)
        local = sum(1 for s in seeds if s % 3 == 2)
        cons = [b for b in bad if b[1] == "consistency"]
        c["ok"] = not bad
        c["detail"] = (f"{len(results)} runs ({local} locality), {len(cons)} consistency violations, "
                       f"{len(bad)} violations total")


def test_4_abba_termination_and_rounds():
    with criterion(4, "ABBA n=4 t=1, 500 seeds per strategy", 180.0) as c:
        parts = []
        ok = True
        for strategy in ("crash", "byz"):
            results, bad = _sweep((s, helpers.abba_doc(s, strategy)) for s in range(500))
            rounds = [r.stats["rounds"] for r in results if r.stats["rounds"] is not None]
            term = sum(1 for r in results if r.record.terminated and r.stats["rounds"] is not None
                       and r.stats["rounds"] <= 30) / len(results)
            mean = statistics.fmean(rounds)
            ok &= not bad and term == 1.0 and mean <= 4
            parts.append(f"{strategy}: termination {term:.0%}, mean rounds {mean:.2f}, "
                         f"max {max(rounds)}, {len(bad)} violations")
        c["ok"] = ok
        c["detail"] = "; ".join(parts)


def test_5_mvba_round_law():
    with criterion(5, "MVBA log3 round law, N in {3, 9, 27}", 300.0) as c:
        means = {}
        bad_all = []
        for nv in (3, 9, 27):
            results, bad = _sweep((s, helpers.mvba_doc(nv)) for s in range(200))
            bad_all += bad
            # rounds executed = index of the deciding round + 1
            means[nv] = statistics.fmean(r.stats["rounds"] + 1 for r in results)
        within = all(means[nv] <= math.log(nv, 3) + 1.5 for nv in means)
        steps = [means[9] - means[3], means[27] - means[9]]
        c["ok"] = not bad_all and within and all(d <= 1.5 for d in steps)
        c["detail"] = (", ".join(f"N={nv} mean {m:.3f} (bound {math.log(nv, 3) + 1.5:.2f})"
                                 for nv, m in means.items())
                       + f", increases {steps[0]:+.3f} {steps[1]:+.3f}, {len(bad_all)} violations")


def test_6_dabc_end_to_end():
    with criterion(6, "DABC agreement, linearizability, democracy, full knowledge, 300 runs", 300.0) as c:
        results, bad = _sweep((s, helpers.dabc_doc(s)) for s in range(300))
        ratified = sum(r.stats["ratified"] for r in results)
        c["ok"] = not bad
        c["detail"] = f"{len(results)} runs, {ratified} slots ratified, {len(bad)} violations"


def test_7_crs_unpredictability():
    with criterion(7, "CRS unpredictability, 2000 trials", 60.0) as c:
        rate_t = crs_prediction_rate(2000, 1)
        rate_0 = crs_prediction_rate(2000, 0, seed0=10_000)
        control = crs_prediction_rate(2000, 2, seed0=20_000)
        c["ok"] = abs(rate_t - 0.5) <= 0.05 and abs(rate_0 - 0.5) <= 0.05 and control >= 0.95
        c["detail"] = (f"t_S shares {rate_t:.4f}, no shares {rate_0:.4f} (band 0.50 +/- 0.05), "
                       f"full compromise {control:.4f} (>= 0.95)")


def test_8_view_change_and_fallback():
    with criterion(8, "view change, 300 kills of view 1, plus fallback", 300.0) as c:
        results, bad = _sweep((s, helpers.tx_doc(s)) for s in range(300))
        agreed = sum(1 for r in results if len(r.stats["min"]) == 1)
        all_byz = sum(1 for s in range(300) if s % 4 == 3)
        fb, fb_bad = _sweep((s, helpers.fallback_doc(s)) for s in range(30))
        c["ok"] = not bad and not fb_bad and agreed == len(results)
        c["detail"] = (f"{len(results)} runs ({all_byz} fully Byzantine view 1), min(v2) agreed in "
                       f"{agreed}, {len(bad)} violations; fallback {len(fb)} runs, "
                       f"{len(fb_bad)} violations")


def test_9_determinism():
    with criterion(9, "byte-identical replay, 50 scenarios", 60.0) as c:
        docs = ([(s, helpers.rbc_doc(s)) for s in range(12)]
                + [(s, helpers.abba_doc(s, "byz")) for s in range(10)]
                + [(s, helpers.mvba_doc(9)) for s in range(8)]
                + [(s, helpers.dabc_doc(s)) for s in range(8)]
                + [(s, helpers.tx_doc(s)) for s in range(8)]
                + [(s, helpers.fallback_doc(s)) for s in range(4)])
        diff = 0
        for seed, doc in docs:
            a = drivers.run(helpers.parse(doc), seed, trace=True).record.dumps()
            b = drivers.run(helpers.parse(doc), seed, trace=True).record.dumps()
            diff += a != b
        c["ok"] = diff == 0 and len(docs) == 50
        c["detail"] = f"{len(docs)} scenarios, {diff} differing replays"


if __name__ == "__main__":
    import sys

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
