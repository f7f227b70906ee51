"""Command line entry point: ``cobalt analyze|run|sweep|oracle``."""

from __future__ import annotations

import argparse
import json
import sys

from . import drivers, harness, scenario
from .common import ConfigurationError, canon, plain


def _emit(obj) -> None:
    print(canon(obj).decode())


def _analyze(args) -> int:
    report, code = harness.analyze(args.config)
    if args.format == "records":
        _emit({"k": "analysis", **plain(report)})
        return code
    if report["violations"]:
        for s, names in report["violations"].items():
            print(f"INVALID {s}: {', '.join(names)}")
    else:
        nodes = report["nodes"]
        print("linkage:")
        w = max(len(str(n)) for n in nodes)
        short = {"fully_linked": "F", "linked": "L", "unlinked": "."}
        print(" " * (w + 1) + " ".join(str(n) for n in nodes))
        for i in nodes:
            row = " ".join(short[report["linkage"][i][j]].rjust(len(str(j))) for j in nodes)
            print(f"{str(i).rjust(w)} {row}")
        print("healthy:", " ".join(map(str, report["healthy"])) or "-")
        print("unblocked:", " ".join(map(str, report["unblocked"])) or "-")
        for i in nodes:
            c = report["connectivity"][i]
            print(f"{i}: weakly connected={c['weak']} strongly connected={c['strong']}")
    for q in report["quorum_checks"]:
        print(f"quorum model n={q['n_i']},{q['n_j']} q={q['q_i']},{q['q_j']} "
              f"overlap={q['overlap']}: {'linked' if q['linked'] else 'not linked'}")
    return code


def _run(args) -> int:
    sc = scenario.load(args.scenario)
    res = drivers.run(sc, args.seed, trace=args.trace)
    viol = {k: v for k, v in res.violations.items() if v}
    if args.format == "records":
        for line in res.record.lines():
            print(line)
        _emit({"k": "verdict", "seed": res.seed, "ok": res.ok, "violations": viol,
               "stats": res.stats, "digest": res.digest()})
    else:
        print(f"{sc.protocol} seed={res.seed} terminated={res.record.terminated} "
              f"end={res.record.end_tick} sent={res.record.metrics.get('sent', 0)}")
        for k, v in sorted(res.stats.items()):
            print(f"  {k}: {v}")
        for k, ms in sorted(viol.items()):
            for m in ms:
                print(f"VIOLATION {k}: {m}")
        print("PASS" if res.ok else "FAIL")
    return harness.EXIT_OK if res.ok else harness.EXIT_VIOLATION


def _sweep(args) -> int:
    seeds = harness.parse_seeds(args.seeds)
    rep = harness.sweep(args.scenario, seeds, workers=args.workers)
    if args.format == "records":
        for s in rep.seeds:
            _emit({"k": "run", "seed": s, "digest": rep.digests[s]})
        for seed, k, m in rep.violations:
            _emit({"k": "violation", "seed": seed, "check": k, "message": m})
        _emit({"k": "summary", **rep.summary()})
    else:
        for k, v in rep.summary().items():
            print(f"{k}: {v}")
        for seed, k, m in rep.violations[:50]:
            print(f"VIOLATION seed={seed} {k}: {m}")
        print("PASS" if rep.ok else "FAIL")
    return harness.EXIT_OK if rep.ok else harness.EXIT_VIOLATION


def _oracle(args) -> int:
    reps = harness.run_oracle(args.instance)
    for r in reps:
        if args.format == "records":
            _emit({"k": "oracle", "name": r.name, "cases": r.cases, "complete": r.complete,
                   "counterexamples": r.counterexamples[:20]})
        else:
            state = "verified" if r.ok else ("incomplete" if not r.complete else "COUNTEREXAMPLE")
            print(f"{r.name}: {state} ({r.cases} cases)")
            for c in r.counterexamples[:5]:
                print("  ", json.dumps(plain(c)))
    return harness.EXIT_OK if all(r.ok for r in reps) else harness.EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cobalt", description="Cobalt protocol simulator and analyzer")
    sub = p.add_subparsers(dest="cmd", required=True)
    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=("text", "records"), default="text")
    a = sub.add_parser("analyze", parents=[fmt], help="validate a trust topology and report linkage")
    a.add_argument("config")
    a.set_defaults(fn=_analyze)
    r = sub.add_parser("run", parents=[fmt], help="run one seeded scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--trace", action="store_true", help="include every delivery in the record")
    r.set_defaults(fn=_run)
    s = sub.add_parser("sweep", parents=[fmt], help="run a scenario over a seed range")
    s.add_argument("scenario")
    s.add_argument("--seeds", required=True, help="inclusive range A..B")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=_sweep)
    o = sub.add_parser("oracle", parents=[fmt], help="exhaustive checks on a small instance")
    o.add_argument("instance")
    o.set_defaults(fn=_oracle)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return harness.EXIT_USAGE if e.code else harness.EXIT_OK
    try:
        return args.fn(args)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return harness.EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
