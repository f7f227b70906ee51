"""Orchestration behind the command line: analysis, single runs, sweeps, oracles."""

from __future__ import annotations

import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import drivers, oracle, scenario
from .common import ConfigurationError, plain
from .topology import quorum_model_linked, safety_report

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


def analyze(path: str | Path) -> tuple[dict, int]:
    sc = scenario.load(path)
    report = safety_report(sc.config, sc.faults)
    checks = []
    for n_i, q_i, n_j, q_j, overlap in sc.quorum_checks:
        try:
            ok = quorum_model_linked(n_i, q_i, n_j, q_j, overlap)
        except ValueError as e:
            raise ConfigurationError(f"quorum_checks: {e}") from None
        checks.append({"n_i": n_i, "q_i": q_i, "n_j": n_j, "q_j": q_j, "overlap": overlap,
                       "linked": ok})
    report["quorum_checks"] = checks
    return report, EXIT_VIOLATION if report["violations"] else EXIT_OK


@dataclass
class SweepReport:
    protocol: str
    seeds: list
    digests: dict = field(default_factory=dict)  # seed -> record digest
    terminated: int = 0
    rounds: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    violations: list = field(default_factory=list)  # (seed, check, message)

    @property
    def runs(self) -> int:
        return len(self.seeds)

    @property
    def termination_rate(self) -> float:
        return self.terminated / self.runs if self.runs else 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> dict:
        out = {"protocol": self.protocol, "runs": self.runs,
               "termination_rate": self.termination_rate,
               "violations": len(self.violations),
               "mean_messages": statistics.fmean(self.messages) if self.messages else None}
        if self.rounds:
            rs = sorted(self.rounds)
            out["mean_rounds"] = statistics.fmean(rs)
            out["p95_rounds"] = rs[min(len(rs) - 1, math.ceil(0.95 * len(rs)) - 1)]
            out["max_rounds"] = rs[-1]
        return out


def _one(args) -> tuple:
    path, seed = args
    res = drivers.run(scenario.load(path), seed)
    return _row(res)


def _row(res: drivers.RunResult) -> tuple:
    viol = [(k, m) for k, ms in sorted(res.violations.items()) for m in ms]
    return (res.seed, res.digest(), res.record.terminated, res.stats.get("rounds"),
            res.record.metrics.get("sent", 0), viol)


def sweep(path: str | Path, seeds, workers: int = 1) -> SweepReport:
    sc = scenario.load(path)
    seeds = sorted(seeds)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_one, [(str(path), s) for s in seeds]))
    else:
        rows = [_row(drivers.run(sc, s)) for s in seeds]
    rep = SweepReport(sc.protocol, seeds)
    for seed, dg, term, rounds, sent, viol in sorted(rows):
        rep.digests[seed] = dg
        rep.terminated += bool(term)
        if rounds is not None:
            rep.rounds.append(rounds)
        rep.messages.append(sent)
        rep.violations.extend((seed, k, m) for k, m in viol)
    return rep


def run_oracle(path: str | Path) -> list[oracle.OracleReport]:
    try:
        doc = tomllib.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigurationError(f"cannot read {path}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: parse error: {e}") from None
    return oracle.run_instance(doc)


def parse_seeds(text: str) -> list[int]:
    """``A..B`` inclusive, or a single integer."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(text)]
    except ValueError:
        raise ConfigurationError(f"bad seed range {text!r}; expected A..B") from None


def jsonable(obj):
    return plain(obj)
