"""Trust graph: essential subsets, UNLs, fault classification, linkage and support.

Everything here is a pure function over immutable inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .common import ConfigurationError, NodeId


@dataclass(frozen=True)
class EssentialSubset:
    """A parameterised quorum group. Same members with different (t, q) are distinct."""

    members: frozenset
    t: int
    q: int

    def __post_init__(self) -> None:
        if not isinstance(self.members, frozenset):
            object.__setattr__(self, "members", frozenset(self.members))

    @property
    def n(self) -> int:
        return len(self.members)

    def violations(self) -> list[str]:
        return validate_subset(self.n, self.t, self.q)

    def __repr__(self) -> str:
        return f"ES({sorted(map(str, self.members))}, t={self.t}, q={self.q})"


def validate_subset(n: int, t: int, q: int) -> list[str]:
    """Return the names of violated parameter laws; an empty list means ok.

    bounds: 0 <= t <= n and 0 <= q <= n.
    quorum_intersection: t < 2q - n.
    quorum_liveness: 2t < q.
    """
    out = []
    if not (0 <= t <= n and 0 <= q <= n):
        out.append("bounds")
    if not t < 2 * q - n:
        out.append("quorum_intersection")
    if not 2 * t < q:
        out.append("quorum_liveness")
    return out


class Status(enum.Enum):
    CORRECT = "correct"
    CRASHED = "crashed"
    BYZANTINE = "byzantine"


@dataclass(frozen=True)
class TrustConfig:
    """Full trust topology. UNLs are derived from the essential subsets."""

    nodes: frozenset
    es: Mapping[NodeId, tuple]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", frozenset(self.nodes))
        object.__setattr__(self, "es", {k: tuple(v) for k, v in self.es.items()})
        for i, subsets in self.es.items():
            if i not in self.nodes:
                raise ConfigurationError(f"essential subsets declared for unknown node {i!r}")
            for s in subsets:
                stray = s.members - self.nodes
                if stray:
                    raise ConfigurationError(
                        f"subset of {i!r} references unknown nodes {sorted(map(str, stray))}"
                    )

    @classmethod
    def complete(cls, nodes: Iterable[NodeId], t: int, q: int | None = None) -> "TrustConfig":
        """Every node trusts one subset containing all nodes."""
        nodes = frozenset(nodes)
        s = EssentialSubset(nodes, t, len(nodes) - t if q is None else q)
        return cls(nodes, {i: (s,) for i in nodes})

    def subsets(self, i: NodeId) -> tuple:
        return self.es.get(i, ())

    def unl(self, i: NodeId) -> frozenset:
        out: set = set()
        for s in self.subsets(i):
            out |= s.members
        return frozenset(out)

    def all_subsets(self) -> list[EssentialSubset]:
        """Distinct subsets in deterministic order."""
        seen: dict = {}
        for i in sorted(self.nodes, key=str):
            for s in self.es.get(i, ()):
                seen.setdefault(s, None)
        return list(seen)

    def violations(self) -> dict:
        out = {}
        for s in self.all_subsets():
            v = s.violations()
            if v:
                out[s] = v
        return out

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            s, v = next(iter(bad.items()))
            raise ConfigurationError(f"invalid subset {s!r}: {', '.join(v)}")

    def check_node(self, i: NodeId) -> None:
        if i not in self.nodes:
            raise ConfigurationError(f"unknown node {i!r}")


@dataclass(frozen=True)
class FaultAssignment:
    status: Mapping[NodeId, Status] = field(default_factory=dict)

    def of(self, i: NodeId) -> Status:
        return self.status.get(i, Status.CORRECT)

    def honest(self, i: NodeId) -> bool:
        return self.of(i) is not Status.BYZANTINE

    def correct(self, i: NodeId) -> bool:
        return self.of(i) is Status.CORRECT

    def byzantine(self) -> frozenset:
        return frozenset(i for i, s in self.status.items() if s is Status.BYZANTINE)

    def faulty(self) -> frozenset:
        return frozenset(i for i, s in self.status.items() if s is not Status.CORRECT)


@dataclass(frozen=True)
class NodeClassification:
    extended_unl: Mapping[NodeId, frozenset]
    healthy: frozenset
    unblocked: frozenset


def extended_unl(config: TrustConfig, faults: FaultAssignment, i: NodeId) -> frozenset:
    """UNL closure through honest members."""
    out = set(config.unl(i))
    frontier = [j for j in out if faults.honest(j)]
    expanded = set()
    while frontier:
        j = frontier.pop()
        if j in expanded:
            continue
        expanded.add(j)
        for k in config.unl(j):
            if k not in out:
                out.add(k)
                if faults.honest(k):
                    frontier.append(k)
    return frozenset(out)


def _fixpoint(config: TrustConfig, bad: set) -> frozenset:
    """Grow ``bad`` by nodes with some subset holding > min(t, n-q) bad members."""
    cap = len(config.nodes) + 1
    for _ in range(cap):
        grown = {
            i
            for i in config.nodes
            if i not in bad
            and any(len(s.members & bad) > min(s.t, s.n - s.q) for s in config.subsets(i))
        }
        if not grown:
            break
        bad |= grown
    return frozenset(config.nodes - bad)


def classify(config: TrustConfig, faults: FaultAssignment) -> NodeClassification:
    config.validate()
    ext = {i: extended_unl(config, faults, i) for i in config.nodes}
    healthy = _fixpoint(config, set(faults.byzantine()))
    unblocked = _fixpoint(config, {i for i in config.nodes if not (i in healthy and faults.correct(i))})
    return NodeClassification(ext, healthy, unblocked)


class Linkage(enum.IntEnum):
    UNLINKED = 0
    LINKED = 1
    FULLY_LINKED = 2


def subset_linkage(s: EssentialSubset, faults: FaultAssignment) -> Linkage:
    byz = sum(1 for m in s.members if not faults.honest(m))
    if byz > s.t:
        return Linkage.UNLINKED
    good = sum(1 for m in s.members if faults.correct(m))
    if good >= s.q and s.t <= s.n - s.q:
        return Linkage.FULLY_LINKED
    return Linkage.LINKED


def linkage(config: TrustConfig, faults: FaultAssignment, i: NodeId, j: NodeId) -> Linkage:
    config.check_node(i)
    config.check_node(j)
    shared = set(config.subsets(i)) & set(config.subsets(j))
    best = Linkage.UNLINKED
    for s in shared:
        best = max(best, subset_linkage(s, faults))
    return best


def linked(config: TrustConfig, faults: FaultAssignment, i: NodeId, j: NodeId) -> bool:
    return linkage(config, faults, i, j) >= Linkage.LINKED


@dataclass(frozen=True)
class Connectivity:
    weakly_connected: bool
    strongly_connected: bool


def connectivity(
    config: TrustConfig,
    faults: FaultAssignment,
    i: NodeId,
    classification: NodeClassification | None = None,
) -> Connectivity:
    """Pairs are distinct nodes; a node is trivially linked with itself.

    A node that is not itself healthy is reported as neither weakly nor
    strongly connected, rather than vacuously connected to an empty region.
    """
    config.check_node(i)
    cls = classification or classify(config, faults)
    if i not in cls.healthy:
        return Connectivity(False, False)
    region = sorted((k for k in cls.extended_unl[i] if k in cls.healthy), key=str)
    full = Linkage.FULLY_LINKED
    weak = all(linkage(config, faults, i, k) == full for k in region if k != i)
    strong = all(
        linkage(config, faults, a, b) == full
        for x, a in enumerate(region)
        for b in region[x + 1 :]
    )
    return Connectivity(weak, strong)


class Support(enum.IntEnum):
    NONE = 0
    WEAK = 1
    STRONG = 2


def has_weak_support(es: tuple, senders) -> bool:
    return any(len(s.members & senders) > s.t for s in es)


def has_strong_support(es: tuple, senders) -> bool:
    return all(len(s.members & senders) >= s.q for s in es)


def support(es: tuple, received: Mapping[NodeId, object], target: object) -> Support:
    if not es:
        raise ConfigurationError("support evaluated against an empty essential-subset list")
    senders = frozenset(k for k, v in received.items() if v == target)
    if has_strong_support(es, senders):
        return Support.STRONG
    if has_weak_support(es, senders):
        return Support.WEAK
    return Support.NONE


def quorum_model_linked(n_i: int, q_i: int, n_j: int, q_j: int, overlap: int) -> bool:
    """Whether two quorum-model nodes share an implicit essential subset.

    Under the quorum model every subset of size at least 3(n - q) + 1 of a
    node's UNL is essential, so the test reduces to the overlap size.
    """
    for n, q in ((n_i, q_i), (n_j, q_j)):
        if not 0 <= q <= n:
            raise ValueError(f"quorum {q} outside [0, {n}]")
    if overlap < 0 or overlap > min(n_i, n_j):
        raise ValueError(f"overlap {overlap} outside [0, {min(n_i, n_j)}]")
    return overlap >= max(3 * (n_i - q_i) + 1, 3 * (n_j - q_j) + 1)


def safety_report(config: TrustConfig, faults: FaultAssignment) -> dict:
    """Structured report: violations, linkage matrix, classification, connectivity."""
    nodes = sorted(config.nodes, key=str)
    viol = {repr(s): v for s, v in config.violations().items()}
    report: dict = {"nodes": nodes, "violations": viol}
    if viol:
        return report
    cls = classify(config, faults)
    report["linkage"] = {
        i: {j: linkage(config, faults, i, j).name.lower() for j in nodes} for i in nodes
    }
    report["healthy"] = sorted(cls.healthy, key=str)
    report["unblocked"] = sorted(cls.unblocked, key=str)
    report["extended_unl"] = {i: sorted(cls.extended_unl[i], key=str) for i in nodes}
    report["connectivity"] = {}
    for i in nodes:
        c = connectivity(config, faults, i, cls)
        report["connectivity"][i] = {"weak": c.weakly_connected, "strong": c.strongly_connected}
    return report
