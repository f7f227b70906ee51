"""Shared primitives: wire messages, canonical encoding, node context, errors."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable

NodeId = str


class ConfigurationError(ValueError):
    """Raised for invalid trust configurations or scenarios."""


class ProtocolViolation(RuntimeError):
    """An honest state machine was driven outside its contract."""


@dataclass(frozen=True, slots=True)
class Message:
    """A tagged, instance-scoped protocol message.

    ``tag`` scopes the message to one protocol instance, ``label`` is the
    message kind (INIT, ECHO, ...) and ``payload`` its content. ``sender`` is
    stamped by the network layer and cannot be forged by Byzantine scripts.
    """

    tag: tuple
    label: str
    payload: tuple = ()
    sender: NodeId = ""

    def with_payload(self, payload: tuple) -> "Message":
        return Message(self.tag, self.label, payload, self.sender)


def plain(obj: Any) -> Any:
    """Convert nested protocol values into JSON-compatible canonical form."""
    if isinstance(obj, (tuple, list)):
        return [plain(x) for x in obj]
    if isinstance(obj, (frozenset, set)):
        items = [plain(x) for x in obj]
        return sorted(items, key=lambda x: json.dumps(x, sort_keys=True))
    if isinstance(obj, bytes):
        return obj.hex()
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if hasattr(obj, "value") and hasattr(obj, "name") and not isinstance(obj, (int, str)):
        return obj.value
    return obj


def canon(obj: Any) -> bytes:
    """Deterministic byte serialization used for hashing and logs."""
    return json.dumps(plain(obj), separators=(",", ":"), sort_keys=True).encode()


def digest(*parts: Any) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        b = p if isinstance(p, bytes) else canon(p)
        h.update(len(b).to_bytes(4, "big"))
        h.update(b)
    return h.digest()


@dataclass
class NodeContext:
    """Per-node execution context shared by every protocol instance on a node.

    Instances emit through :meth:`broadcast`; the owning process drains
    ``outbox`` after each event. ``log`` forwards structured output records
    to the run recorder when one is attached.
    """

    node_id: NodeId
    es: tuple = ()
    outbox: list = field(default_factory=list)
    now: int = 0
    crs: Any = None
    sink: Callable[..., None] | None = None
    metrics: dict = field(default_factory=dict)
    timers: list = field(default_factory=list)

    def set_timer(self, delay: int, name: Hashable) -> None:
        self.timers.append((max(1, int(delay)), name))

    def broadcast(self, tag: tuple, label: str, payload: tuple = ()) -> Message:
        msg = Message(tag, label, payload, self.node_id)
        self.outbox.append(msg)
        return msg

    def log(self, kind: str, **fields: Any) -> None:
        if self.sink is not None:
            self.sink(self.node_id, kind, fields)

    def bump(self, metric: str, amount: int = 1) -> None:
        self.metrics[metric] = self.metrics.get(metric, 0) + amount

    def drain(self) -> list[Message]:
        out = list(self.outbox)
        self.outbox.clear()
        return out

    def child(self, es: tuple) -> "NodeContext":
        """A context sharing this node's outbox and services but counting support over ``es``."""
        return NodeContext(self.node_id, es, self.outbox, self.now, self.crs, self.sink, self.metrics)


class FirstWins:
    """Per-sender store where the first content for a key wins.

    Later conflicting content from the same sender is counted as an
    equivocation and dropped.
    """

    __slots__ = ("by_key", "equivocations")

    def __init__(self) -> None:
        self.by_key: dict[Hashable, dict[NodeId, Any]] = {}
        self.equivocations = 0

    def add(self, key: Hashable, sender: NodeId, content: Any) -> bool:
        slot = self.by_key.setdefault(key, {})
        prev = slot.get(sender, _MISSING)
        if prev is _MISSING:
            slot[sender] = content
            return True
        if prev != content:
            self.equivocations += 1
        return False

    def get(self, key: Hashable) -> dict[NodeId, Any]:
        return self.by_key.get(key, {})

    def senders_with(self, key: Hashable, content: Any) -> set[NodeId]:
        return {s for s, c in self.by_key.get(key, {}).items() if c == content}

    def contents(self, key: Hashable) -> set:
        return set(self.by_key.get(key, {}).values())


_MISSING = object()
