"""Scripted Byzantine behaviour.

A Byzantine node runs the honest state machine and every message it would
broadcast is passed through a script that decides, per recipient, what is
actually sent. Scripts are deterministic given the network RNG.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from .common import ConfigurationError, Message, NodeId

Mutator = Callable[[Message, random.Random], Message]


def flip(value):
    """Default payload mutation: flip bits, perturb strings, complement bit sets."""
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return 1 - value if value in (0, 1) else value + 1
    if isinstance(value, str):
        return value + "~"
    if isinstance(value, frozenset):
        if value <= {0, 1}:
            return frozenset({0, 1}) - value or frozenset({0})
        return frozenset(flip(v) for v in value)
    if isinstance(value, tuple):
        return tuple(flip(v) for v in value)
    return value


def default_mutator(msg: Message, rng: random.Random) -> Message:
    """Flip the first payload field; round numbers and slots live later by convention."""
    if not msg.payload:
        return msg
    return msg.with_payload((flip(msg.payload[0]),) + tuple(msg.payload[1:]))


@dataclass
class Script:
    mutator: Mutator = default_mutator

    def transform(self, msg: Message, recipients: list, rng: random.Random) -> list[tuple]:
        return [(r, msg) for r in recipients]

    def on_start(self, me: NodeId, recipients: list, rng: random.Random) -> list[tuple]:
        return []


class Honest(Script):
    pass


class Silent(Script):
    def transform(self, msg, recipients, rng):
        return []


@dataclass
class Equivocate(Script):
    """Half of the recipients (a fixed split per node) get a mutated copy."""

    split: frozenset | None = None

    def transform(self, msg, recipients, rng):
        if self.split is None:
            order = list(recipients)
            rng.shuffle(order)
            self.split = frozenset(order[: len(order) // 2])
        alt = self.mutator(msg, rng)
        return [(r, alt if r in self.split else msg) for r in recipients]


@dataclass
class RandomScript(Script):
    """Per recipient: drop, mutate or pass the honest message."""

    p_drop: float = 0.3
    p_mutate: float = 0.4

    def transform(self, msg, recipients, rng):
        out = []
        for r in recipients:
            x = rng.random()
            if x < self.p_drop:
                continue
            out.append((r, self.mutator(msg, rng) if x < self.p_drop + self.p_mutate else msg))
        return out


@dataclass
class Inject(Script):
    """Honest relay plus a fixed batch of per-recipient messages at start."""

    initial: list = field(default_factory=list)
    inner: Script = field(default_factory=Honest)

    def transform(self, msg, recipients, rng):
        return self.inner.transform(msg, recipients, rng)

    def on_start(self, me, recipients, rng):
        return [(r, m) for r, m in self.initial]


SCRIPTS = {"honest": Honest, "silent": Silent, "equivocate": Equivocate, "random": RandomScript}


def make_script(name: str, mutator: Mutator | None = None) -> Script:
    try:
        cls = SCRIPTS[name]
    except KeyError:
        raise ConfigurationError(f"unknown Byzantine script {name!r}") from None
    return cls(mutator) if mutator is not None else cls()
