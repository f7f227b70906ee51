"""Common random source built from per-key threshold signatures and a mixer.

Cryptography is simulation grade. A :class:`KeyOracle` owned by the simulator
holds every key secret and plays the role of share verification and
threshold combination. Protocol code and adversary code only ever hold share
tokens; a per-tag signature can be obtained only by presenting ``t + 1``
valid tokens from members of one holder subset, or by receiving an echoed
signature from a peer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable

from .common import ConfigurationError, Message, NodeContext, NodeId, ProtocolViolation, digest
from .topology import EssentialSubset, TrustConfig

BIT = "bit"
U128 = "u128"
SPACES = (BIT, U128)


@dataclass(frozen=True)
class RandomizingKey:
    key_id: str
    holders: tuple  # EssentialSubsets holding independent (t+1, n) sharings


def default_keys(config: TrustConfig) -> list[RandomizingKey]:
    """One key per distinct essential subset, shared among that subset only."""
    return [RandomizingKey(f"k{x}", (s,)) for x, s in enumerate(config.all_subsets())]


def expand(mixed: bytes, space: str) -> int:
    """The pseudorandom map G from a mixed seed into the sample space."""
    out = digest(b"G", space, mixed)
    if space == BIT:
        return out[0] & 1
    if space == U128:
        return int.from_bytes(out[:16], "big")
    raise ConfigurationError(f"unknown sample space {space!r}")


def mix(signatures: list[bytes]) -> bytes:
    """Hash of the signatures in canonical key order (caller sorts)."""
    return digest(b"mix", *signatures)


class KeyOracle:
    """Simulator-held key material. Never handed to adversary code."""

    def __init__(self, master_seed: int, keys: list[RandomizingKey]) -> None:
        self._secrets: dict[str, bytes] = {}
        self.keys: dict[str, RandomizingKey] = {}
        self._master = master_seed
        for k in keys:
            self.register(k)

    def register(self, key: RandomizingKey) -> None:
        if key.key_id in self.keys:
            return
        self.keys[key.key_id] = key
        self._secrets[key.key_id] = digest(b"secret", self._master, key.key_id)

    def token(self, key_id: str, subset: int, holder: NodeId, tag: Hashable) -> bytes:
        return digest(b"share", self._secrets[key_id], subset, holder, tag)

    def signature(self, key_id: str, tag: Hashable) -> bytes:
        return digest(b"sig", self._secrets[key_id], tag)

    def valid_token(self, key_id: str, subset: int, holder: NodeId, tag: Hashable, token: bytes) -> bool:
        key = self.keys.get(key_id)
        if key is None or not 0 <= subset < len(key.holders):
            return False
        if holder not in key.holders[subset].members:
            return False
        return token == self.token(key_id, subset, holder, tag)

    def valid_signature(self, key_id: str, tag: Hashable, sig: bytes) -> bool:
        return key_id in self.keys and sig == self.signature(key_id, tag)

    def combine(self, key_id: str, subset: int, tag: Hashable, tokens: dict) -> bytes | None:
        """Threshold combination: t+1 valid tokens from distinct holders of one subset."""
        key = self.keys[key_id]
        s = key.holders[subset]
        good = {h for h, tok in tokens.items() if self.valid_token(key_id, subset, h, tag, tok)}
        if len(good) >= s.t + 1:
            return self.signature(key_id, tag)
        return None

    def held_pairs(self, node: NodeId) -> list[tuple[str, int]]:
        out = []
        for kid in sorted(self.keys):
            for x, s in enumerate(self.keys[kid].holders):
                if node in s.members:
                    out.append((kid, x))
        return out


@dataclass
class _Coin:
    space: str | None = None
    keys: tuple = ()
    sampled: bool = False
    output: int | None = None
    callbacks: list = field(default_factory=list)
    tokens: dict = field(default_factory=dict)  # (key, subset) -> {holder: token}
    sigs: dict = field(default_factory=dict)  # key -> signature
    echoed: set = field(default_factory=set)


class CrsNode:
    """Per-node CRS state machine covering every coin tag the node touches."""

    def __init__(self, ctx: NodeContext, oracle: KeyOracle, keys: list[str] | None = None) -> None:
        self.ctx = ctx
        self.oracle = oracle
        self.coins: dict[Hashable, _Coin] = {}
        # (activation epoch, key id); a coin waits on keys active in its epoch
        ids = sorted(oracle.keys) if keys is None else sorted(keys)
        self.active: list[tuple[int, str]] = [(-1, k) for k in ids]

    def add_key(self, key: RandomizingKey, activation: int) -> None:
        self.oracle.register(key)
        if all(k != key.key_id for _, k in self.active):
            self.active.append((activation, key.key_id))

    def keys_at(self, at) -> tuple:
        """Key scope of a coin: None for every active key, an epoch, or explicit key ids."""
        if isinstance(at, tuple):
            return tuple(sorted(at))
        return tuple(sorted(k for a, k in self.active if at is None or a <= at))

    def sample(self, tag: Hashable, space: str, callback: Callable[[int], None] | None = None,
               at=None) -> None:
        """Reveal this node's shares for ``tag``; ``callback`` fires once with the output."""
        if space not in SPACES:
            raise ConfigurationError(f"unknown sample space {space!r}")
        coin = self.coins.setdefault(tag, _Coin())
        if callback is not None:
            if coin.output is not None:
                callback(coin.output)
            else:
                coin.callbacks.append(callback)
        if coin.sampled:
            return
        keys = self.keys_at(at)
        if not keys:
            raise ConfigurationError("common random source sampled with no registered keys")
        coin.sampled, coin.space, coin.keys = True, space, keys
        self.ctx.log("crs_sample", tag=tag)
        for kid, x in self.oracle.held_pairs(self.ctx.node_id):
            if kid in keys:
                tok = self.oracle.token(kid, x, self.ctx.node_id, tag)
                self.ctx.broadcast(("crs", tag), "SHARE", (kid, x, tok))
        self._progress(tag, coin)

    def handle(self, msg: Message) -> None:
        tag = msg.tag[1]
        coin = self.coins.setdefault(tag, _Coin())
        if msg.label == "SHARE":
            try:
                kid, x, tok = msg.payload
            except (TypeError, ValueError):
                self.ctx.bump("crs_invalid")
                return
            if kid in coin.sigs:
                return
            if not self.oracle.valid_token(kid, x, msg.sender, tag, tok):
                self.ctx.bump("crs_invalid")
                return
            held = coin.tokens.setdefault((kid, x), {})
            if msg.sender in held:
                return
            held[msg.sender] = tok
            sig = self.oracle.combine(kid, x, tag, held)
            if sig is not None:
                self._learn(tag, coin, kid, sig)
        elif msg.label == "SIG":
            try:
                kid, sig = msg.payload
            except (TypeError, ValueError):
                self.ctx.bump("crs_invalid")
                return
            if kid in coin.sigs:
                return
            if not self.oracle.valid_signature(kid, tag, sig):
                self.ctx.bump("crs_invalid")
                return
            self._learn(tag, coin, kid, sig)
        self._progress(tag, coin)

    def _learn(self, tag: Hashable, coin: _Coin, kid: str, sig: bytes) -> None:
        coin.sigs[kid] = sig
        if kid not in coin.echoed:
            coin.echoed.add(kid)
            self.ctx.broadcast(("crs", tag), "SIG", (kid, sig))

    def _progress(self, tag: Hashable, coin: _Coin) -> None:
        if coin.output is not None or not coin.sampled:
            return
        if any(k not in coin.sigs for k in coin.keys):
            return
        coin.output = expand(mix([coin.sigs[k] for k in coin.keys]), coin.space)
        self.ctx.log("crs_output", tag=tag, value=coin.output)
        cbs, coin.callbacks = coin.callbacks, []
        for cb in cbs:
            cb(coin.output)

    def output(self, tag: Hashable) -> int | None:
        coin = self.coins.get(tag)
        return None if coin is None else coin.output


class AdversaryView:
    """Everything the adversary can see about coins: its own tokens and delivered traffic."""

    def __init__(self, oracle: KeyOracle, controlled: frozenset) -> None:
        self._oracle = oracle
        self.controlled = controlled
        self.tokens: dict = {}  # (tag, key, subset) -> {holder: token}
        self.sigs: dict = {}  # (tag, key) -> sig
        self.revealed: set = set()  # tags with an honest share visible

    def own_tokens(self, tag: Hashable) -> None:
        for node in sorted(self.controlled, key=str):
            for kid, x in self._oracle.held_pairs(node):
                self.tokens.setdefault((tag, kid, x), {})[node] = self._oracle.token(kid, x, node, tag)

    def observe(self, msg: Message) -> None:
        if msg.tag[0] != "crs":
            return
        tag = msg.tag[1]
        if msg.label == "SHARE" and len(msg.payload) == 3:
            kid, x, tok = msg.payload
            self.tokens.setdefault((tag, kid, x), {})[msg.sender] = tok
            if msg.sender not in self.controlled:
                self.revealed.add(tag)
        elif msg.label == "SIG" and len(msg.payload) == 2:
            self.sigs[(tag, msg.payload[0])] = msg.payload[1]
            if msg.sender not in self.controlled:
                self.revealed.add(tag)


def adversary_predict(view: AdversaryView, tag: Hashable, keys: list[str], space: str = BIT) -> int:
    """Best guess of a coin from adversary-visible state only.

    Each key signature is reconstructed when the view holds ``t + 1``
    tokens of one holder subset; otherwise the adversary substitutes a
    guess derived from what it knows, which is independent of the true value.
    """
    if tag in view.revealed:
        raise ProtocolViolation(f"prediction for {tag!r} requested after an honest reveal")
    view.own_tokens(tag)
    sigs = []
    for kid in sorted(keys):
        sig = view.sigs.get((tag, kid))
        if sig is None:
            key = view._oracle.keys[kid]
            for x in range(len(key.holders)):
                toks = view.tokens.get((tag, kid, x), {})
                sig = view._oracle.combine(kid, x, tag, toks)
                if sig is not None:
                    break
        if sig is None:
            known = sorted((h, t.hex()) for x in range(len(view._oracle.keys[kid].holders))
                           for h, t in view.tokens.get((tag, kid, x), {}).items())
            sig = digest(b"guess", kid, tag, known)
        sigs.append(sig)
    return expand(mix(sigs), space)
