"""Policy construction by name and per-invocation random streams."""

from __future__ import annotations

import hashlib
import random
from typing import Protocol

from .adapter import ExternalAgent
from .probes import (CadenceTrader, FeeParalyzed, FloorReader, Overspender, RandomTrader,
                     RuleFabricator, SchemaBreaker)
from .reference import ReferencePolicy


class Policy(Protocol):
    name: str

    def respond(self, sb, rendered, rng: random.Random) -> str: ...


_FACTORIES = {
    "reference": lambda **kw: ReferencePolicy(),
    "cadence_trader": lambda k=6, fraction=0.1: CadenceTrader(k, fraction),
    "rule_fabricator": lambda: RuleFabricator(),
    "fee_paralyzed": lambda: FeeParalyzed(),
    "overspender": lambda fraction=1.0: Overspender(fraction),
    "schema_breaker": lambda: SchemaBreaker(),
    "floor_reader": lambda: FloorReader(),
    "random_trader": lambda trade_prob=0.9: RandomTrader(trade_prob),
    "external": lambda command, timeout=10.0: ExternalAgent(command, timeout),
}

POLICY_KINDS = tuple(_FACTORIES)


class UnknownPolicy(ValueError):
    code = "UnknownPolicy"


def make_policy(kind: str, params: dict | None = None) -> Policy:
    try:
        factory = _FACTORIES[kind]
    except KeyError:
        raise UnknownPolicy(f"unknown policy {kind!r}; known: {', '.join(POLICY_KINDS)}") from None
    try:
        return factory(**(params or {}))
    except TypeError as exc:
        raise UnknownPolicy(f"bad parameters for {kind}: {exc}") from None


def rng_for(seed: int, vault_id: str, tick: int, stream: str = "policy") -> random.Random:
    """Independent stream per (seed, vault, tick); stable across platforms."""
    digest = hashlib.sha256(f"{stream}:{seed}:{vault_id}:{tick}".encode()).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))
