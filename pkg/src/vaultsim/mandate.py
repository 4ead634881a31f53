"""Versioned user configuration: five sliders plus prioritized strategies."""

from __future__ import annotations

import bisect
import hashlib
import json
from dataclasses import dataclass
from enum import Enum

from .policies.directives import (DirectiveKind, classify_directive, is_buy_only,
                                  is_vague_performance_text)

MAX_STRATEGIES = 10
MAX_STRATEGY_CHARS = 2000

SLIDER_NAMES = ("trading_activity", "asset_risk_preference", "trade_size",
                "holding_style", "diversification")
SLIDER_ABBREV = {"TA": "trading_activity", "ARP": "asset_risk_preference", "TS": "trade_size",
                 "HS": "holding_style", "DIV": "diversification"}


class MandateError(Exception):
    code = "MandateError"


class SliderOutOfRange(MandateError):
    code = "SliderOutOfRange"


class TooManyStrategies(MandateError):
    code = "TooManyStrategies"


class StrategyTextTooLong(MandateError):
    code = "StrategyTextTooLong"


class EmptyStrategyText(MandateError):
    code = "EmptyStrategyText"


class DuplicateStrategyLabel(MandateError):
    code = "DuplicateStrategyLabel"


class NoConfigYet(MandateError):
    code = "NoConfigYet"


class Priority(str, Enum):
    HIGH = "HIGH"
    MEDIUM = "MEDIUM"
    LOW = "LOW"


@dataclass(frozen=True)
class SliderConfig:
    trading_activity: int = 3
    asset_risk_preference: int = 3
    trade_size: int = 3
    holding_style: int = 3
    diversification: int = 3

    @classmethod
    def from_mapping(cls, m: dict) -> "SliderConfig":
        kw = {}
        for key, value in m.items():
            name = SLIDER_ABBREV.get(key, key)
            if name not in SLIDER_NAMES:
                raise SliderOutOfRange(f"unknown slider {key!r}")
            kw[name] = value
        return cls(**kw)

    def get(self, name: str) -> int:
        return getattr(self, SLIDER_ABBREV.get(name, name))

    def replace(self, name: str, value: int) -> "SliderConfig":
        kw = self.as_dict()
        kw[SLIDER_ABBREV.get(name, name)] = value
        return SliderConfig(**kw)

    def as_dict(self) -> dict[str, int]:
        return {n: getattr(self, n) for n in SLIDER_NAMES}

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, n) for n in SLIDER_NAMES)

    def validate(self) -> None:
        for n in SLIDER_NAMES:
            v = getattr(self, n)
            if not isinstance(v, int) or isinstance(v, bool) or not 1 <= v <= 5:
                raise SliderOutOfRange(f"{n}={v!r} outside 1..5")


@dataclass(frozen=True)
class Strategy:
    label: str
    text: str
    priority: Priority = Priority.MEDIUM
    expiry: int | None = None
    created_at: int = 0

    def to_json(self) -> dict:
        return {"label": self.label, "text": self.text, "priority": self.priority.value,
                "expiry": self.expiry, "created_at": self.created_at}

    @classmethod
    def from_json(cls, d: dict) -> "Strategy":
        return cls(d["label"], d["text"], Priority(d.get("priority", "MEDIUM")),
                   d.get("expiry"), d.get("created_at", 0))


@dataclass(frozen=True)
class ConfigCommit:
    version: int
    committed_at: int
    sliders: SliderConfig
    strategies: tuple[Strategy, ...]

    def to_json(self) -> dict:
        return {"version": self.version, "committed_at": self.committed_at,
                "sliders": self.sliders.as_dict(),
                "strategies": [s.to_json() for s in self.strategies]}

    @property
    def content_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False).encode()
        return hashlib.sha256(blob).hexdigest()


def validate_strategies(strategies, max_strategies: int = MAX_STRATEGIES,
                        max_chars: int = MAX_STRATEGY_CHARS) -> None:
    if len(strategies) > max_strategies:
        raise TooManyStrategies(f"{len(strategies)} strategies, max {max_strategies}")
    labels = set()
    for s in strategies:
        if not s.text or not s.text.strip():
            raise EmptyStrategyText(s.label)
        if len(s.text) > max_chars:
            raise StrategyTextTooLong(f"{s.label}: {len(s.text)} chars, max {max_chars}")
        if s.label in labels:
            raise DuplicateStrategyLabel(s.label)
        labels.add(s.label)


class MandateLog:
    """Append-only commit log for one vault."""

    def __init__(self, max_strategies: int = MAX_STRATEGIES,
                 max_chars: int = MAX_STRATEGY_CHARS) -> None:
        self.max_strategies = max_strategies
        self.max_chars = max_chars
        self._commits: list[ConfigCommit] = []
        self._ticks: list[int] = []

    def __len__(self) -> int:
        return len(self._commits)

    def commit(self, sliders: SliderConfig, strategies, at: int) -> int:
        sliders.validate()
        strategies = tuple(strategies)
        validate_strategies(strategies, self.max_strategies, self.max_chars)
        if self._ticks and at < self._ticks[-1]:
            raise MandateError(f"commit at {at} precedes latest commit at {self._ticks[-1]}")
        version = self._commits[-1].version + 1 if self._commits else 1
        self._commits.append(ConfigCommit(version, at, sliders, strategies))
        self._ticks.append(at)
        return version

    def read_latest(self, at: int) -> ConfigCommit:
        """Greatest committed_at <= at; same-tick commits are visible."""
        i = bisect.bisect_right(self._ticks, at)
        if i == 0:
            raise NoConfigYet(f"no commit at or before tick {at}")
        return self._commits[i - 1]

    def latest(self) -> ConfigCommit | None:
        return self._commits[-1] if self._commits else None

    def version(self, v: int) -> ConfigCommit:
        return self._commits[v - 1]

    def commits(self) -> tuple[ConfigCommit, ...]:
        return tuple(self._commits)


def commit_config(log: MandateLog, sliders: SliderConfig, strategies, at: int) -> int:
    return log.commit(sliders, strategies, at)


def read_latest(log: MandateLog, at: int) -> ConfigCommit:
    return log.read_latest(at)


def active_strategies(commit: ConfigCommit, now: int) -> list[Strategy]:
    return [s for s in commit.strategies if s.expiry is None or s.expiry >= now]


@dataclass(frozen=True)
class Inconsistency:
    code: str
    label: str | None
    message: str


def lint_mandate(commit: ConfigCommit, funded_eth: int | None = None) -> list[Inconsistency]:
    """Flag mandates whose parts contradict each other.  Never blocks a commit."""
    out = []
    hs = commit.sliders.holding_style
    for s in commit.strategies:
        d = classify_directive(s.text)
        if d.kind is DirectiveKind.HOLD and hs <= 2:
            out.append(Inconsistency(
                "HoldVsHoldingStyle", s.label,
                f"{s.label} asks to hold but holding_style={hs} favours short holds"))
        if is_buy_only(d) and commit.sliders.trade_size == 5 and funded_eth == 0:
            out.append(Inconsistency(
                "BuyOnlyUnfunded", s.label,
                f"{s.label} only allows buying at trade_size=5 but the vault has no ETH"))
        if is_vague_performance_text(s.text):
            out.append(Inconsistency(
                "VagueMandate", s.label,
                f"{s.label} states a performance wish without a token, exit rule, or bound"))
    return out
