"""Tool calls and their one-line wire form.

Wire form: exactly one JSON object per response line, e.g.

    {"action": "buy", "token": "FEET", "fraction": 0.25, "strategy": "strategy1",
     "reason": ["momentum"], "note": "FEET 1h flow positive"}

``fraction`` is a share of available ETH for buys and of the position for
sells.  Range checks belong to the guard, not the parser; the parser only
rejects text that is not a single well-typed action.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Union


class ReasonTag(str, Enum):
    FEE_COST = "fee_cost"
    MOMENTUM = "momentum"
    STOP_LOSS = "stop_loss"
    PROFIT_TARGET = "profit_target"
    THESIS_BROKEN = "thesis_broken"
    STRATEGY_EXECUTION = "strategy_execution"
    COOLDOWN = "cooldown"
    RESTRICTION_COMPLIANT = "restriction_compliant"
    HOLD_RULE = "hold_rule"
    REAP_HOLD = "reap_hold"
    TIMEOUT = "timeout"
    # only probe policies emit these two
    CADENCE = "cadence"
    FABRICATED_RULE = "fabricated_rule"


PROBE_ONLY_TAGS = frozenset({ReasonTag.CADENCE, ReasonTag.FABRICATED_RULE})


@dataclass(frozen=True)
class Buy:
    token_id: str
    spend_fraction: float
    strategy_label: str | None = None
    reason_tags: tuple[ReasonTag, ...] = ()
    note: str = ""

    kind = "buy"

    @property
    def fraction(self) -> float:
        return self.spend_fraction


@dataclass(frozen=True)
class Sell:
    token_id: str
    sell_fraction: float
    strategy_label: str | None = None
    reason_tags: tuple[ReasonTag, ...] = ()
    note: str = ""

    kind = "sell"

    @property
    def fraction(self) -> float:
        return self.sell_fraction


@dataclass(frozen=True)
class Observe:
    reason_tags: tuple[ReasonTag, ...] = ()
    note: str = ""
    strategy_label: str | None = None

    kind = "observe"
    token_id = None


ToolCall = Union[Buy, Sell, Observe]


@dataclass(frozen=True)
class ParseError:
    position: int
    cause: str
    raw: str = field(default="", repr=False)

    kind = "parse_error"

    def __str__(self) -> str:
        return f"ParseError at {self.position}: {self.cause}"


def format_tool_call(call: ToolCall) -> str:
    d: dict = {"action": call.kind}
    if not isinstance(call, Observe):
        d["token"] = call.token_id
        d["fraction"] = call.fraction
    if call.strategy_label:
        d["strategy"] = call.strategy_label
    d["reason"] = [t.value for t in call.reason_tags]
    if call.note:
        d["note"] = call.note
    return json.dumps(d, ensure_ascii=False, separators=(",", ":"))


_FIELDS = {"action", "token", "fraction", "strategy", "reason", "note"}
_decoder = json.JSONDecoder()


def parse_tool_call(raw: str) -> ToolCall | ParseError:
    text = raw.strip("\r\n")
    if "\n" in text.strip():
        return ParseError(text.index("\n"), "multiple lines", raw)
    stripped = text.lstrip()
    offset = len(text) - len(stripped)
    if not stripped:
        return ParseError(0, "empty response", raw)
    try:
        obj, end = _decoder.raw_decode(stripped)
    except json.JSONDecodeError as exc:
        return ParseError(offset + exc.pos, f"invalid json: {exc.msg}", raw)
    rest = stripped[end:].strip()
    if rest:
        if rest.startswith("{"):
            return ParseError(offset + end, "multiple actions", raw)
        return ParseError(offset + end, "trailing text", raw)
    if not isinstance(obj, dict):
        return ParseError(offset, "action must be an object", raw)
    unknown = set(obj) - _FIELDS
    if unknown:
        return ParseError(offset, f"unknown field {sorted(unknown)[0]!r}", raw)

    action = obj.get("action")
    if action not in ("buy", "sell", "observe"):
        return ParseError(offset, "missing field 'action'" if action is None
                          else f"unknown action {action!r}", raw)
    tags_raw = obj.get("reason", [])
    if isinstance(tags_raw, str):
        tags_raw = [tags_raw]
    if not isinstance(tags_raw, list):
        return ParseError(offset, "reason must be a list of tags", raw)
    try:
        tags = tuple(ReasonTag(t) for t in tags_raw)
    except ValueError as exc:
        return ParseError(offset, f"unknown reason tag: {exc}", raw)
    note = obj.get("note", "")
    strategy = obj.get("strategy")
    if not isinstance(note, str) or (strategy is not None and not isinstance(strategy, str)):
        return ParseError(offset, "note/strategy must be strings", raw)

    if action == "observe":
        if "token" in obj or "fraction" in obj:
            return ParseError(offset, "observe takes no token or fraction", raw)
        return Observe(tags, note, strategy)
    token = obj.get("token")
    if not isinstance(token, str) or not token:
        return ParseError(offset, "missing field 'token'", raw)
    fraction = obj.get("fraction")
    if fraction is None:
        return ParseError(offset, "missing field 'fraction'", raw)
    if isinstance(fraction, bool) or not isinstance(fraction, (int, float)):
        return ParseError(offset, "fraction must be a number", raw)
    cls = Buy if action == "buy" else Sell
    return cls(token, float(fraction), strategy, tags, note)


def tool_call_to_json(call: ToolCall | ParseError | None) -> dict | None:
    if call is None:
        return None
    if isinstance(call, ParseError):
        return {"action": "parse_error", "position": call.position, "cause": call.cause}
    return json.loads(format_tool_call(call))


def tool_call_from_json(d: dict | None) -> ToolCall | ParseError | None:
    if d is None:
        return None
    if d.get("action") == "parse_error":
        return ParseError(d["position"], d["cause"])
    parsed = parse_tool_call(json.dumps(d, ensure_ascii=False))
    if isinstance(parsed, ParseError):
        raise ValueError(f"stored tool call does not parse: {parsed}")
    return parsed
