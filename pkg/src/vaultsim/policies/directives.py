"""Keyword grammar for strategy text.

A directive is one of: an immediate action ("sell 50% of FEET now"), a
triggered action ("if PnL reaches 20% sell POOPCOIN"), a restriction
("avoid genesis tokens"), or a hold rule ("never sell FEET").  Anything the
grammar cannot pin down is ``UNCLASSIFIED``; policies monitor and observe on
those instead of guessing.

Trigger conditions are limited to PnL %, price-change % and absolute-price
comparisons on a named token.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

GRAMMAR_VERSION = 1


class DirectiveKind(str, Enum):
    IMMEDIATE = "immediate_action"
    TRIGGERED = "triggered_action"
    RESTRICTION = "restriction"
    HOLD = "hold_rule"
    UNCLASSIFIED = "unclassified"


class DirectiveStatus(str, Enum):
    PENDING = "pending"
    TRIGGERED = "triggered"
    COMPLETED = "completed"
    BLOCKED = "blocked"
    ACTIVE_COMPLIANT = "active_compliant"
    VIOLATED = "violated"
    MONITORING = "monitoring"


@dataclass(frozen=True)
class Condition:
    metric: str          # "pnl" | "price_change" | "price"
    op: str              # ">=" | "<="
    value: Fraction      # percent as a fraction (0.2 == 20%) or a price in ETH

    def holds(self, observed: Fraction | None) -> bool:
        if observed is None:
            return False
        return observed >= self.value if self.op == ">=" else observed <= self.value


@dataclass(frozen=True)
class Directive:
    kind: DirectiveKind
    text: str
    action: str | None = None           # "buy" | "sell"
    tokens: tuple[str, ...] = ()
    fraction: Fraction | None = None
    condition: Condition | None = None
    mode: str | None = None             # restriction: "avoid" | "only" | "stay_flat"
    scope: str | None = None            # "tokens" | "genesis" | "launches" | "all"


_STOP = {"ETH", "WETH", "PNL", "HIGH", "LOW", "MEDIUM", "USD", "TA", "ARP", "TS", "HS",
         "DIV", "OK", "I", "A", "IF", "ALL", "NOW", "AND", "OR", "THE", "DO", "NOT", "ATH"}
_TOKEN_RE = re.compile(r"\b[A-Z][A-Z0-9]{1,15}\b")
_NUM = r"(\d+(?:\.\d+)?)"

_COND_KW = re.compile(r"\b(if|when|once|whenever)\b")
_ACTION_VERB = re.compile(r"\b(buy|sell|liquidate|exit|take profits?|dump|close)\b")
_NOW = re.compile(r"\b(now|immediately|right away|asap|at once)\b")
_HOLD = re.compile(r"\b(never sell|don'?t sell|do not sell|hold|diamond hands?)\b")
_RESTRICT = re.compile(
    r"\b(only|avoid|stay flat|stay out|no new|don'?t buy|do not buy|never buy|buy only|stop buying)\b")
_VAGUE = re.compile(r"\b(outperform|pick winners?|beat the market|make (me )?money|maximi[sz]e (profits?|returns?)|get rich)\b")

_PNL_UP = re.compile(rf"\b(?:pnl|profit|gain|gains|up)\b[^%\d-]{{0,24}}\+?{_NUM}\s*%")
_PNL_DOWN = re.compile(rf"\b(?:pnl|loss|losses|down)\b[^%\d]{{0,24}}(-?){_NUM}\s*%")
_PRICE_MOVE = re.compile(
    rf"\bprice\s+(drops?|falls?|dips?|declines?|dumps?|rises?|pumps?|gains?|increases?|jumps?)\s*(?:by\s+)?{_NUM}\s*%")
_PRICE_ABS = re.compile(r"\bprice\s+(?:is\s+|goes\s+|gets\s+)?(above|over|below|under)\s+(\d+(?:\.\d+)?(?:e-?\d+)?)")
_FRACTION = re.compile(rf"{_NUM}\s*%\s*(?:of\b)?")
_ALL = re.compile(r"\b(all|everything|entire|whole|full)\b")


def extract_tokens(text: str) -> tuple[str, ...]:
    seen: list[str] = []
    for m in _TOKEN_RE.finditer(text):
        sym = m.group(0)
        if sym not in _STOP and sym not in seen:
            seen.append(sym)
    return tuple(seen)


def _parse_condition(seg: str) -> Condition | None:
    m = _PRICE_MOVE.search(seg)
    if m:
        down = m.group(1).startswith(("drop", "fall", "dip", "decline", "dump"))
        pct = Fraction(m.group(2)) / 100
        return Condition("price_change", "<=" if down else ">=", -pct if down else pct)
    m = _PRICE_ABS.search(seg)
    if m:
        op = ">=" if m.group(1) in ("above", "over") else "<="
        return Condition("price", op, Fraction(m.group(2)))
    m = _PNL_DOWN.search(seg)
    if m and (m.group(1) == "-" or re.search(r"\b(loss|losses|down|drops?|falls?|below)\b", seg)):
        return Condition("pnl", "<=", -Fraction(m.group(2)) / 100)
    m = _PNL_UP.search(seg)
    if m:
        return Condition("pnl", ">=", Fraction(m.group(1)) / 100)
    return None


def _parse_fraction(seg: str) -> Fraction | None:
    if _ALL.search(seg):
        return Fraction(1)
    m = _FRACTION.search(seg)
    if m:
        f = Fraction(m.group(1)) / 100
        if 0 < f <= 1:
            return f
    return None


def _action_of(verb: str) -> str:
    return "buy" if verb == "buy" else "sell"


def classify_directive(text: str) -> Directive:
    """Classify one strategy string.  Total and deterministic."""
    low = text.lower()
    tokens = extract_tokens(text)

    cond_kw = _COND_KW.search(low)
    if cond_kw:
        verb = _ACTION_VERB.search(low)
        if verb is None:
            return Directive(DirectiveKind.UNCLASSIFIED, text, tokens=tokens)
        if cond_kw.start() < verb.start():
            cond_seg, act_seg = low[cond_kw.start():verb.start()], low[verb.start():]
            act_raw = text[verb.start():]
        else:
            act_seg, cond_seg = low[verb.start():cond_kw.start()], low[cond_kw.start():]
            act_raw = text[verb.start():cond_kw.start()]
        condition = _parse_condition(cond_seg)
        if condition is None:
            return Directive(DirectiveKind.UNCLASSIFIED, text, tokens=tokens)
        act_tokens = extract_tokens(act_raw) or tokens
        action = _action_of(verb.group(1))
        fraction = _parse_fraction(act_seg)
        if fraction is None and action == "sell":
            fraction = Fraction(1)
        return Directive(DirectiveKind.TRIGGERED, text, action, act_tokens, fraction, condition)

    if _HOLD.search(low):
        return Directive(DirectiveKind.HOLD, text, tokens=tokens, scope="tokens" if tokens else "all")

    m = _RESTRICT.search(low)
    if m:
        kw = m.group(1)
        if kw in ("stay flat", "stay out"):
            mode = "stay_flat"
        elif kw in ("only", "buy only"):
            mode = "only"
        else:
            mode = "avoid"
        if "genesis" in low:
            scope = "genesis"
        elif re.search(r"\b(new launch(es)?|new tokens?|new coins?|launches)\b", low):
            scope = "launches"
        elif tokens:
            scope = "tokens"
        else:
            scope = "all"
        return Directive(DirectiveKind.RESTRICTION, text, tokens=tokens, mode=mode, scope=scope)

    verb = _ACTION_VERB.search(low)
    if verb and (_NOW.search(low) or low.lstrip().startswith(verb.group(1))):
        action = _action_of(verb.group(1))
        fraction = _parse_fraction(low[verb.start():])
        if verb.group(1) in ("liquidate", "exit", "dump", "close") and fraction is None:
            fraction = Fraction(1)
        return Directive(DirectiveKind.IMMEDIATE, text, action, tokens, fraction)

    return Directive(DirectiveKind.UNCLASSIFIED, text, tokens=tokens)


def is_vague_performance_text(text: str) -> bool:
    """Performance wishes with no token, exit rule, or numeric bound."""
    low = text.lower()
    if not _VAGUE.search(low):
        return False
    has_token = bool(extract_tokens(text))
    has_exit = bool(re.search(r"\b(sell|exit|stop|take profit|if|when)\b", low))
    has_bound = bool(re.search(r"\d", low))
    return not (has_token or has_exit or has_bound)


def is_buy_only(d: Directive) -> bool:
    return (d.kind is DirectiveKind.RESTRICTION and d.mode == "only"
            and "buy" in d.text.lower()) or (d.kind is DirectiveKind.HOLD and "never sell" in d.text.lower())
