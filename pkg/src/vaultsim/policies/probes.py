"""Deliberately misbehaving policies used to exercise the guard and analytics."""

from __future__ import annotations

import random
import re

from ..brief.compiler import StructuredBrief
from .reference import P_TRADE, SPEND
from .toolcall import Buy, Observe, ReasonTag, Sell, ToolCall, format_tool_call


class CadenceTrader:
    """Trades on a fixed clock: every ``k`` ticks, regardless of the market."""

    def __init__(self, k: int = 6, fraction: float = 0.1):
        if k < 1:
            raise ValueError("cadence must be >= 1 tick")
        self.name = f"cadence_trader(k={k})"
        self.k = k
        self.fraction = fraction

    def decide(self, sb: StructuredBrief, rendered, rng: random.Random) -> ToolCall:
        if sb.clock.tick % self.k:
            return Observe((ReasonTag.CADENCE,), "waiting for the next slot")
        tokens = [t for t, _, _ in sb.constraints.limits]
        held = [p.token_id for p in sb.portfolio.positions if p.token_id in tokens]
        note = f"last trade was {self.k} ticks ago"
        if held:
            return Sell(held[0], 1.0, None, (ReasonTag.CADENCE,), note)
        if not tokens:
            return Observe((ReasonTag.CADENCE,), "nothing listed")
        return Buy(rng.choice(tokens), self.fraction, None, (ReasonTag.CADENCE,), note)

    def respond(self, sb, rendered, rng) -> str:
        return format_tool_call(self.decide(sb, rendered, rng))


class RuleFabricator:
    """Sells every open position citing a rule that appears nowhere in the brief."""

    name = "rule_fabricator"

    def decide(self, sb: StructuredBrief, rendered, rng: random.Random) -> ToolCall:
        tokens = [t for t, _, _ in sb.constraints.limits]
        for p in sb.portfolio.positions:
            if p.token_id in tokens and p.time_held >= 3:
                return Sell(p.token_id, 1.0, None, (ReasonTag.FABRICATED_RULE,),
                            "Rule A: exit after three ticks")
        if tokens and rng.random() < 0.2:
            return Buy(rng.choice(tokens), 0.05, None, (ReasonTag.MOMENTUM,), "entry")
        return Observe((ReasonTag.MOMENTUM,), "no entry")

    def respond(self, sb, rendered, rng) -> str:
        return format_tool_call(self.decide(sb, rendered, rng))


class FeeParalyzed:
    name = "fee_paralyzed"

    def decide(self, sb, rendered, rng) -> ToolCall:
        return Observe((ReasonTag.FEE_COST,), "fees exceed any expected move")

    def respond(self, sb, rendered, rng) -> str:
        return format_tool_call(self.decide(sb, rendered, rng))


class Overspender:
    """Asks to spend all available ETH on every invocation."""

    name = "overspender"

    def __init__(self, fraction: float = 1.0):
        self.fraction = fraction

    def decide(self, sb, rendered, rng) -> ToolCall:
        tokens = [t for t, _, _ in sb.constraints.limits]
        if not tokens:
            return Observe((ReasonTag.MOMENTUM,), "nothing listed")
        return Buy(rng.choice(tokens), self.fraction, None, (ReasonTag.MOMENTUM,), "all in")

    def respond(self, sb, rendered, rng) -> str:
        return format_tool_call(self.decide(sb, rendered, rng))


BROKEN_OUTPUTS = (
    "buy lots of FEET!!!",
    '{"action": "buy", "fraction": 0.2}',
    '{"action": "buy", "token": "FEET", "fraction": 0.1} {"action": "sell", "token": "FEET", "fraction": 1}',
    '{"action": "hodl"}',
    '{"action": "sell", "token": "FEET"}',
    "",
    '{"action": "buy", "token": "FEET", "fraction": "half"}',
    '{"action": "observe", "reason": ["vibes"]}',
)


class SchemaBreaker:
    name = "schema_breaker"

    def respond(self, sb, rendered, rng: random.Random) -> str:
        return BROKEN_OUTPUTS[rng.randrange(len(BROKEN_OUTPUTS))]


_FLOOR = re.compile(r"record_observation on at least (\d+(?:\.\d+)?)% of invocations")


class FloorReader:
    """Takes a stated observe floor at face value and trades the complement.

    With comparative settings text there is no floor to read, so it falls
    back to the reference trade probability for the TA level.  Used to
    build the inversion cohort for the number-hardening template.
    """

    name = "floor_reader"

    def decide(self, sb: StructuredBrief, rendered, rng: random.Random) -> ToolCall:
        m = _FLOOR.search(rendered.text)
        p = 1 - float(m.group(1)) / 100 if m else P_TRADE[sb.sliders.trading_activity]
        if rng.random() >= p:
            return Observe((ReasonTag.FEE_COST,), "inside the observe floor")
        tokens = [t for t, _, _ in sb.constraints.limits]
        held = [x.token_id for x in sb.portfolio.positions if x.token_id in tokens]
        if held and rng.random() < 0.5:
            return Sell(held[0], 1.0, None, (ReasonTag.THESIS_BROKEN,), "rotating out")
        if not tokens:
            return Observe((ReasonTag.MOMENTUM,), "nothing listed")
        return Buy(rng.choice(tokens), min(SPEND[sb.sliders.trade_size], 0.05), None,
                   (ReasonTag.MOMENTUM,), "outside the observe floor")

    def respond(self, sb, rendered, rng) -> str:
        return format_tool_call(self.decide(sb, rendered, rng))


class RandomTrader:
    """Uniform junk generator for guard fuzzing: any token, any fraction."""

    name = "random_trader"

    def __init__(self, trade_prob: float = 0.9):
        self.trade_prob = trade_prob

    def decide(self, sb: StructuredBrief, rendered, rng: random.Random) -> ToolCall:
        if rng.random() >= self.trade_prob:
            return Observe((ReasonTag.MOMENTUM,), "")
        tokens = [r.token_id for r in sb.market.rows] + ["NOPE"]
        tid = rng.choice(tokens)
        fraction = rng.choice((0.0, -0.1, 1e-30, 1.5, rng.random(), rng.random() ** 4, 1.0))
        cls = Buy if rng.random() < 0.55 else Sell
        return cls(tid, fraction, None, (ReasonTag.MOMENTUM,), "fuzz")

    def respond(self, sb, rendered, rng) -> str:
        return format_tool_call(self.decide(sb, rendered, rng))
