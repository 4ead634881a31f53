"""Slider-conditioned reference policy.

A transparent rule system standing in for the language model.  It reads
only the structured brief and follows the decision hierarchy:

1. a pending [HIGH] immediate action that is feasible;
2. a [HIGH] triggered action whose condition fired;
3. an active [HIGH] restriction or hold rule already complied with: observe;
4. slider-driven trading: trade with probability ``P_TRADE[TA]``, prefer a
   justified sell (stop, target, broken thesis), otherwise buy a candidate
   that passes the risk band, diversification cap, [HIGH] restrictions,
   same-token waits and (TA >= 4) the fresh-signal gate.

[MEDIUM] and [LOW] strategies are shown in the brief but not executed.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction

from ..brief.compiler import StructuredBrief
from ..units import UNIT, portion
from .directives import DirectiveKind, DirectiveStatus
from .toolcall import Buy, Observe, ReasonTag, Sell, ToolCall, format_tool_call
from .tracking import buy_forbidden, sell_forbidden

# probability of attempting a trade per invocation, by trading activity
P_TRADE = {1: 0.03, 2: 0.06, 3: 0.10, 4: 0.13, 5: 0.17}
# share of available ETH per buy, by trade size
SPEND = {1: 0.02, 2: 0.10, 3: 0.25, 4: 0.50, 5: 0.95}
# max concurrent positions, by diversification
MAX_POSITIONS = {1: 1, 2: 2, 3: 3, 4: 5, 5: 8}
# holding style: minimum ticks before a discretionary sell, stop and target bands
MIN_HOLD = {1: 3, 2: 6, 3: 12, 4: 36, 5: 72}
STOP_LOSS = {1: Fraction(-8, 100), 2: Fraction(-10, 100), 3: Fraction(-15, 100),
             4: Fraction(-20, 100), 5: Fraction(-30, 100)}
PROFIT_TARGET = {1: Fraction(8, 100), 2: Fraction(12, 100), 3: Fraction(20, 100),
                 4: Fraction(35, 100), 5: Fraction(60, 100)}
STALE_HOLD_FACTOR = 6
THESIS_BREAK_1H = Fraction(-15, 100)
# minimum token age in ticks, by asset risk preference (288 ticks = 24 h)
MIN_AGE = {1: 288, 2: 288, 3: 144, 4: 0, 5: 0}

# same-token waits, in ticks
WAIT_SELL_TO_BUY = 8
WAIT_BUY_TO_BUY = 4
WAIT_SELL_TO_SELL = 4

ETH_FLOOR = UNIT // 1000
FRESH_SIGNAL_WINDOW = 12
FRESH_SIGNAL_MOVE = Fraction(3, 100)
REAP_HOLD_HORIZON = 36
FEE_SALIENT_MOVE = Fraction(46, 1000)


def fraction_within(limit: int, base: int) -> float:
    """Largest float f <= limit/base with floor(f * base) <= limit."""
    if base <= 0:
        return 0.0
    f = min(1.0, limit / base)
    while f > 0 and portion(f, base) > limit:
        f = math.nextafter(f, 0.0)
    return f


def last_settled(sb: StructuredBrief) -> dict[tuple[str, str], int]:
    """(token, side) -> tick of the latest settled trade in memory."""
    out: dict[tuple[str, str], int] = {}
    for m in sb.memory:
        if m.outcome == "settled" and m.action in ("buy", "sell") and m.token_id:
            out[(m.token_id, m.action)] = max(m.tick, out.get((m.token_id, m.action), -1))
    return out


def cooling_down(sb: StructuredBrief, token_id: str, side: str,
                 last: dict[tuple[str, str], int] | None = None) -> bool:
    last = last_settled(sb) if last is None else last
    now = sb.clock.tick
    ls = last.get((token_id, "sell"))
    lb = last.get((token_id, "buy"))
    if side == "buy":
        return (ls is not None and now - ls < WAIT_SELL_TO_BUY) or \
               (lb is not None and now - lb < WAIT_BUY_TO_BUY)
    return ls is not None and now - ls < WAIT_SELL_TO_SELL


def buy_fraction(sb: StructuredBrief, token_id: str, want: float) -> float:
    """Clamp a desired spend fraction to every displayed execution limit."""
    eth = sb.portfolio.eth_balance
    c = sb.constraints
    f = min(want, c.max_trade_bps / 10_000)
    lim = c.limit(token_id)
    if lim is not None:
        f = min(f, fraction_within(lim[0], eth))
    cap = c.new_coin_cap(token_id)
    if cap is not None:
        f = min(f, fraction_within(cap, eth))
    return f


def sell_fraction(sb: StructuredBrief, token_id: str, want: float) -> float:
    pos = sb.portfolio.position(token_id)
    lim = sb.constraints.limit(token_id)
    if pos is None:
        return 0.0
    f = want
    if lim is not None:
        f = min(f, fraction_within(lim[1], pos.balance))
    return f


def _highs(sb: StructuredBrief):
    return sorted(sb.high_strategies(), key=lambda e: e.label)


def _tradable(sb: StructuredBrief) -> list[str]:
    return [tid for tid, _, _ in sb.constraints.limits]


class ReferencePolicy:
    name = "reference"

    def decide(self, sb: StructuredBrief, rendered, rng: random.Random) -> ToolCall:
        call = self._directive_step(sb)
        if call is not None:
            return call
        return self._slider_step(sb, rng)

    def respond(self, sb: StructuredBrief, rendered, rng: random.Random) -> str:
        return format_tool_call(self.decide(sb, rendered, rng))

    # -- [HIGH] hierarchy -----------------------------------------------------------

    def _directive_step(self, sb: StructuredBrief) -> ToolCall | None:
        highs = _highs(sb)
        for wanted_kind, wanted_status in ((DirectiveKind.IMMEDIATE, DirectiveStatus.PENDING),
                                           (DirectiveKind.TRIGGERED, DirectiveStatus.TRIGGERED)):
            for e in highs:
                if e.kind is wanted_kind and e.status is wanted_status:
                    call = self._execute(sb, e)
                    if call is not None:
                        return call
        for e in highs:
            if e.kind is DirectiveKind.RESTRICTION and e.status is DirectiveStatus.VIOLATED \
                    and e.directive.mode == "stay_flat" and sb.portfolio.positions:
                pos = max(sb.portfolio.positions, key=lambda p: (p.value, p.token_id))
                f = sell_fraction(sb, pos.token_id, 1.0)
                if f > 0:
                    return Sell(pos.token_id, f, e.label, (ReasonTag.STRATEGY_EXECUTION,),
                                f"HIGH {e.label}: restriction violated, exiting {pos.token_id}")
        for e in highs:
            if e.status is DirectiveStatus.ACTIVE_COMPLIANT:
                tag = ReasonTag.HOLD_RULE if e.kind is DirectiveKind.HOLD else ReasonTag.RESTRICTION_COMPLIANT
                return Observe((tag,), f"HIGH {e.label}: {e.kind.value} active_compliant")
        return None

    def _execute(self, sb: StructuredBrief, e) -> ToolCall | None:
        d = e.directive
        tags = (ReasonTag.STRATEGY_EXECUTION,)
        note = f"HIGH {e.label}: {d.kind.value} {e.status.value}, executing"
        if d.action == "sell":
            held = [p for p in sb.portfolio.positions if not d.tokens or p.token_id in d.tokens]
            held = [p for p in held if sb.constraints.limit(p.token_id) is not None]
            if not held:
                return None
            pos = max(held, key=lambda p: (p.value, p.token_id)) if not d.tokens else \
                next(p for t in d.tokens for p in held if p.token_id == t)
            f = sell_fraction(sb, pos.token_id, float(d.fraction or 1))
            if f <= 0 or portion(f, pos.balance) == 0:
                return None
            return Sell(pos.token_id, f, e.label, tags, note)
        if d.action == "buy":
            if sb.portfolio.eth_balance < ETH_FLOOR:
                return None
            tradable = _tradable(sb)
            targets = [t for t in d.tokens if t in tradable]
            if not targets:
                return None
            tid = targets[0]
            f = buy_fraction(sb, tid, float(d.fraction) if d.fraction else SPEND[sb.sliders.trade_size])
            if f <= 0 or portion(f, sb.portfolio.eth_balance) == 0:
                return None
            return Buy(tid, f, e.label, tags, note)
        return None

    # -- sliders ----------------------------------------------------------------------

    def _observe(self, sb: StructuredBrief, tag: ReasonTag | None = None, note: str = "") -> Observe:
        if tag is None:
            moves = [abs(r.change("1h")) for r in sb.market.rows if r.change("1h") is not None]
            tag = ReasonTag.FEE_COST if not moves or max(moves) < FEE_SALIENT_MOVE \
                else ReasonTag.MOMENTUM
            note = note or ("moves below the 2.3% round-trip fee" if tag is ReasonTag.FEE_COST
                            else "no entry with a fresh signal")
        return Observe((tag,), note)

    def _slider_step(self, sb: StructuredBrief, rng: random.Random) -> ToolCall:
        s = sb.sliders
        if rng.random() >= P_TRADE[s.trading_activity]:
            return self._observe(sb)
        last = last_settled(sb)
        sell, blocked_tag = self._pick_sell(sb, last)
        if sell is not None:
            return sell
        buy, buy_block = self._pick_buy(sb, rng, last)
        if buy is not None:
            return buy
        tag = blocked_tag or buy_block
        return self._observe(sb, tag, "waiting" if tag else "")

    def _pick_sell(self, sb: StructuredBrief, last) -> tuple[ToolCall | None, ReasonTag | None]:
        s = sb.sliders
        hs = s.holding_style
        highs = _highs(sb)
        blocked = None
        now = sb.clock.tick
        cd = sb.reap.countdown(now)
        for pos in sorted(sb.portfolio.positions, key=lambda p: p.token_id):
            tid = pos.token_id
            row = sb.market.row(tid)
            if row is None or sb.constraints.limit(tid) is None:
                continue
            pnl = pos.unrealized_pnl_pct
            ch = row.change("1h")
            reason = None
            if pnl <= STOP_LOSS[hs]:
                reason = ReasonTag.STOP_LOSS
            elif pos.time_held >= MIN_HOLD[hs]:
                if pnl >= PROFIT_TARGET[hs]:
                    reason = ReasonTag.PROFIT_TARGET
                elif (ch is not None and ch <= THESIS_BREAK_1H) or \
                        pos.time_held >= STALE_HOLD_FACTOR * MIN_HOLD[hs]:
                    reason = ReasonTag.THESIS_BROKEN
            if reason is None:
                continue
            if any(sell_forbidden(e.directive, tid) for e in highs):
                blocked = blocked or ReasonTag.HOLD_RULE
                continue
            if cooling_down(sb, tid, "sell", last):
                blocked = blocked or ReasonTag.COOLDOWN
                continue
            if cd is not None and cd <= REAP_HOLD_HORIZON and sb.reap.is_source(tid):
                blocked = ReasonTag.REAP_HOLD
                continue
            want = 0.5 if reason is ReasonTag.PROFIT_TARGET and hs >= 4 else 1.0
            f = sell_fraction(sb, tid, want)
            if f <= 0 or portion(f, pos.balance) == 0:
                continue
            return Sell(tid, f, None, (reason,), f"{reason.value}: {tid} unrealized "
                                                   f"{float(pnl) * 100:+.1f}%"), None
        return None, blocked

    def _pick_buy(self, sb: StructuredBrief, rng: random.Random, last) \
            -> tuple[ToolCall | None, ReasonTag | None]:
        s = sb.sliders
        eth = sb.portfolio.eth_balance
        if eth < ETH_FLOOR:
            return None, None
        highs = _highs(sb)
        held = {p.token_id for p in sb.portfolio.positions}
        full = len(held) >= MAX_POSITIONS[s.diversification]
        now = sb.clock.tick
        candidates = []
        blocked = None
        for tid in _tradable(sb):
            row = sb.market.row(tid)
            if row is None or row.age < MIN_AGE[s.asset_risk_preference]:
                continue
            if full and tid not in held:
                continue
            if any(buy_forbidden(e.directive, tid, row.genesis) for e in highs):
                continue
            if cooling_down(sb, tid, "buy", last):
                blocked = ReasonTag.COOLDOWN
                continue
            if s.trading_activity >= 4:
                lb = last.get((tid, "buy"))
                ch = row.change("1h")
                if lb is not None and now - lb < FRESH_SIGNAL_WINDOW and \
                        (ch is None or abs(ch) < FRESH_SIGNAL_MOVE):
                    blocked = blocked or ReasonTag.MOMENTUM
                    continue
            candidates.append(tid)
        if not candidates:
            return None, blocked
        tid = rng.choice(candidates)
        f = buy_fraction(sb, tid, SPEND[s.trade_size])
        if f <= 0 or portion(f, eth) == 0:
            return None, blocked
        row = sb.market.row(tid)
        ch = row.change("1h")
        note = f"{tid} 1h {float(ch) * 100:+.1f}%" if ch is not None else f"{tid} new listing"
        return Buy(tid, f, None, (ReasonTag.MOMENTUM,), note), None
