"""Per-vault lifecycle of [HIGH] directives.

Statuses are refreshed at the start of every invocation from holdings and
market state, then updated from what the invocation actually did:

* immediate: pending until a labelled trade settles (completed); blocked if
  the agent executed no [HIGH] directive while it was due, or the labelled
  trade was rejected or failed;
* triggered: monitoring until its condition holds, then triggered, then as
  for immediate;
* restriction: active_compliant unless a buy broke it (or, for stay-flat,
  a position is open), in which case violated;
* hold rule: active_compliant until a sell of a covered token settles.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from ..market import MarketSnapshot
from ..vault import PortfolioContext
from .directives import Condition, Directive, DirectiveKind, DirectiveStatus, classify_directive


def buy_forbidden(d: Directive, token_id: str, genesis: bool) -> bool:
    """Whether restriction ``d`` forbids buying ``token_id``.  Scope is taken literally."""
    if d.kind is not DirectiveKind.RESTRICTION:
        return False
    if d.mode == "stay_flat":
        return True
    if d.scope == "genesis":
        hit = genesis
    elif d.scope == "launches":
        hit = not genesis
    elif d.scope == "tokens":
        hit = token_id in d.tokens
    else:
        hit = True
    return hit if d.mode == "avoid" else not hit


def sell_forbidden(d: Directive, token_id: str) -> bool:
    if d.kind is not DirectiveKind.HOLD:
        return False
    return d.scope == "all" or token_id in d.tokens


def observe_metric(cond: Condition, token_id: str | None, portfolio: PortfolioContext,
                   market: MarketSnapshot, ref_price: Fraction | None,
                   vault_pnl: Fraction | None) -> Fraction | None:
    if cond.metric == "pnl":
        if token_id is None:
            return vault_pnl
        pos = portfolio.position(token_id)
        return pos.unrealized_pnl_pct if pos else None
    row = market.row(token_id) if token_id else None
    if row is None:
        return None
    if cond.metric == "price":
        return row.price
    if ref_price:
        return row.price / ref_price - 1
    return None


@dataclass
class _Entry:
    text: str
    directive: Directive
    status: DirectiveStatus
    ref_price: Fraction | None = None


class DirectiveTracker:
    def __init__(self) -> None:
        self._entries: dict[str, _Entry] = {}

    def refresh(self, highs, portfolio: PortfolioContext, market: MarketSnapshot,
                vault_pnl: Fraction | None = None) -> dict[str, DirectiveStatus]:
        """``highs``: active [HIGH] Strategy objects.  Returns label -> status."""
        live = {}
        for s in highs:
            e = self._entries.get(s.label)
            if e is None or e.text != s.text:
                d = classify_directive(s.text)
                ref = None
                if d.tokens and market.row(d.tokens[0]) is not None:
                    ref = market.row(d.tokens[0]).price
                e = _Entry(s.text, d, _initial(d), ref)
            live[s.label] = e
            self._update(e, portfolio, market, vault_pnl)
        self._entries = live
        return {k: e.status for k, e in live.items()}

    def _update(self, e: _Entry, portfolio, market, vault_pnl) -> None:
        d = e.directive
        if d.kind is DirectiveKind.TRIGGERED and e.status is DirectiveStatus.MONITORING:
            token = d.tokens[0] if d.tokens else None
            if d.condition.holds(observe_metric(d.condition, token, portfolio, market,
                                                e.ref_price, vault_pnl)):
                e.status = DirectiveStatus.TRIGGERED
        elif d.kind is DirectiveKind.IMMEDIATE and e.status is DirectiveStatus.PENDING:
            if d.action == "sell" and not d.tokens and not portfolio.positions:
                e.status = DirectiveStatus.COMPLETED
        elif d.kind is DirectiveKind.RESTRICTION and d.mode == "stay_flat":
            e.status = (DirectiveStatus.VIOLATED if portfolio.positions
                        else DirectiveStatus.ACTIVE_COMPLIANT)

    def due(self) -> list[str]:
        return [k for k, e in self._entries.items()
                if e.status in (DirectiveStatus.PENDING, DirectiveStatus.TRIGGERED)]

    def record(self, due: list[str], call, outcome: str, genesis: Mapping[str, bool]) -> None:
        """Fold one invocation's call and settlement outcome into statuses."""
        label = getattr(call, "strategy_label", None)
        kind = getattr(call, "kind", None)
        if label in self._entries and label in due:
            e = self._entries[label]
            if outcome == "settled":
                d = e.directive
                multi = d.kind is DirectiveKind.IMMEDIATE and d.action == "sell" and not d.tokens
                if not multi:
                    e.status = DirectiveStatus.COMPLETED
            elif kind in ("buy", "sell"):
                e.status = DirectiveStatus.BLOCKED
        elif due and not (label in due):
            for k in due:
                self._entries[k].status = DirectiveStatus.BLOCKED
        if outcome != "settled" or kind not in ("buy", "sell"):
            return
        for e in self._entries.values():
            d = e.directive
            if kind == "buy" and d.kind is DirectiveKind.RESTRICTION and \
                    buy_forbidden(d, call.token_id, genesis.get(call.token_id, False)):
                e.status = DirectiveStatus.VIOLATED
            if kind == "sell" and sell_forbidden(d, call.token_id):
                e.status = DirectiveStatus.VIOLATED


def _initial(d: Directive) -> DirectiveStatus:
    return {DirectiveKind.IMMEDIATE: DirectiveStatus.PENDING,
            DirectiveKind.RESTRICTION: DirectiveStatus.ACTIVE_COMPLIANT,
            DirectiveKind.HOLD: DirectiveStatus.ACTIVE_COMPLIANT}.get(d.kind, DirectiveStatus.MONITORING)
