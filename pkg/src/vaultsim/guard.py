"""Hard-constraint validation between a parsed tool call and settlement.

Checks run in a fixed order and the first failure names the rejection:

1. vault not paused or closed           VaultPaused
2. token on the allowlist               UnknownToken      (observe stops here)
3. positive, finite, quotable amount    ZeroAmount
4. max-trade cap and balances           ExceedsMaxTrade / InsufficientBalance
   optional max concurrent positions    ExceedsMaxPositions
5. new-coin cap (buys)                  ExceedsNewCoinCap
6. price impact of the fresh quote      ExceedsPriceImpact
7. minimum output recorded for settlement
8. accepted

Cooldowns are deliberately absent: they are prompt guidance, not execution
constraints.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Union

from .market import (MarketError, Pool, SwapQuote, TokenMeta, max_buy_within_impact,
                     max_sell_within_impact, new_coin_buy_cap, quote_buy, quote_sell)
from .policies.toolcall import Buy, Observe, Sell, ToolCall
from .units import BPS, portion
from .vault import Vault

CHECK_ORDER = ("VaultPaused", "UnknownToken", "ZeroAmount", "ExceedsMaxTrade",
               "InsufficientBalance", "ExceedsMaxPositions", "ExceedsNewCoinCap",
               "ExceedsPriceImpact")


class GuardConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GuardConfig:
    max_trade_bps: int = 10_000
    slippage_bps: int = 100
    max_price_impact_bps: int = 1_000
    allowlist: frozenset[str] = field(default_factory=frozenset)
    max_positions: int | None = None

    def __post_init__(self) -> None:
        if not 500 <= self.max_trade_bps <= 10_000:
            raise GuardConfigError(f"max_trade_bps {self.max_trade_bps} outside [500, 10000]")
        if not 10 <= self.slippage_bps <= 5_000:
            raise GuardConfigError(f"slippage_bps {self.slippage_bps} outside [10, 5000]")
        if self.max_price_impact_bps <= 0:
            raise GuardConfigError("max_price_impact_bps must be positive")
        if self.max_positions is not None and self.max_positions < 1:
            raise GuardConfigError("max_positions must be >= 1")

    def with_allowlist(self, tokens) -> "GuardConfig":
        return replace(self, allowlist=frozenset(tokens))


@dataclass(frozen=True)
class Accepted:
    quote: SwapQuote | None
    min_output: int
    amount_in: int = 0

    accepted = True
    code = "Accepted"


@dataclass(frozen=True)
class Rejected:
    code: str
    detail: str

    accepted = False


Verdict = Union[Accepted, Rejected]


def trade_amount(call: Buy | Sell, vault: Vault) -> int:
    """Smallest-unit amount a fractional call asks for (floored)."""
    base = vault.eth_balance if isinstance(call, Buy) else vault.token_balance(call.token_id)
    return portion(call.fraction, base)


def validate(call: ToolCall, vault: Vault, pools: Mapping[str, Pool], cfg: GuardConfig,
             now: int, tokens: Mapping[str, TokenMeta]):
    if vault.paused or vault.closed:
        return Rejected("VaultPaused", f"{vault.vault_id} is paused or closed")
    if isinstance(call, Observe):
        return Accepted(None, 0)
    tid = call.token_id
    if tid not in cfg.allowlist or tid not in pools:
        return Rejected("UnknownToken", f"{tid!r} is not tradable")

    if not math.isfinite(call.fraction) or call.fraction <= 0:
        return Rejected("ZeroAmount", f"fraction {call.fraction!r} is not positive")
    amount = trade_amount(call, vault)
    if amount <= 0:
        return Rejected("ZeroAmount", f"fraction {call.fraction} of balance rounds to 0")
    # a trade whose output rounds to nothing is a zero-amount trade too
    pool = pools[tid]
    try:
        q = quote_buy(pool, amount) if isinstance(call, Buy) else quote_sell(pool, amount)
    except MarketError as exc:
        return Rejected("ZeroAmount", f"unquotable: {exc.code} {exc}")

    if isinstance(call, Buy):
        if amount * BPS > cfg.max_trade_bps * vault.eth_balance:
            return Rejected("ExceedsMaxTrade",
                            f"spend {amount} > {cfg.max_trade_bps} bps of {vault.eth_balance}")
        if amount > vault.eth_balance:
            return Rejected("InsufficientBalance", f"spend {amount} > eth {vault.eth_balance}")
        if (cfg.max_positions is not None and tid not in vault.positions
                and len(vault.positions) >= cfg.max_positions):
            return Rejected("ExceedsMaxPositions",
                            f"{len(vault.positions)} positions, max {cfg.max_positions}")
        cap = new_coin_buy_cap(tokens[tid].launched_at, now)
        if cap is not None and amount > cap:
            return Rejected("ExceedsNewCoinCap", f"spend {amount} > new-coin cap {cap}")
    else:
        held = vault.token_balance(tid)
        if amount > held:
            return Rejected("InsufficientBalance", f"sell {amount} > balance {held}")

    if q.price_impact_bps > cfg.max_price_impact_bps:
        return Rejected("ExceedsPriceImpact",
                        f"impact {float(q.price_impact_bps):.2f} bps > {cfg.max_price_impact_bps}")
    return Accepted(q, q.min_output_at(cfg.slippage_bps), amount)


@dataclass(frozen=True)
class SettlementDecision:
    proceed: bool
    quote: SwapQuote | None
    reason: str = ""


def settlement_check(verdict: Accepted, pool: Pool | None) -> SettlementDecision:
    """Re-quote at settlement time; abort if output fell below the recorded minimum."""
    q0 = verdict.quote
    if q0 is None:
        return SettlementDecision(True, None)
    if pool is None:
        return SettlementDecision(False, None, "SlippageExceeded")
    if pool.version == q0.pool_version:
        return SettlementDecision(True, q0)
    try:
        q = quote_buy(pool, q0.amount_in) if q0.direction == "buy" else quote_sell(pool, q0.amount_in)
    except MarketError:
        return SettlementDecision(False, None, "SlippageExceeded")
    if q.amount_out < verdict.min_output:
        return SettlementDecision(False, q, "SlippageExceeded")
    return SettlementDecision(True, q)


@dataclass(frozen=True)
class TradeCaps:
    buy_max: int      # wei of ETH
    sell_max: int     # token units


@functools.lru_cache(maxsize=4096)
def _caps_for(eth: int, tokens: int, proto_bps: int, lp_bps: int, delisted: bool,
              max_impact_bps: int) -> TradeCaps:
    p = Pool("", eth, tokens, lp_fee_bps=lp_bps, protocol_fee_bps=proto_bps, delisted=delisted)
    return TradeCaps(max_buy_within_impact(p, max_impact_bps),
                     max_sell_within_impact(p, max_impact_bps))


def trade_caps(pools: Mapping[str, Pool], cfg: GuardConfig) -> dict[str, TradeCaps]:
    """Per-token sizes that keep price impact within the configured limit."""
    # caps depend only on reserves and fees, and most pools sit still most ticks
    return {tid: _caps_for(p.eth_reserve, p.token_reserve, p.protocol_fee_bps, p.lp_fee_bps,
                           p.delisted, cfg.max_price_impact_bps)
            for tid, p in sorted(pools.items()) if tid in cfg.allowlist}
