"""Tokens, constant-product pools, swap math and the market snapshot indexer.

All reserve and fee arithmetic is integer (18-decimal fixed point).  Fees are
always charged on the ETH leg: on the input for buys and on the output for
sells.  Each fee component is rounded up, the swap output is rounded down, so
rounding never takes value out of a pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Literal, Mapping

from .units import BPS, TICKS_PER_HOUR, UNIT, ceil_div

TOTAL_SUPPLY = 1_000_000_000 * UNIT
DEFAULT_PROTOCOL_FEE_BPS = 200
DEFAULT_LP_FEE_BPS = 30

Side = Literal["buy", "sell"]


class MarketError(Exception):
    code = "MarketError"


class ZeroAmount(MarketError):
    code = "ZeroAmount"


class DelistedToken(MarketError):
    code = "DelistedToken"


class EmptyPool(MarketError):
    code = "EmptyPool"


class StaleQuote(MarketError):
    code = "StaleQuote"


@dataclass
class TokenMeta:
    token_id: str
    symbol: str
    launched_at: int = 0
    total_supply: int = TOTAL_SUPPLY
    delisted: bool = False
    genesis: bool = True

    def __post_init__(self) -> None:
        if self.launched_at < 0:
            raise ValueError("launched_at must be >= 0")
        if self.total_supply != TOTAL_SUPPLY:
            raise ValueError("every token has a fixed 1,000,000,000 supply")

    def delist(self) -> None:
        self.delisted = True


@dataclass
class Pool:
    token_id: str
    eth_reserve: int
    token_reserve: int
    lp_fee_bps: int = DEFAULT_LP_FEE_BPS
    protocol_fee_bps: int = DEFAULT_PROTOCOL_FEE_BPS
    protocol_fee_accrued: int = 0
    delisted: bool = False
    # bumped on every state change; quotes carry it for staleness checks
    version: int = 0

    def __post_init__(self) -> None:
        if self.eth_reserve < 0 or self.token_reserve < 0:
            raise ValueError("reserves must be non-negative")
        if not (0 <= self.lp_fee_bps and 0 <= self.protocol_fee_bps
                and self.lp_fee_bps + self.protocol_fee_bps < BPS):
            raise ValueError("fee bps out of range")

    @property
    def total_fee_bps(self) -> int:
        return self.lp_fee_bps + self.protocol_fee_bps

    @property
    def k(self) -> int:
        return self.eth_reserve * self.token_reserve

    def spot_price(self) -> Fraction:
        if self.token_reserve == 0:
            raise EmptyPool(self.token_id)
        return Fraction(self.eth_reserve, self.token_reserve)


@dataclass(frozen=True)
class SwapQuote:
    token_id: str
    direction: Side
    amount_in: int
    amount_out: int
    protocol_fee: int
    lp_fee: int
    price_impact_bps: Fraction
    pool_version: int
    # reserves at quote time; spot is derived from these
    eth_reserve: int
    token_reserve: int

    @property
    def fee_eth(self) -> int:
        return self.protocol_fee + self.lp_fee

    @property
    def eth_leg(self) -> int:
        """ETH the user paid (buy) or received (sell)."""
        return self.amount_in if self.direction == "buy" else self.amount_out

    @property
    def token_leg(self) -> int:
        return self.amount_out if self.direction == "buy" else self.amount_in

    @property
    def execution_price(self) -> Fraction:
        return Fraction(self.eth_leg, self.token_leg)

    def min_output_at(self, slippage_bps: int) -> int:
        return self.amount_out * (BPS - slippage_bps) // BPS


@dataclass(frozen=True)
class SwapResult:
    quote: SwapQuote
    k_before: int
    k_after: int
    eth_reserve_after: int
    token_reserve_after: int

    @property
    def direction(self) -> Side:
        return self.quote.direction

    @property
    def amount_in(self) -> int:
        return self.quote.amount_in

    @property
    def amount_out(self) -> int:
        return self.quote.amount_out


def _check_pool(pool: Pool) -> None:
    if pool.delisted:
        raise DelistedToken(pool.token_id)
    if pool.eth_reserve == 0 or pool.token_reserve == 0:
        raise EmptyPool(pool.token_id)


def quote_buy(pool: Pool, eth_in: int, *, waive_protocol_fee: bool = False) -> SwapQuote:
    if eth_in <= 0:
        raise ZeroAmount("eth_in must be positive")
    _check_pool(pool)
    protocol_bps = 0 if waive_protocol_fee else pool.protocol_fee_bps
    protocol_fee = ceil_div(eth_in * protocol_bps, BPS)
    lp_fee = ceil_div(eth_in * pool.lp_fee_bps, BPS)
    effective_in = eth_in - protocol_fee - lp_fee
    if effective_in <= 0:
        raise ZeroAmount("input is consumed by fees")
    E, T = pool.eth_reserve, pool.token_reserve
    amount_out = T * effective_in // (E + effective_in)
    if amount_out <= 0:
        raise ZeroAmount("output rounds to zero")
    # execution / spot - 1, with execution = eth_in / amount_out
    impact = (Fraction(eth_in * T, amount_out * E) - 1) * BPS
    return SwapQuote(pool.token_id, "buy", eth_in, amount_out, protocol_fee, lp_fee,
                     impact, pool.version, E, T)


def quote_sell(pool: Pool, tokens_in: int) -> SwapQuote:
    if tokens_in <= 0:
        raise ZeroAmount("tokens_in must be positive")
    _check_pool(pool)
    E, T = pool.eth_reserve, pool.token_reserve
    gross = E * tokens_in // (T + tokens_in)
    protocol_fee = ceil_div(gross * pool.protocol_fee_bps, BPS)
    lp_fee = ceil_div(gross * pool.lp_fee_bps, BPS)
    amount_out = gross - protocol_fee - lp_fee
    if amount_out <= 0:
        raise ZeroAmount("output is consumed by fees")
    # 1 - execution / spot: the user-experienced shortfall versus spot
    impact = (1 - Fraction(amount_out * T, tokens_in * E)) * BPS
    return SwapQuote(pool.token_id, "sell", tokens_in, amount_out, protocol_fee, lp_fee,
                     impact, pool.version, E, T)


def quote(pool: Pool, direction: Side, amount_in: int) -> SwapQuote:
    return quote_buy(pool, amount_in) if direction == "buy" else quote_sell(pool, amount_in)


def execute_swap(pool: Pool, q: SwapQuote) -> SwapResult:
    """Apply a quote to the pool it was derived from.

    The LP fee stays in the reserves; the protocol fee moves to
    ``protocol_fee_accrued``.
    """
    if q.pool_version != pool.version or q.token_id != pool.token_id:
        raise StaleQuote(f"{pool.token_id}: quoted v{q.pool_version}, pool at v{pool.version}")
    _check_pool(pool)
    k_before = pool.k
    if q.direction == "buy":
        pool.eth_reserve += q.amount_in - q.protocol_fee
        pool.token_reserve -= q.amount_out
    else:
        pool.token_reserve += q.amount_in
        pool.eth_reserve -= q.amount_out + q.protocol_fee
    pool.protocol_fee_accrued += q.protocol_fee
    pool.version += 1
    return SwapResult(q, k_before, pool.k, pool.eth_reserve, pool.token_reserve)


def max_buy_within_impact(pool: Pool, max_impact_bps: int) -> int:
    """Largest ETH input whose fee-inclusive impact stays within the limit.

    With f = 1 - fee and m the limit, execution/spot = (E + f x) / (f E), so
    x <= E ((1 + m) f - 1) / f.  Integer rounding can push the exact impact a
    hair over the closed form, so the candidate is stepped down until the
    exact quote agrees.
    """
    if pool.eth_reserve == 0 or pool.token_reserve == 0 or pool.delisted:
        return 0
    f = Fraction(BPS - pool.total_fee_bps, BPS)
    m = Fraction(max_impact_bps, BPS)
    num = (1 + m) * f - 1
    if num <= 0:
        return 0
    x = int(pool.eth_reserve * num / f)
    return _step_down(x, lambda amt: quote_buy(pool, amt), max_impact_bps)


def max_sell_within_impact(pool: Pool, max_impact_bps: int) -> int:
    """Largest token input within the impact limit: t <= T (f / (1 - m) - 1)."""
    if pool.eth_reserve == 0 or pool.token_reserve == 0 or pool.delisted:
        return 0
    f = Fraction(BPS - pool.total_fee_bps, BPS)
    m = Fraction(max_impact_bps, BPS)
    if m >= 1:
        return pool.token_reserve * 10**6
    num = f / (1 - m) - 1
    if num <= 0:
        return 0
    t = int(pool.token_reserve * num)
    return _step_down(t, lambda amt: quote_sell(pool, amt), max_impact_bps)


def _step_down(x: int, quote_fn, limit_bps: int) -> int:
    step = max(1, x // 10**12)
    for _ in range(64):
        if x <= 0:
            return 0
        try:
            if quote_fn(x).price_impact_bps <= limit_bps:
                return x
        except ZeroAmount:
            return 0
        x -= step
        step *= 2
    return 0


# --- new-coin caps -----------------------------------------------------------

NEW_COIN_CAP_BASE = UNIT // 100          # 0.01 ETH
NEW_COIN_CAP_STEP = UNIT // 100          # +0.01 ETH per 5 minutes
NEW_COIN_UNCAPPED_MINUTES = 50


def new_coin_cap_for_age(age_minutes: int) -> int | None:
    """Per-buy cap in wei for a token of the given age; ``None`` = uncapped.

    The 50-minute boundary is inclusive: a 50-minute-old token is uncapped.
    """
    if age_minutes < 0:
        raise ValueError("negative age")
    if age_minutes >= NEW_COIN_UNCAPPED_MINUTES:
        return None
    return NEW_COIN_CAP_BASE + NEW_COIN_CAP_STEP * (age_minutes // 5)


def new_coin_buy_cap(launched_at: int, now: int) -> int | None:
    if now < launched_at:
        raise ValueError("token not launched yet")
    return new_coin_cap_for_age(5 * (now - launched_at))


# --- history and snapshots -----------------------------------------------------

WINDOWS = {"5m": 1, "1h": TICKS_PER_HOUR, "6h": 6 * TICKS_PER_HOUR, "24h": 24 * TICKS_PER_HOUR}
FLOW_WINDOWS = ("5m", "1h")


@dataclass(frozen=True)
class TradeEvent:
    tick: int
    token_id: str
    vault_id: str
    side: Side
    eth_amount: int
    token_amount: int


class MarketHistory:
    """Per-tick price marks and the trade log, ordered by tick."""

    def __init__(self) -> None:
        self.genesis_price: dict[str, Fraction] = {}
        # token -> {tick: spot at the start of that tick}
        self.marks: dict[str, dict[int, Fraction]] = {}
        self.trades_by_tick: dict[int, list[TradeEvent]] = {}
        self._last_tick = -1

    def record_launch(self, token_id: str, price: Fraction) -> None:
        self.genesis_price.setdefault(token_id, price)
        self.marks.setdefault(token_id, {})

    def mark(self, tick: int, pools: Mapping[str, Pool]) -> None:
        for tid, pool in pools.items():
            if pool.token_reserve:
                self.marks.setdefault(tid, {})[tick] = pool.spot_price()

    def record_trade(self, ev: TradeEvent) -> None:
        if ev.tick < self._last_tick:
            raise ValueError("trade log must be appended in tick order")
        self._last_tick = ev.tick
        self.trades_by_tick.setdefault(ev.tick, []).append(ev)

    def trades_between(self, start: int, end: int) -> Iterable[TradeEvent]:
        """Trades with start <= tick < end."""
        for t in range(max(start, 0), end):
            yield from self.trades_by_tick.get(t, ())


@dataclass(frozen=True)
class TokenStats:
    token_id: str
    symbol: str
    price: Fraction
    age: int
    launched_at: int
    genesis: bool
    pct_change: tuple[tuple[str, Fraction], ...]
    volume: tuple[tuple[str, int], ...]
    net_flow: tuple[tuple[str, int], ...]
    holders: int
    unique_traders_5m: int

    @property
    def market_cap(self) -> Fraction:
        return self.price * (TOTAL_SUPPLY // UNIT)

    def change(self, window: str) -> Fraction | None:
        return dict(self.pct_change).get(window)

    def volume_in(self, window: str) -> int | None:
        return dict(self.volume).get(window)

    def flow_in(self, window: str) -> int | None:
        return dict(self.net_flow).get(window)


@dataclass(frozen=True)
class MarketSnapshot:
    tick: int
    rows: tuple[TokenStats, ...]
    eth_usd: Fraction | None = None
    # per-snapshot memo for renderers; not part of equality
    cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def row(self, token_id: str) -> TokenStats | None:
        for r in self.rows:
            if r.token_id == token_id:
                return r
        return None

    @property
    def prices(self) -> dict[str, Fraction]:
        return {r.token_id: r.price for r in self.rows}


def snapshot(history: MarketHistory, tokens: Mapping[str, TokenMeta],
             pools: Mapping[str, Pool], balances: Mapping[str, Mapping[str, int]],
             now: int, eth_usd: Fraction | None = None) -> MarketSnapshot:
    """Index market state at the start of tick ``now``.

    ``balances`` maps vault_id -> {token_id: balance}.  Windowed aggregates
    cover ticks [now - w, now); windows without data are left out.
    """
    holders: dict[str, int] = {}
    for pos in balances.values():
        for tid, bal in pos.items():
            if bal > 0:
                holders[tid] = holders.get(tid, 0) + 1

    flow: dict[str, dict[str, list]] = {}
    for wname in FLOW_WINDOWS:
        for ev in history.trades_between(now - WINDOWS[wname], now):
            acc = flow.setdefault(ev.token_id, {}).setdefault(wname, [0, 0, set()])
            acc[0] += ev.eth_amount
            acc[1] += ev.eth_amount if ev.side == "buy" else -ev.eth_amount
            acc[2].add(ev.vault_id)

    rows = []
    for tid in sorted(tokens, key=lambda t: (tokens[t].launched_at, t)):
        meta = tokens[tid]
        pool = pools.get(tid)
        if meta.delisted or pool is None or meta.launched_at > now or pool.token_reserve == 0:
            continue
        price = pool.spot_price()
        marks = history.marks.get(tid, {})
        changes = []
        for wname, w in WINDOWS.items():
            start = now - w
            if start < meta.launched_at:
                continue
            ref = marks.get(start)
            if ref:
                changes.append((wname, price / ref - 1))
        genesis = history.genesis_price.get(tid)
        if genesis and now > meta.launched_at:
            changes.append(("all", price / genesis - 1))
        fl = flow.get(tid, {})
        vols = tuple((w, fl[w][0]) for w in FLOW_WINDOWS if w in fl)
        nets = tuple((w, fl[w][1]) for w in FLOW_WINDOWS if w in fl)
        traders = len(fl["5m"][2]) if "5m" in fl else 0
        rows.append(TokenStats(tid, meta.symbol, price, now - meta.launched_at, meta.launched_at,
                               meta.genesis, tuple(changes), vols, nets, holders.get(tid, 0), traders))
    return MarketSnapshot(now, tuple(rows), eth_usd)
