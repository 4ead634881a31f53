"""Vaults: owner/operator permission split and average-cost accounting.

Positions track an integer cost basis rather than a stored average price.
Buys add the fee-inclusive ETH spent; sells remove a pro-rata share of the
basis (floored), and the difference to proceeds is realized PnL.  This keeps
``eth + sum(cost) - realized == net funded`` exact in integers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Mapping, Union

from .market import Pool, SwapResult, ZeroAmount, execute_swap, quote_sell

if TYPE_CHECKING:
    from .mandate import MandateLog, SliderConfig, Strategy


class VaultError(Exception):
    code = "VaultError"


class NotOwner(VaultError):
    code = "NotOwner"


class VaultClosed(VaultError):
    code = "VaultClosed"


class InsufficientUnallocated(VaultError):
    code = "InsufficientUnallocated"


@dataclass
class Position:
    balance: int
    cost_basis: int
    first_acquired_at: int
    last_trade_at: int

    @property
    def avg_entry_price(self) -> Fraction:
        return Fraction(self.cost_basis, self.balance)


@dataclass
class Vault:
    vault_id: str
    owner_id: str
    operator_id: str = "agent"
    eth_balance: int = 0
    positions: dict[str, Position] = field(default_factory=dict)
    paused: bool = False
    closed: bool = False
    activated_at: int = 0
    net_funded: int = 0
    realized_pnl: int = 0
    fees_paid: int = 0

    @property
    def active(self) -> bool:
        return self.net_funded > 0 and not self.paused and not self.closed

    def balances(self) -> dict[str, int]:
        return {tid: p.balance for tid, p in self.positions.items()}

    def token_balance(self, token_id: str) -> int:
        pos = self.positions.get(token_id)
        return pos.balance if pos else 0

    def cost_total(self) -> int:
        return sum(p.cost_basis for p in self.positions.values())

    def mark_to_market(self, prices: Mapping[str, Fraction]) -> Fraction:
        return self.eth_balance + sum(
            (p.balance * prices[tid] for tid, p in self.positions.items()), Fraction(0))


# --- owner actions -------------------------------------------------------------

@dataclass(frozen=True)
class Fund:
    amount: int


@dataclass(frozen=True)
class WithdrawUnallocated:
    amount: int


@dataclass(frozen=True)
class UpdateSliders:
    sliders: "SliderConfig"


@dataclass(frozen=True)
class UpdateStrategies:
    strategies: tuple["Strategy", ...]


@dataclass(frozen=True)
class Pause:
    pass


@dataclass(frozen=True)
class Unpause:
    pass


@dataclass(frozen=True)
class Close:
    pass


@dataclass(frozen=True)
class EmergencyLiquidate:
    pass


@dataclass(frozen=True)
class SubmitSwap:
    """The operator's only capability; carries no payload here."""


OwnerAction = Union[Fund, WithdrawUnallocated, UpdateSliders, UpdateStrategies,
                    Pause, Unpause, Close, EmergencyLiquidate]
OWNER_ACTION_TYPES = (Fund, WithdrawUnallocated, UpdateSliders, UpdateStrategies,
                      Pause, Unpause, Close, EmergencyLiquidate)
OPERATOR_CAPABILITIES = (SubmitSwap,)


def authorize(vault: Vault, issuer: str, action) -> None:
    """Least privilege: the owner may do owner actions, the operator may only swap."""
    if isinstance(action, SubmitSwap):
        if issuer not in (vault.operator_id,):
            raise NotOwner(f"{issuer} is not the operator of {vault.vault_id}")
        return
    if issuer != vault.owner_id:
        raise NotOwner(f"{issuer} may not {type(action).__name__} on {vault.vault_id}")


def apply_owner_action(vault: Vault, action: OwnerAction, issuer: str, *,
                       pools: Mapping[str, Pool] | None = None,
                       mandate: "MandateLog | None" = None, tick: int = 0) -> list[SwapResult]:
    """Apply one owner action in place; returns swaps made by liquidation."""
    authorize(vault, issuer, action)
    if isinstance(action, Close):
        vault.closed = True
        vault.paused = True
        return []
    if vault.closed:
        raise VaultClosed(vault.vault_id)

    if isinstance(action, Fund):
        if action.amount <= 0:
            raise ValueError("fund amount must be positive")
        vault.eth_balance += action.amount
        vault.net_funded += action.amount
    elif isinstance(action, WithdrawUnallocated):
        if action.amount <= 0:
            raise ValueError("withdraw amount must be positive")
        if action.amount > vault.eth_balance:
            raise InsufficientUnallocated(
                f"withdraw {action.amount} > unallocated {vault.eth_balance}")
        vault.eth_balance -= action.amount
        vault.net_funded -= action.amount
    elif isinstance(action, UpdateSliders):
        if mandate is None:
            raise ValueError("slider update needs the mandate log")
        latest = mandate.latest()
        mandate.commit(action.sliders, latest.strategies if latest else (), tick)
    elif isinstance(action, UpdateStrategies):
        if mandate is None:
            raise ValueError("strategy update needs the mandate log")
        latest = mandate.latest()
        if latest is None:
            raise ValueError("no sliders committed yet")
        mandate.commit(latest.sliders, action.strategies, tick)
    elif isinstance(action, Pause):
        vault.paused = True
    elif isinstance(action, Unpause):
        vault.paused = False
    elif isinstance(action, EmergencyLiquidate):
        results = liquidate_all(vault, pools or {}, tick)
        vault.paused = True
        return results
    else:
        raise TypeError(f"unknown owner action {action!r}")
    return []


def liquidate_all(vault: Vault, pools: Mapping[str, Pool], tick: int) -> list[SwapResult]:
    results = []
    for tid in sorted(vault.positions):
        pos = vault.positions[tid]
        pool = pools[tid]
        try:
            q = quote_sell(pool, pos.balance)
        except ZeroAmount:
            # dust that cannot clear fees is donated to the pool
            pool.token_reserve += pos.balance
            pool.version += 1
            vault.realized_pnl -= pos.cost_basis
            del vault.positions[tid]
            continue
        res = execute_swap(pool, q)
        apply_settlement(vault, res, tick)
        results.append(res)
    return results


# --- settlement and views ------------------------------------------------------

def apply_settlement(vault: Vault, result: SwapResult, tick: int) -> int:
    """Book a settled swap.  Returns realized PnL (0 for buys)."""
    q = result.quote
    tid = q.token_id
    vault.fees_paid += q.fee_eth
    if q.direction == "buy":
        assert q.amount_in <= vault.eth_balance, "guard let through an unfunded buy"
        vault.eth_balance -= q.amount_in
        pos = vault.positions.get(tid)
        if pos is None:
            vault.positions[tid] = Position(q.amount_out, q.amount_in, tick, tick)
        else:
            pos.balance += q.amount_out
            pos.cost_basis += q.amount_in
            pos.last_trade_at = tick
        return 0
    pos = vault.positions.get(tid)
    assert pos is not None and q.amount_in <= pos.balance, "guard let through an oversell"
    removed = pos.cost_basis * q.amount_in // pos.balance
    realized = q.amount_out - removed
    pos.balance -= q.amount_in
    pos.cost_basis -= removed
    pos.last_trade_at = tick
    if pos.balance == 0:
        realized -= pos.cost_basis
        del vault.positions[tid]
    vault.eth_balance += q.amount_out
    vault.realized_pnl += realized
    return realized


@dataclass(frozen=True)
class PositionView:
    token_id: str
    balance: int
    avg_entry_price: Fraction
    spot: Fraction
    value: Fraction
    unrealized_pnl_pct: Fraction
    time_held: int
    first_acquired_at: int
    last_trade_at: int


@dataclass(frozen=True)
class PortfolioContext:
    eth_balance: int
    positions: tuple[PositionView, ...]
    token_value: Fraction
    deployment_fraction: Fraction

    def position(self, token_id: str) -> PositionView | None:
        for p in self.positions:
            if p.token_id == token_id:
                return p
        return None


def portfolio_view(vault: Vault, prices: Mapping[str, Fraction], now: int) -> PortfolioContext:
    rows = []
    token_value = Fraction(0)
    for tid in sorted(vault.positions):
        pos = vault.positions[tid]
        spot = prices[tid]
        avg = pos.avg_entry_price
        value = pos.balance * spot
        token_value += value
        rows.append(PositionView(tid, pos.balance, avg, spot, value, (spot - avg) / avg,
                                 now - pos.first_acquired_at, pos.first_acquired_at,
                                 pos.last_trade_at))
    total = token_value + vault.eth_balance
    deployment = token_value / total if total else Fraction(0)
    return PortfolioContext(vault.eth_balance, tuple(rows), token_value, deployment)


def accounting_gap(vault: Vault, prices: Mapping[str, Fraction]) -> Fraction:
    """(MTM - net funded) - (realized + unrealized); zero when books balance."""
    mtm = vault.mark_to_market(prices)
    unrealized = sum((p.balance * prices[t] - p.cost_basis for t, p in vault.positions.items()),
                     Fraction(0))
    return (mtm - vault.net_funded) - (vault.realized_pnl + unrealized)
