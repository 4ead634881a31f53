"""Periodic elimination of the lowest-market-cap token.

The eliminated pool's whole ETH reserve buys the leader through the leader's
pool (LP fee kept, protocol fee waived), and the acquired leader tokens are
split pro rata over vault-held balances of the eliminated token.  Each share
is floored; the remainder goes to the protocol account as dust.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .market import MarketError, Pool, TokenMeta, execute_swap, quote_buy
from .vault import Position, Vault


class InsufficientTokens(Exception):
    code = "InsufficientTokens"


@dataclass
class ReapSchedule:
    period: int
    next_at: int

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ValueError("reap period must be positive")

    def due(self, tick: int) -> bool:
        return tick >= self.next_at

    def advance(self) -> None:
        self.next_at += self.period


@dataclass
class ProtocolAccount:
    """Protocol-side balances that do not belong to any pool or vault."""
    eth: int = 0
    dust: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class ReapEvent:
    tick: int
    eliminated_token: str
    leader_token: str
    eth_moved: int
    leader_acquired: int
    compensation: tuple[tuple[str, int], ...]
    dust: int
    lp_fee: int = 0

    def to_json(self) -> dict:
        return {"kind": "reap", "tick": self.tick, "eliminated": self.eliminated_token,
                "leader": self.leader_token, "eth_moved": str(self.eth_moved),
                "leader_acquired": str(self.leader_acquired),
                "compensation": [[v, str(a)] for v, a in self.compensation],
                "dust": str(self.dust), "lp_fee": str(self.lp_fee)}

    @classmethod
    def from_json(cls, d: dict) -> "ReapEvent":
        return cls(d["tick"], d["eliminated"], d["leader"], int(d["eth_moved"]),
                   int(d["leader_acquired"]), tuple((v, int(a)) for v, a in d["compensation"]),
                   int(d["dust"]), int(d.get("lp_fee", "0")))


def _rank_key(meta: TokenMeta, cap: Fraction):
    return (cap, meta.launched_at, meta.token_id)


def select_reap_pair(caps: Mapping[str, Fraction], tokens: Mapping[str, TokenMeta]) -> tuple[str, str]:
    """(source, target): lowest and highest market cap among live tokens.

    Ties go to the earlier-launched token, then the smaller token id, on both
    ends.
    """
    live = [t for t in caps if not tokens[t].delisted]
    if len(live) < 2:
        raise InsufficientTokens(f"{len(live)} live token(s); the last one standing graduates")
    source = min(live, key=lambda t: _rank_key(tokens[t], caps[t]))
    target = min(live, key=lambda t: (-caps[t], tokens[t].launched_at, t))
    return source, target


def split_pro_rata(amount: int, holdings: Mapping[str, int]) -> tuple[list[tuple[str, int]], int]:
    """Floor each holder's share of ``amount``; return (shares, dust)."""
    total = sum(holdings.values())
    if total == 0 or amount == 0:
        return [], amount
    shares = [(v, amount * bal // total) for v, bal in sorted(holdings.items()) if bal > 0]
    return shares, amount - sum(a for _, a in shares)


def execute_reap(tokens: Mapping[str, TokenMeta], pools: dict[str, Pool],
                 vaults: Mapping[str, Vault], protocol: ProtocolAccount, tick: int,
                 pair: tuple[str, str]) -> ReapEvent:
    source, target = pair
    src_pool = pools[source]
    tgt_pool = pools[target]

    eth_moved = src_pool.eth_reserve
    acquired = 0
    lp_fee = 0
    if eth_moved > 0:
        try:
            q = quote_buy(tgt_pool, eth_moved, waive_protocol_fee=True)
        except MarketError:
            q = None
        if q is not None:
            src_pool.eth_reserve = 0
            src_pool.version += 1
            execute_swap(tgt_pool, q)
            acquired = q.amount_out
            lp_fee = q.lp_fee
            eth_moved = q.amount_in
        else:
            # too small to swap: the ETH is kept by the protocol
            protocol.eth += eth_moved
            src_pool.eth_reserve = 0
            eth_moved = 0

    holdings = {vid: v.token_balance(source) for vid, v in vaults.items()
                if v.token_balance(source) > 0}
    shares, dust = split_pro_rata(acquired, holdings)
    share_map = dict(shares)
    for vid in sorted(holdings):
        vault = vaults[vid]
        pos = vault.positions.pop(source)
        got = share_map.get(vid, 0)
        if got == 0:
            vault.realized_pnl -= pos.cost_basis
            continue
        # the eliminated position's cost basis carries over to the compensation
        lead = vault.positions.get(target)
        if lead is None:
            vault.positions[target] = Position(got, pos.cost_basis, tick, tick)
        else:
            lead.balance += got
            lead.cost_basis += pos.cost_basis
            lead.last_trade_at = tick
    if dust:
        protocol.dust[target] = protocol.dust.get(target, 0) + dust

    protocol.eth += src_pool.protocol_fee_accrued
    src_pool.protocol_fee_accrued = 0
    src_pool.delisted = True
    tokens[source].delist()
    del pools[source]
    return ReapEvent(tick, source, target, eth_moved, acquired, tuple(shares), dust, lp_fee)
