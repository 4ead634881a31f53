"""Build a compiled brief for one vault without running the engine."""

from __future__ import annotations

from vaultsim.brief.compiler import MemoryEntry, compile_brief, reap_context
from vaultsim.brief.template import load_template
from vaultsim.guard import GuardConfig, trade_caps
from vaultsim.mandate import MandateLog, Priority, SliderConfig, Strategy
from vaultsim.market import MarketHistory, Pool, TokenMeta, snapshot
from vaultsim.policies.tracking import DirectiveTracker
from vaultsim.units import UNIT
from vaultsim.vault import Position, Vault, portfolio_view


def market(now: int, young_age: int = 2):
    tokens = {"FEET": TokenMeta("FEET", "FEET"), "POOP": TokenMeta("POOP", "POOP"),
              "NEWT": TokenMeta("NEWT", "NEWT", launched_at=now - young_age, genesis=False)}
    pools = {"FEET": Pool("FEET", 60 * UNIT, 600_000_000 * UNIT),
             "POOP": Pool("POOP", 40 * UNIT, 800_000_000 * UNIT),
             "NEWT": Pool("NEWT", 5 * UNIT, 1_000_000_000 * UNIT)}
    hist = MarketHistory()
    for tid, p in pools.items():
        hist.record_launch(tid, p.spot_price())
    for t in range(max(0, now - 300), now + 1):
        hist.mark(t, {tid: p for tid, p in pools.items() if tokens[tid].launched_at <= t})
    return tokens, pools, hist


def make_brief(sliders=None, strategies=(), positions=None, memory=(), template="default",
               now=400, eth=10 * UNIT, guard=None, reap_next=576, young_age=2, market_state=None):
    """``positions``: token -> (balance, cost_basis, first_acquired_at)."""
    tokens, pools, hist = market_state or market(now, young_age)
    vault = Vault("v1", "owner", eth_balance=eth, net_funded=eth)
    for tid, (bal, cost, first) in (positions or {}).items():
        vault.positions[tid] = Position(bal, cost, first, first)
    log = MandateLog()
    items = [s if isinstance(s, Strategy) else Strategy(s[0], s[1], Priority.HIGH)
             for s in strategies]
    log.commit(sliders or SliderConfig(), items, 0)
    commit = log.read_latest(now)
    snap = snapshot(hist, tokens, pools, {"v1": vault.balances()} if vault.positions else {}, now)
    pctx = portfolio_view(vault, snap.prices, now)
    cfg = (guard or GuardConfig()).with_allowlist(pools)
    highs = [s for s in commit.strategies if s.priority is Priority.HIGH]
    status = DirectiveTracker().refresh(highs, pctx, snap)
    tmpl = load_template(template) if isinstance(template, str) else template
    mem = [m if isinstance(m, MemoryEntry) else MemoryEntry(*m) for m in memory]
    sb, rb = compile_brief(tmpl, commit, snap, pctx, cfg, reap_context(snap, reap_next), mem, now,
                           limits=trade_caps(pools, cfg), vault_id="v1", strategy_status=status)
    return sb, rb
