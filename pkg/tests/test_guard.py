import math

import pytest
from hypothesis import given, settings, strategies as st

from oracles import GUARD_ORDER, exact_quote, guard_failures
from vaultsim.guard import (CHECK_ORDER, Accepted, GuardConfig, GuardConfigError,
                            settlement_check, trade_caps, validate)
from vaultsim.market import Pool, TokenMeta, execute_swap, quote_buy
from vaultsim.policies.toolcall import Buy, Observe, Sell
from vaultsim.units import UNIT
from vaultsim.vault import Position, Vault


def setup(eth=10 * UNIT, launched_at=0, **cfg):
    pools = {"FEET": Pool("FEET", 100 * UNIT, 1_000_000_000 * UNIT)}
    tokens = {"FEET": TokenMeta("FEET", "FEET", launched_at=launched_at)}
    v = Vault("v1", "o", eth_balance=eth, net_funded=eth)
    return v, pools, tokens, GuardConfig(**cfg).with_allowlist(pools)


def test_check_order_constant():
    assert CHECK_ORDER == GUARD_ORDER


def test_config_bounds():
    with pytest.raises(GuardConfigError):
        GuardConfig(max_trade_bps=499)
    with pytest.raises(GuardConfigError):
        GuardConfig(slippage_bps=5001)
    GuardConfig(max_trade_bps=500, slippage_bps=10)


def test_rejection_examples():
    v, pools, tokens, cfg = setup(max_trade_bps=5000)
    assert validate(Buy("FEET", 0.8), v, pools, cfg, 100, tokens).code == "ExceedsMaxTrade"
    pools["FEET"].delisted = True
    assert validate(Buy("FEET", 0.1), v, pools, cfg.with_allowlist(()), 100, tokens).code == "UnknownToken"


def test_new_coin_cap_on_young_token():
    # 0.05 ETH is 0.5% of 10 ETH; the token is 3 minutes old, cap 0.01
    v, pools, tokens, cfg = setup(launched_at=99)
    verdict = validate(Buy("FEET", 0.005), v, pools, cfg, 99, tokens)
    assert verdict.code == "ExceedsNewCoinCap"
    assert "10000000000000000" in verdict.detail
    assert validate(Buy("FEET", 0.001), v, pools, cfg, 99, tokens).accepted


def test_multiply_invalid_call_reports_first_check():
    v, pools, tokens, cfg = setup(max_trade_bps=500, launched_at=10)
    v.paused = True
    assert validate(Buy("NOPE", -1.0), v, pools, cfg, 10, tokens).code == "VaultPaused"
    v.paused = False
    assert validate(Buy("NOPE", -1.0), v, pools, cfg, 10, tokens).code == "UnknownToken"
    assert validate(Buy("FEET", float("nan")), v, pools, cfg, 10, tokens).code == "ZeroAmount"
    # over max-trade, over balance, over the new-coin cap and over impact all at once
    assert validate(Buy("FEET", 1.5), v, pools, cfg, 10, tokens).code == "ExceedsMaxTrade"
    assert validate(Sell("FEET", 0.5), v, pools, cfg, 10, tokens).code == "ZeroAmount"


def test_observe_passes_unless_paused():
    v, pools, tokens, cfg = setup()
    assert validate(Observe(), v, pools, cfg, 0, tokens).accepted
    v.closed = v.paused = True
    assert validate(Observe(), v, pools, cfg, 0, tokens).code == "VaultPaused"


def test_accepted_records_min_output():
    v, pools, tokens, cfg = setup(slippage_bps=250)
    verdict = validate(Buy("FEET", 0.1), v, pools, cfg, 100, tokens)
    assert verdict.accepted and verdict.amount_in == UNIT
    assert verdict.min_output == verdict.quote.amount_out * 9750 // 10_000


def test_settlement_check_paths():
    v, pools, tokens, cfg = setup(slippage_bps=100)
    pool = pools["FEET"]
    verdict = validate(Buy("FEET", 0.1), v, pools, cfg, 100, tokens)
    assert settlement_check(verdict, pool).proceed
    # another trader buys first and moves the price more than 1%
    execute_swap(pool, quote_buy(pool, 5 * UNIT))
    decision = settlement_check(verdict, pool)
    assert not decision.proceed and decision.reason == "SlippageExceeded"
    assert not settlement_check(verdict, None).proceed
    assert settlement_check(Accepted(None, 0), None).proceed


def test_wide_slippage_tolerates_bounded_moves():
    # a 5000 bps tolerance survives any move a 10%-impact trade can make on this pool
    v, pools, tokens, cfg = setup(slippage_bps=5000)
    pool = pools["FEET"]
    verdict = validate(Buy("FEET", 0.1), v, pools, cfg, 100, tokens)
    for _ in range(3):
        execute_swap(pool, quote_buy(pool, 5 * UNIT))
    assert settlement_check(verdict, pool).proceed


def test_displayed_caps_are_enforced_caps():
    v, pools, tokens, cfg = setup(eth=10_000 * UNIT)
    caps = trade_caps(pools, cfg)["FEET"]
    frac_ok = caps.buy_max / v.eth_balance
    assert validate(Buy("FEET", frac_ok * 0.999), v, pools, cfg, 100, tokens).accepted
    assert validate(Buy("FEET", frac_ok * 1.01), v, pools, cfg, 100, tokens).code == "ExceedsPriceImpact"


def expected_code(call, v, pool, cfg, now, token_meta):
    side = {"Buy": "buy", "Sell": "sell", "Observe": "observe"}[type(call).__name__]
    tid = getattr(call, "token_id", None)
    fraction = getattr(call, "spend_fraction", getattr(call, "sell_fraction", 0.0))
    fails = guard_failures(
        side, tid, fraction, paused=v.paused or v.closed, eth=v.eth_balance,
        held=v.token_balance(tid) if tid else 0, positions=set(v.positions), allow=cfg.allowlist,
        pool=None if pool is None else (pool.eth_reserve, pool.token_reserve,
                                        pool.protocol_fee_bps, pool.lp_fee_bps),
        max_trade_bps=cfg.max_trade_bps, max_positions=cfg.max_positions,
        age_minutes=5 * (now - token_meta.launched_at) if token_meta else 0,
        max_impact_bps=cfg.max_price_impact_bps)
    return min(fails, key=GUARD_ORDER.index) if fails else None


fractions = st.one_of(st.sampled_from([0.0, -0.5, 1.0, 1.5, 1e-30, math.inf, math.nan]),
                      st.floats(0, 1, allow_nan=False), st.floats(0, 1e-3))


@settings(max_examples=400)
@given(st.sampled_from(["buy", "sell", "observe"]), st.sampled_from(["FEET", "NOPE"]), fractions,
       st.integers(0, 10**21), st.integers(0, 10**27), st.booleans(), st.sampled_from([None, 1, 2]),
       st.integers(500, 10_000), st.integers(1, 3000), st.integers(0, 20), st.integers(10**15, 10**22))
def test_guard_matches_independent_reevaluation(side, tid, fraction, eth, held, paused, max_pos,
                                                max_trade, max_impact, age, depth):
    pools = {"FEET": Pool("FEET", depth, depth * 10**7)}
    tokens = {"FEET": TokenMeta("FEET", "FEET", launched_at=100 - age)}
    v = Vault("v", "o", eth_balance=eth, paused=paused)
    if held:
        v.positions["FEET"] = Position(held, held // 10**7 + 1, 0, 0)
    v.positions["OTHER"] = Position(1, 1, 0, 0)
    cfg = GuardConfig(max_trade_bps=max_trade, max_price_impact_bps=max_impact,
                      max_positions=max_pos).with_allowlist(pools)
    call = {"buy": Buy(tid, fraction), "sell": Sell(tid, fraction), "observe": Observe()}[side]
    verdict = validate(call, v, pools, cfg, 100, tokens)
    want = expected_code(call, v, pools.get(tid), cfg, 100, tokens.get(tid))
    assert verdict.code == (want or "Accepted")
    if verdict.accepted and verdict.quote is not None:
        out, _ = exact_quote(side, depth, depth * 10**7, verdict.amount_in, 200, 30)
        assert verdict.quote.amount_out == out
        assert verdict.min_output == out * (10_000 - cfg.slippage_bps) // 10_000
