import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from oracles import cascades_brute, two_sided_brute
from worlds import record
from vaultsim.analytics import (METRICS, InsufficientCohorts, Trade, UnknownMetric, build_report,
                                cold_start_buy_sell, deployment_fraction, detect_sell_cascades,
                                fee_salience_rate, gradient_from_values, plot_cascades,
                                plot_gradient, slider_gradient_report, trades_from_records,
                                two_sided_fraction)


def sells(n, gap, start=0.0, token="X", vaults=None):
    vaults = vaults or n
    return [Trade(start + i * gap, token, f"v{i % vaults:03d}", "sell") for i in range(n)]


def as_tuples(events):
    return [(e.token_id, e.start, e.end, e.vaults, e.sells, e.median_gap) for e in events]


# --- cold start -------------------------------------------------------------------

def test_cold_start_ratio():
    recs = ([record(1, action="buy"), record(2, action="buy"), record(3, action="buy"),
             record(4, action="sell")] + [record(i) for i in range(5, 31)])
    cs = cold_start_buy_sell(recs, "v1")
    assert (cs.buys, cs.sells, cs.ratio) == (3, 1, 3.0)


def test_cold_start_sentinels_and_window():
    assert cold_start_buy_sell([record(i) for i in range(1, 11)], "v1").label == "undefined"
    late = [record(i) for i in range(1, 31)] + [record(i, action="buy") for i in range(31, 41)]
    cs = cold_start_buy_sell(late, "v1")
    assert (cs.buys, cs.sells, cs.ratio) == (0, 0, None)
    only_buys = cold_start_buy_sell([record(1, action="buy")], "v1")
    assert only_buys.ratio is None and only_buys.label == "buys-with-zero-sells"
    # rejected or failed trades are not trades
    cs = cold_start_buy_sell([record(1, action="buy", status="failed")], "v1")
    assert cs.buys == 0


# --- gradients ----------------------------------------------------------------------

def test_gradient_verdicts():
    up = gradient_from_values("TA", {1: [0.03], 2: [0.06], 3: [0.1], 4: [0.13], 5: [0.17]})
    assert up.verdict == "strictly-monotone" and up.metric == "trade_rate"
    inverted = gradient_from_values("TA", {3: [0.107], 4: [0.129], 5: [0.083]})
    assert inverted.verdict == "inverted" and inverted.steps == ("up", "down")
    assert gradient_from_values("TS", {1: [0.5], 2: [0.5]}).verdict == "flat"
    assert gradient_from_values("TS", {1: [0.1], 2: [0.1], 3: [0.2]}).verdict == "mixed"
    with pytest.raises(InsufficientCohorts):
        gradient_from_values("TA", {3: [0.1, 0.2]})
    with pytest.raises(InsufficientCohorts):
        gradient_from_values("TA", {3: [0.1], 4: []})


def test_gradient_from_records():
    recs = []
    i = 0
    for level, trades in ((1, 1), (2, 3), (3, 5)):
        for n in range(20):
            i += 1
            recs.append(record(i, f"v{level}", tick=n, sliders=(level, 3, 3, 3, 3),
                               action="buy" if n < trades else "observe"))
    rep = slider_gradient_report(recs, "trading_activity")
    assert [(s.level, s.mean) for s in rep.levels] == [(1, 0.05), (2, 0.15), (3, 0.25)]
    assert rep.verdict == "strictly-monotone"
    csv = rep.table().to_csv()
    assert csv.splitlines()[0] == "metric,window,scope,key,value,samples"
    assert "verdict,strictly-monotone" in csv


def test_spend_and_hold_metrics():
    recs = [record(1, "a", action="buy", amount_in="2", eth_before="10", sliders=(3, 3, 1, 3, 3)),
            record(2, "b", action="buy", amount_in="9", eth_before="10", sliders=(3, 3, 5, 3, 3)),
            record(3, "a", action="sell", held_ticks=4, sliders=(3, 3, 1, 3, 3)),
            record(4, "a", action="sell", held_ticks=100, strategy="s1", sliders=(3, 3, 1, 3, 3))]
    ts = slider_gradient_report(recs, "TS")
    assert [(s.level, s.mean) for s in ts.levels] == [(1, 0.2), (5, 0.9)]
    with pytest.raises(InsufficientCohorts):
        # only vault a sold voluntarily
        slider_gradient_report(recs, "HS")
    from vaultsim.analytics import hold_ticks
    assert hold_ticks(recs) == 4


# --- deployment and fee salience ------------------------------------------------------

def test_deployment_fraction():
    recs = [record(1, tick=0), record(2, tick=5, token_value="10", eth_before="10"),
            record(3, tick=9, token_value="0")]
    assert deployment_fraction(recs, "v1", 0) == 0
    assert deployment_fraction(recs, "v1", 7) == Fraction(1, 2)
    assert deployment_fraction(recs, "v1", 100) == 0


def test_fee_salience():
    fee = [record(i, tags=("fee_cost",)) for i in range(1, 5)]
    other = [record(i, "w", tags=("momentum", "fee_cost")) for i in range(5, 9)]
    assert fee_salience_rate(fee) == 1.0
    assert fee_salience_rate(fee + other) == 0.5
    assert fee_salience_rate(fee + other, cohort=["w"]) == 0.0
    assert fee_salience_rate([record(1, action="buy")]) is None


# --- cascades --------------------------------------------------------------------------

def test_twelve_sellers_in_five_minutes():
    events = detect_sell_cascades(sells(12, 25.0))
    assert len(events) == 1 and events[0].vaults == 12 and events[0].sells == 12


def test_nine_sellers_is_below_threshold():
    assert detect_sell_cascades(sells(9, 60.0)) == []
    # many sells by only nine vaults is still below threshold
    assert detect_sell_cascades(sells(90, 5.0, vaults=9)) == []


def test_long_burst_is_one_event_with_its_median_gap():
    events = detect_sell_cascades(sells(438, 9.5, vaults=100))
    assert len(events) == 1
    e = events[0]
    assert (e.sells, e.vaults, e.median_gap) == (438, 100, 9.5)
    assert e.end - e.start == pytest.approx(437 * 9.5)


def test_window_is_half_open():
    # ten sellers spanning exactly the window do not qualify, just inside does
    assert detect_sell_cascades(sells(10, 600.0 / 9)) == []
    assert len(detect_sell_cascades(sells(10, 599.0 / 9))) == 1


def test_buys_never_cascade():
    buys = [Trade(i, "X", f"v{i}", "buy") for i in range(30)]
    assert detect_sell_cascades(buys) == []


def random_stream(rng, n, tokens=3, vaults=25, span=7200.0):
    out = [Trade(round(rng.uniform(0, span), 1), f"T{rng.randrange(tokens)}",
                 f"v{rng.randrange(vaults)}", rng.choice(("buy", "sell"))) for _ in range(n)]
    return sorted(out, key=lambda t: t.ts)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 400), st.integers(2, 12), st.sampled_from([60.0, 600.0]))
def test_cascades_match_brute_force(seed, n, k, window):
    trades = random_stream(random.Random(seed), n)
    got = as_tuples(detect_sell_cascades(trades, k, window))
    want = cascades_brute([(t.ts, t.token_id, t.vault_id) for t in trades if t.side == "sell"],
                          k, window)
    assert got == want


# --- two-sided windows ---------------------------------------------------------------------

def test_two_sided_examples():
    assert two_sided_fraction([]) is None
    assert two_sided_fraction([Trade(i * 10, "X", "a", "buy") for i in range(20)]) == 0
    mixed = [Trade(w * 300 + j, "X", "a", "buy" if j % 2 else "sell") for w in range(5) for j in range(4)]
    assert two_sided_fraction(mixed) == 1


def test_two_sided_eighty_percent_construction():
    # four windows: two mixed with four trades each, two one-sided singletons
    stream = ([Trade(10 + j, "X", "a", "buy" if j < 2 else "sell") for j in range(4)]
              + [Trade(310, "X", "a", "buy")]
              + [Trade(610 + j, "X", "a", "sell" if j else "buy") for j in range(4)]
              + [Trade(910, "X", "a", "sell")])
    assert two_sided_fraction(stream) == 0.8
    assert two_sided_brute([(t.ts, t.token_id, t.side) for t in stream], 300.0) == 0.8


def test_tiles_are_epoch_aligned_and_per_token():
    pair = [Trade(299, "X", "a", "buy"), Trade(300, "X", "b", "sell")]
    assert two_sided_fraction(pair) == 0
    assert two_sided_fraction(pair, rolling=True) == 1
    assert two_sided_fraction([Trade(5, "X", "a", "buy"), Trade(6, "Y", "a", "sell")]) == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 300), st.booleans())
def test_two_sided_matches_brute_force(seed, n, rolling):
    trades = random_stream(random.Random(seed), n, span=3000.0)
    got = two_sided_fraction(trades, 300.0, rolling=rolling)
    assert got == two_sided_brute([(t.ts, t.token_id, t.side) for t in trades], 300.0, rolling)


# --- reports and plots ---------------------------------------------------------------------

def test_reports():
    recs = [record(i, f"v{i % 12:02d}", tick=i // 12, action="sell", ts=i * 20.0, held_ticks=3)
            for i in range(1, 25)]
    csv = build_report(recs, "cascades").to_csv()
    assert "all,events,1,1" in csv
    assert "all,*,0," in build_report(recs, "two_sided").to_csv()
    for name in METRICS:
        if not name.startswith("gradient"):
            build_report(recs, name)
    with pytest.raises(UnknownMetric) as err:
        build_report(recs, "sharpe")
    assert "two_sided" in str(err.value)


def test_trades_from_records_keeps_settled_trades_only():
    recs = [record(1, action="buy", ts=30), record(2, action="sell", status="failed"),
            record(3, action="sell", ts=10), record(4)]
    assert trades_from_records(recs) == [Trade(10, "FEET", "v1", "sell"), Trade(30, "FEET", "v1", "buy")]


def test_plots_are_reproducible(tmp_path):
    rep = gradient_from_values("TA", {1: [0.03], 2: [0.06], 3: [0.1]})
    a = plot_gradient(rep, tmp_path / "a.png").read_bytes()
    b = plot_gradient(rep, tmp_path / "b.png").read_bytes()
    assert a == b and a[:4] == b"\x89PNG"
    trades = sells(40, 9.5, vaults=20)
    out = plot_cascades(trades, detect_sell_cascades(trades), tmp_path / "c.png")
    assert out.stat().st_size > 1000


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 300), st.integers(2, 8), st.booleans())
def test_scan_oracles_agree_with_quadratic_ones(seed, n, k, rolling):
    from oracles import cascades_scan, two_sided_scan
    trades = random_stream(random.Random(seed), n, tokens=2, vaults=12, span=2400.0)
    sells_ = [(t.ts, t.token_id, t.vault_id) for t in trades if t.side == "sell"]
    assert cascades_scan(sells_, k, 300.0) == cascades_brute(sells_, k, 300.0)
    rows = [(t.ts, t.token_id, t.side) for t in trades]
    assert two_sided_scan(rows, 300.0, rolling) == two_sided_brute(rows, 300.0, rolling)
