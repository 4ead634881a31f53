import dataclasses
import itertools
import re

import pytest

from briefs import make_brief, market
from vaultsim.brief.compiler import MissingSectionPayload, brief_diff, compile_brief, render
from vaultsim.brief.template import SectionId, load_template, move_section
from vaultsim.guard import GuardConfig, trade_caps
from vaultsim.mandate import SliderConfig
from vaultsim.units import UNIT, to_units

CANDIDATE = "New launches are valid buying candidates"
TRACK_RECORD = "Favour tokens that have some trading history"
FRESH_GATE = "Fresh-signal gate"
ACTIVE_PATIENT = "Active and patient"


def test_high_risk_inserts_launch_candidacy():
    _, rb = make_brief(SliderConfig(asset_risk_preference=5))
    assert CANDIDATE in rb.text and TRACK_RECORD not in rb.text


def test_middle_risk_inserts_neither():
    _, rb = make_brief(SliderConfig(asset_risk_preference=3))
    assert CANDIDATE not in rb.text and TRACK_RECORD not in rb.text


def test_compile_is_deterministic():
    a = make_brief(SliderConfig(trade_size=4), strategies=[("s1", "hold FEET")])
    b = make_brief(SliderConfig(trade_size=4), strategies=[("s1", "hold FEET")])
    assert a[1].brief_hash == b[1].brief_hash and a[1].text == b[1].text
    assert a[0] == b[0] and a[0].structure_hash() == b[0].structure_hash()


def test_conditionals_over_the_full_slider_grid():
    sb, _ = make_brief()
    tmpl = load_template("default")
    checks = {CANDIDATE: lambda s: s[1] >= 4, TRACK_RECORD: lambda s: s[1] <= 2,
              FRESH_GATE: lambda s: s[0] >= 4, ACTIVE_PATIENT: lambda s: s[0] >= 4 and s[3] >= 4}
    for combo in itertools.product(range(1, 6), repeat=5):
        text = render(tmpl, dataclasses.replace(sb, sliders=SliderConfig(*combo))).text
        for needle, pred in checks.items():
            assert (needle in text) == pred(combo), (needle, combo)


def test_constraint_section_shows_enforced_values():
    cfg = GuardConfig(max_trade_bps=2500, slippage_bps=75, max_price_impact_bps=600, max_positions=4)
    sb, rb = make_brief(guard=cfg)
    tokens, pools, _ = market(400)
    caps = trade_caps(pools, cfg.with_allowlist(pools))
    text = rb.text
    assert "Max trade: 2500 bps" in text and "Slippage tolerance: 75 bps" in text
    assert "Max price impact: 600 bps" in text and "Max open positions: 4" in text
    shown = re.findall(r"- (\w+): max buy ([\d.]+) ETH, max sell ([\d.]+) tokens", text)
    assert len(shown) == 3
    for tid, buy, sell in shown:
        assert to_units(buy) == caps[tid].buy_max and to_units(sell) == caps[tid].sell_max
    cap = re.search(r"NEWT: new-coin cap ([\d.]+) ETH per buy \(age 10 min\)", text)
    assert to_units(cap.group(1)) == 3 * UNIT // 100


def test_moving_fee_section_changes_hash_not_structure():
    sb, rb = make_brief()
    late = move_section(load_template("default"), SectionId.OPERATING_RULES, 7)
    _, rb_late = make_brief(template=late)
    assert rb.brief_hash != rb_late.brief_hash
    d = brief_diff(rb, rb_late)
    assert d.structurally_equal and d.diff
    assert rb.text.index("Fees: each swap") < rb_late.text.index("Fees: each swap")


def test_diff_flags():
    _, a = make_brief(SliderConfig(trading_activity=2))
    _, b = make_brief(SliderConfig(trading_activity=3))
    assert not brief_diff(a, b).structurally_equal
    base = load_template("default")
    edited = dataclasses.replace(
        base, variant_id="edited", _static={},
        static_texts=tuple((s, t + "\nOne extra sentence." if s is SectionId.SYSTEM_RULES else t)
                           for s, t in base.static_texts))
    _, c = make_brief(template=edited)
    _, d = make_brief(template=base)
    flag = brief_diff(c, d)
    assert flag.structurally_equal and "One extra sentence." in flag.diff


def test_memory_window_and_wording():
    mem = [(t, "buy", "FEET", 0.1, None, "settled", ("momentum",)) for t in range(30)]
    sb, rb = make_brief(memory=mem, now=40)
    assert len(sb.memory) == 20 and sb.memory[0].tick == 10
    assert "- tick 29 (11 ago) buy FEET fraction 0.1 -> settled; tags momentum" in rb.text
    assert "context," in rb.text and "not precedent" in rb.text


def test_missing_payload_is_reported():
    with pytest.raises(MissingSectionPayload):
        compile_brief(load_template("default"), None, None, None, None, None, None, 10)


def test_number_hardened_states_floors():
    _, rb = make_brief(SliderConfig(trading_activity=5), template="number-hardened")
    assert re.search(r"Trading activity 5/5: record_observation on at least [\d.]+% of invocations",
                     rb.text)
