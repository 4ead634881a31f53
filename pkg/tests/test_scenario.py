from pathlib import Path

import pytest

from worlds import raw_scenario, vault
from vaultsim.scenario import (ScenarioError, expand_groups, load_scenario, parse_scenario,
                               scenario_hash, with_overrides)
from vaultsim.units import UNIT

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def test_shipped_scenarios_load():
    for path in sorted(SCENARIOS.glob("*.yaml")):
        sc = load_scenario(path)
        assert sc.ticks > 0 and sc.vaults, path.name


def test_minimal_scenario_fields():
    sc = load_scenario(SCENARIOS / "minimal.yaml")
    assert (sc.ticks, sc.seed, len(sc.vaults)) == (10, 1, 1)
    v = sc.vaults[0]
    assert v.fund == UNIT and v.policy_kind == "reference"
    assert v.sliders.asset_risk_preference == 4
    assert sc.tokens[0].token_reserve == 10**9 * UNIT


@pytest.mark.parametrize("mutate,where", [
    (lambda r: r["vaults"][0].update(sliders={"TA": 6}), "vaults/0/sliders/TA"),
    (lambda r: r["vaults"][0].update(policy="psychic"), "vaults/v1"),
    (lambda r: r["vaults"].append(dict(r["vaults"][0])), "vaults/v1"),
    (lambda r: r["tokens"].append({"id": "FEET", "eth_reserve": "1"}), "tokens/3"),
    (lambda r: r["tokens"][0].update(eth_reserve="0"), "tokens/0"),
    (lambda r: r.update(guard={"max_trade_bps": 100}), "guard/max_trade_bps"),
    (lambda r: r.update(template="nope"), "template"),
    (lambda r: r.update(ticks=-1), "ticks"),
    (lambda r: r.update(format="other/9"), "format"),
    (lambda r: r["vaults"][0].update(actions=[{"at": 3, "type": "fund"}]), "vaults/v1/actions/0"),
])
def test_invalid_scenarios_name_the_problem(mutate, where):
    raw = raw_scenario()
    mutate(raw)
    with pytest.raises(ScenarioError) as err:
        parse_scenario(raw)
    assert err.value.path == where


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("ticks: [unclosed\n")
    with pytest.raises(ScenarioError):
        load_scenario(bad)
    bad.write_text("- just a list\n")
    with pytest.raises(ScenarioError):
        load_scenario(bad)


def test_groups_expand_deterministically():
    raw = raw_scenario([], vault_groups=[{"prefix": "r", "count": 12, "fund": "1",
                                          "activate_spread": 3, "sliders": "random"}])
    a, b = expand_groups(raw), expand_groups(raw)
    assert a == b and [v["id"] for v in a][:2] == ["r000", "r001"]
    assert [v["activate_at"] for v in a][:5] == [0, 1, 2, 3, 0]
    assert len({tuple(v["sliders"].values()) for v in a}) > 1


def test_overrides_keep_other_sliders_and_change_hash():
    raw = raw_scenario([vault("a", sliders={"TA": 2, "HS": 5})])
    out = with_overrides(raw, sliders={"TA": 4}, template="fee-late", ticks=9)
    assert out["vaults"][0]["sliders"] == {"TA": 4, "HS": 5}
    assert (out["template"], out["ticks"]) == ("fee-late", 9)
    assert raw["vaults"][0]["sliders"]["TA"] == 2
    assert scenario_hash(out) != scenario_hash(raw) == scenario_hash(raw_scenario([vault("a", sliders={"TA": 2, "HS": 5})]))
