"""Small scenario builders shared by the engine, trace and CLI tests."""

from __future__ import annotations

import copy

BASE = {
    "format": "vaultsim-scenario/1",
    "name": "test",
    "ticks": 40,
    "seed": 7,
    "tokens": [{"id": "FEET", "eth_reserve": "50"}, {"id": "POOP", "eth_reserve": "30"},
               {"id": "MOON", "eth_reserve": "20"}],
    "vaults": [],
}


def raw_scenario(vaults=None, **extra) -> dict:
    raw = copy.deepcopy(BASE)
    raw["vaults"] = vaults if vaults is not None else [
        {"id": "v1", "fund": "2", "sliders": {"TA": 5, "TS": 3}}]
    raw.update(copy.deepcopy(extra))
    return raw


def vault(vid: str, policy=None, fund="2", **kw) -> dict:
    v = {"id": vid, "fund": fund, **kw}
    if policy is not None:
        v["policy"] = policy
    return v


def record(i, vault_id="v1", tick=None, action="observe", *, side=None, token="FEET", status=None,
           amount_in="1", eth_before="10", sliders=(3, 3, 3, 3, 3), tags=("momentum",),
           strategy=None, ts=None, positions_after=None, token_value="0", **settle):
    """A synthetic trace record; trades default to settled."""
    from vaultsim.trace import TraceRecord
    tick = i if tick is None else tick
    parsed = {"action": action, "reason": list(tags)}
    if action in ("buy", "sell"):
        parsed.update(token=token, fraction=0.1)
    if strategy:
        parsed["strategy"] = strategy
    settlement = {"status": status or ("settled" if action in ("buy", "sell") else "not_applicable")}
    if settlement["status"] == "settled":
        settlement.update(side=action, token=token, amount_in=amount_in, amount_out="1", **settle)
    before = {"eth": eth_before, "positions": {}, "token_value": "0"}
    after = {"eth": eth_before, "positions": positions_after or {}, "token_value": token_value}
    verdict = None if action == "parse_error" else {"accepted": True, "code": "Accepted"}
    if action == "parse_error":
        parsed = {"action": "parse_error", "position": 0, "cause": "x"}
    return TraceRecord(i, tick, tick * 300 if ts is None else ts, vault_id, 1, "h" * 64, "s" * 64,
                       "default", "test", "", parsed, verdict, settlement, before, after,
                       tuple(sliders))
