"""Scenario files: YAML documents with a versioned header and a published schema.

A scenario fixes everything a run needs apart from the seed: tokens and
their launch schedule, the vault roster with policies and scripted owner
actions, guard/engine/fee settings, template variant and reap schedule.
"""

from __future__ import annotations

import copy
import functools
import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema
import jsonschema.validators
import yaml

from .guard import GuardConfig, GuardConfigError
from .mandate import MandateError, Priority, SliderConfig, Strategy, validate_strategies
from .market import DEFAULT_LP_FEE_BPS, DEFAULT_PROTOCOL_FEE_BPS, TOTAL_SUPPLY
from .policies.registry import UnknownPolicy, make_policy
from .units import to_units

FORMAT = "vaultsim-scenario/1"


class ScenarioError(ValueError):
    code = "InvalidScenario"

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@functools.cache
def _schema_text() -> str:
    return resources.files("vaultsim.schema").joinpath("scenario.schema.json").read_text("utf-8")


def schema() -> dict:
    return json.loads(_schema_text())


@functools.cache
def _validator():
    cls = jsonschema.validators.validator_for(schema())
    return cls(schema())


@dataclass(frozen=True)
class TokenSpec:
    token_id: str
    symbol: str
    eth_reserve: int
    token_reserve: int
    launch_at: int


@dataclass(frozen=True)
class ActionSpec:
    at: int
    type: str
    amount: int | None = None
    sliders: SliderConfig | None = None
    strategies: tuple[Strategy, ...] | None = None
    issuer: str | None = None


@dataclass(frozen=True)
class VaultSpec:
    vault_id: str
    owner: str
    fund: int
    activate_at: int
    policy_kind: str
    policy_params: dict = field(hash=False)
    sliders: SliderConfig
    strategies: tuple[Strategy, ...]
    actions: tuple[ActionSpec, ...] = ()


@dataclass(frozen=True)
class Scenario:
    raw: dict = field(repr=False, hash=False, compare=False)
    name: str
    ticks: int
    seed: int
    tokens: tuple[TokenSpec, ...]
    vaults: tuple[VaultSpec, ...]
    guard: GuardConfig
    protocol_fee_bps: int
    lp_fee_bps: int
    settlement_mode: str
    failure_rate: float
    invocation_jitter: bool
    vault_order: str
    check_conservation: bool
    template: str
    memory_window: int
    reap_period: int | None
    reap_first_at: int | None
    eth_usd: Fraction | None

    @property
    def digest(self) -> str:
        return scenario_hash(self.raw)


def scenario_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _strategies(items, at: int, path: str) -> tuple[Strategy, ...]:
    out = tuple(Strategy(s["label"], s["text"], Priority(s.get("priority", "MEDIUM")),
                         s.get("expiry"), at) for s in items or ())
    try:
        validate_strategies(out)
    except MandateError as exc:
        raise ScenarioError(f"{exc.code}: {exc}", path) from None
    return out


def _sliders(m, path: str) -> SliderConfig:
    try:
        s = SliderConfig.from_mapping(m or {})
        s.validate()
    except MandateError as exc:
        raise ScenarioError(str(exc), path) from None
    return s


def _random_sliders(prefix: str, i: int) -> dict:
    h = hashlib.sha256(f"sliders:{prefix}:{i}".encode()).digest()
    return {k: 1 + h[j] % 5 for j, k in enumerate(("TA", "ARP", "TS", "HS", "DIV"))}


def _policy(p) -> tuple[str, dict]:
    if p is None:
        return "reference", {}
    if isinstance(p, str):
        return p, {}
    return p["kind"], dict(p.get("params", {}))


def _amount(x, path: str) -> int:
    try:
        return to_units(x)
    except (ValueError, ArithmeticError) as exc:
        raise ScenarioError(f"bad amount {x!r}: {exc}", path) from None


def expand_groups(raw: dict) -> list[dict]:
    """Roster with vault_groups flattened into plain vault entries."""
    vaults = [copy.deepcopy(v) for v in raw.get("vaults", [])]
    for g in raw.get("vault_groups", []):
        width = max(3, len(str(g["count"])))
        spread = g.get("activate_spread", 0)
        for i in range(g["count"]):
            sliders = _random_sliders(g["prefix"], i) if g.get("sliders") == "random" \
                else copy.deepcopy(g.get("sliders", {}))
            v = {"id": f"{g['prefix']}{i:0{width}d}", "fund": g["fund"],
                 "activate_at": g.get("activate_at", 0) + (i % (spread + 1) if spread else 0),
                 "sliders": sliders, "strategies": copy.deepcopy(g.get("strategies", []))}
            if "policy" in g:
                v["policy"] = copy.deepcopy(g["policy"])
            vaults.append(v)
    return vaults


def parse_scenario(raw: dict) -> Scenario:
    try:
        _validator().validate(raw)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path)
        raise ScenarioError(exc.message, where) from None

    tokens = []
    seen = set()
    for i, t in enumerate(raw["tokens"]):
        path = f"tokens/{i}"
        if t["id"] in seen:
            raise ScenarioError(f"duplicate token id {t['id']}", path)
        seen.add(t["id"])
        tr = _amount(t["token_reserve"], path) if "token_reserve" in t else TOTAL_SUPPLY
        er = _amount(t["eth_reserve"], path)
        if er <= 0 or tr <= 0:
            raise ScenarioError("pool reserves must be positive", path)
        tokens.append(TokenSpec(t["id"], t.get("symbol", t["id"]), er, tr, t.get("launch_at", 0)))
    if not any(t.launch_at == 0 for t in tokens):
        raise ScenarioError("at least one token must launch at tick 0", "tokens")

    vaults = []
    vids = set()
    for i, v in enumerate(expand_groups(raw)):
        path = f"vaults/{v['id']}"
        if v["id"] in vids:
            raise ScenarioError(f"duplicate vault id {v['id']}", path)
        vids.add(v["id"])
        kind, params = _policy(v.get("policy"))
        try:
            make_policy(kind, params)
        except UnknownPolicy as exc:
            raise ScenarioError(str(exc), path) from None
        at = v.get("activate_at", 0)
        actions = []
        for j, a in enumerate(v.get("actions", [])):
            ap = f"{path}/actions/{j}"
            actions.append(ActionSpec(
                a["at"], a["type"],
                _amount(a["amount"], ap) if "amount" in a else None,
                _sliders(a["sliders"], ap) if "sliders" in a else None,
                _strategies(a["strategies"], a["at"], ap) if "strategies" in a else None,
                a.get("issuer")))
            if a["type"] in ("fund", "withdraw") and "amount" not in a:
                raise ScenarioError(f"{a['type']} needs an amount", ap)
            if a["type"] == "update_sliders" and "sliders" not in a:
                raise ScenarioError("update_sliders needs sliders", ap)
            if a["type"] == "update_strategies" and "strategies" not in a:
                raise ScenarioError("update_strategies needs strategies", ap)
        vaults.append(VaultSpec(v["id"], v.get("owner", f"owner:{v['id']}"),
                                _amount(v["fund"], path), at, kind, params,
                                _sliders(v.get("sliders"), path),
                                _strategies(v.get("strategies"), at, path),
                                tuple(sorted(actions, key=lambda a: a.at))))

    g = raw.get("guard", {})
    try:
        guard = GuardConfig(max_trade_bps=g.get("max_trade_bps", 10_000),
                            slippage_bps=g.get("slippage_bps", 100),
                            max_price_impact_bps=g.get("max_price_impact_bps", 1_000),
                            max_positions=g.get("max_positions"))
    except GuardConfigError as exc:
        raise ScenarioError(str(exc), "guard") from None

    e = raw.get("engine", {})
    fees = raw.get("fees", {})
    reap = raw.get("reap")
    template = raw.get("template", "default")
    from .brief.template import TemplateError, load_template
    try:
        load_template(template)
    except TemplateError as exc:
        raise ScenarioError(str(exc), "template") from None
    eth_usd = raw.get("eth_usd")
    return Scenario(
        raw=raw, name=raw.get("name", "scenario"), ticks=raw["ticks"], seed=raw.get("seed", 0),
        tokens=tuple(tokens), vaults=tuple(vaults), guard=guard,
        protocol_fee_bps=fees.get("protocol_bps", DEFAULT_PROTOCOL_FEE_BPS),
        lp_fee_bps=fees.get("lp_bps", DEFAULT_LP_FEE_BPS),
        settlement_mode=e.get("settlement_mode", "immediate"),
        failure_rate=float(e.get("failure_rate", 0.0)),
        invocation_jitter=bool(e.get("invocation_jitter", False)),
        vault_order=e.get("vault_order", "id"),
        check_conservation=bool(e.get("check_conservation", False)),
        template=template, memory_window=raw.get("memory_window", 20),
        reap_period=reap["period"] if reap else None,
        reap_first_at=(reap.get("first_at", reap["period"]) if reap else None),
        eth_usd=Fraction(str(eth_usd)) if eth_usd is not None else None,
    )


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text("utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", str(p)) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"not valid YAML: {exc}", str(p)) from None
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a mapping", str(p))
    return parse_scenario(raw)


def dump_scenario(raw: dict) -> str:
    return yaml.safe_dump(raw, sort_keys=False, allow_unicode=True)


def with_overrides(raw: dict, *, sliders: dict | None = None, template: str | None = None,
                   ticks: int | None = None) -> dict:
    """Copy of a raw scenario with every vault's sliders (partially) replaced."""
    out = copy.deepcopy(raw)
    if ticks is not None:
        out["ticks"] = ticks
    if template is not None:
        out["template"] = template
    if sliders:
        # groups are expanded first so a random roster keeps its other sliders
        out["vaults"] = expand_groups(out)
        out.pop("vault_groups", None)
        for v in out["vaults"]:
            v["sliders"] = {**v.get("sliders", {}), **sliders}
    return out
