"""Compile mandate, market, portfolio, limits, reap and memory into a brief.

``compile_brief`` returns two views of the same invocation context:

* ``StructuredBrief``: typed payloads, compared without regard to section
  order, and what the reference policy reads;
* ``RenderedBrief``: the ordered text plus its sha256 ``brief_hash``.
"""

from __future__ import annotations

import dataclasses
import difflib
import functools
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

from ..guard import GuardConfig, TradeCaps
from ..mandate import ConfigCommit, Priority, SliderConfig, active_strategies
from ..market import MarketSnapshot, TokenStats, new_coin_buy_cap, WINDOWS
from ..policies.directives import Directive, DirectiveKind, DirectiveStatus, classify_directive
from ..units import fmt_fraction, fmt_pct, fmt_price, fmt_units
from ..vault import PortfolioContext
from .template import BriefTemplate, SectionId

MEMORY_WINDOW = 20


class MissingSectionPayload(ValueError):
    code = "MissingSectionPayload"

    def __init__(self, section: SectionId, what: str):
        super().__init__(f"{section.value}: {what} missing")
        self.section = section


# --- structured payloads ---------------------------------------------------------

@dataclass(frozen=True)
class Clock:
    tick: int
    vault_id: str


@dataclass(frozen=True)
class StrategyEntry:
    label: str
    priority: Priority
    text: str
    expiry: int | None
    directive: Directive
    status: DirectiveStatus

    @property
    def kind(self) -> DirectiveKind:
        return self.directive.kind


@dataclass(frozen=True)
class NewCoinCap:
    token_id: str
    cap: int
    age_minutes: int


@dataclass(frozen=True)
class ExecutionConstraints:
    max_trade_bps: int
    slippage_bps: int
    max_price_impact_bps: int
    max_positions: int | None
    limits: tuple[tuple[str, int, int], ...]      # (token, max buy wei, max sell units)
    new_coin_caps: tuple[NewCoinCap, ...]

    def limit(self, token_id: str) -> tuple[int, int] | None:
        for tid, b, s in self.limits:
            if tid == token_id:
                return b, s
        return None

    def new_coin_cap(self, token_id: str) -> int | None:
        for c in self.new_coin_caps:
            if c.token_id == token_id:
                return c.cap
        return None


@dataclass(frozen=True)
class ReapRank:
    token_id: str
    market_cap: Fraction


@dataclass(frozen=True)
class ReapContext:
    next_at: int | None
    sources: tuple[ReapRank, ...] = ()     # lowest caps first
    targets: tuple[ReapRank, ...] = ()     # highest caps first

    def countdown(self, now: int) -> int | None:
        return None if self.next_at is None else self.next_at - now

    def is_source(self, token_id: str) -> bool:
        return any(r.token_id == token_id for r in self.sources[:1])


def reap_context(snapshot: MarketSnapshot, next_at: int | None, depth: int = 2) -> ReapContext:
    """Rank live tokens by market cap for the reap section."""
    if next_at is None or len(snapshot.rows) < 2:
        return ReapContext(next_at)
    low = sorted(snapshot.rows, key=lambda r: (r.market_cap, r.launched_at, r.token_id))
    high = sorted(snapshot.rows, key=lambda r: (-r.market_cap, r.launched_at, r.token_id))
    return ReapContext(next_at,
                       tuple(ReapRank(r.token_id, r.market_cap) for r in low[:depth]),
                       tuple(ReapRank(r.token_id, r.market_cap) for r in high[:depth]))


@dataclass(frozen=True)
class LaunchInfo:
    token_id: str
    symbol: str
    at: int


@dataclass(frozen=True)
class MemoryEntry:
    tick: int
    action: str                      # buy | sell | observe | parse_error
    token_id: str | None = None
    fraction: float | None = None
    strategy_label: str | None = None
    outcome: str = ""                # settled | rejected:<code> | failed:<reason> | observed
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class StructuredBrief:
    clock: Clock
    config_version: int
    sliders: SliderConfig
    strategies: tuple[StrategyEntry, ...]
    market: MarketSnapshot
    portfolio: PortfolioContext
    constraints: ExecutionConstraints
    reap: ReapContext
    launch: LaunchInfo | None
    memory: tuple[MemoryEntry, ...]

    def high_strategies(self) -> list[StrategyEntry]:
        return [s for s in self.strategies if s.priority is Priority.HIGH]

    def to_json(self) -> dict:
        return _plain(self)

    def structure_hash(self) -> str:
        # each payload is reduced to its own digest first, so shared frozen
        # payloads (constraints, memory entries, strategies) are hashed once
        parts = {}
        for name in _FIELDS_OF_BRIEF:
            value = getattr(self, name)
            if name == "market":
                parts[name] = _market_digest(value)
            elif isinstance(value, tuple):
                parts[name] = [_digest(x) for x in value]
            else:
                parts[name] = _digest(value)
        return hashlib.sha256(_canon(parts).encode()).hexdigest()


_FIELDS_OF_BRIEF = tuple(f.name for f in dataclasses.fields(StructuredBrief))


@dataclass(frozen=True)
class RenderedBrief:
    text: str
    brief_hash: str
    template_variant_id: str
    structure_hash: str
    sections: tuple[tuple[SectionId, str], ...] = field(repr=False, default=())


_FIELDS: dict[type, tuple[str, ...]] = {}


def _plain(obj):
    cls = type(obj)
    names = _FIELDS.get(cls)
    if names is None and dataclasses.is_dataclass(cls):
        names = _FIELDS[cls] = tuple(f.name for f in dataclasses.fields(cls) if f.compare)
    if names is not None:
        # frozen payloads never change, so their plain form is memoised on the instance
        memo = obj.__dict__.get("_plain_memo") if cls.__dataclass_params__.frozen else None
        if memo is None:
            memo = {n: _plain(getattr(obj, n)) for n in names}
            if cls.__dataclass_params__.frozen:
                object.__setattr__(obj, "_plain_memo", memo)
        return memo
    if obj is None or cls is str or cls is float or cls is bool:
        return obj
    if cls is int:
        return obj if -2**53 < obj < 2**53 else str(obj)
    if isinstance(obj, Enum):
        return obj.value
    if cls is Fraction:
        return str(obj)
    if cls is tuple or cls is list:
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (frozenset, set)):
        return sorted((_plain(x) for x in obj), key=_canon)
    if isinstance(obj, int):
        return _plain(int(obj))
    if isinstance(obj, (str, float)):
        return obj
    raise TypeError(f"cannot serialize {cls.__name__}")


def _canon(x) -> str:
    return json.dumps(x, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _digest(obj) -> str:
    memo = getattr(obj, "__dict__", None)
    if memo is not None:
        d = memo.get("_digest_memo")
        if d is not None:
            return d
    d = hashlib.sha256(_canon(_plain(obj)).encode()).hexdigest()
    if memo is not None and type(obj).__dataclass_params__.frozen:
        object.__setattr__(obj, "_digest_memo", d)
    return d


def _market_digest(snap: MarketSnapshot) -> str:
    d = snap.cache.get("digest")
    if d is None:
        d = hashlib.sha256(_canon(_plain(snap)).encode()).hexdigest()
        snap.cache["digest"] = d
    return d


# --- rendering helpers ---------------------------------------------------------

def fmt_ticks(n: int) -> str:
    """Duration in ticks as e.g. '2d 03h05m' (one tick is five minutes)."""
    minutes = n * 5
    d, rem = divmod(minutes, 24 * 60)
    h, m = divmod(rem, 60)
    if d:
        return f"{d}d {h:02d}h{m:02d}m"
    if h:
        return f"{h}h{m:02d}m"
    return f"{m}m"


def _eth(x: int | Fraction, places: int = 6) -> str:
    if isinstance(x, int):
        return fmt_units(x, places)
    return fmt_fraction(x / 10**18, places)


def _market_row(r: TokenStats) -> str:
    cells = [f"{r.token_id}", f"price {fmt_price(r.price)} ETH",
             f"mcap {fmt_fraction(r.market_cap, 3)} ETH", f"age {fmt_ticks(r.age)}"]
    for w in (*WINDOWS, "all"):
        c = r.change(w)
        cells.append(f"{w} {fmt_pct(c) if c is not None else 'n/a'}")
    for w in ("5m", "1h"):
        v = r.volume_in(w)
        f = r.flow_in(w)
        cells.append(f"vol{w} {_eth(v, 4) if v is not None else '0'} ETH")
        cells.append(f"flow{w} {('+' if f and f > 0 else '') + _eth(f, 4) if f is not None else '0'} ETH")
    cells.append(f"holders {r.holders}")
    cells.append(f"traders5m {r.unique_traders_5m}")
    if r.genesis:
        cells.append("genesis")
    return "- " + " | ".join(cells)


def _market_text(snap: MarketSnapshot) -> str:
    text = snap.cache.get("text")
    if text is None:
        lines = [_market_row(r) for r in snap.rows] or ["(no live tokens)"]
        if snap.eth_usd is not None:
            lines.append(f"ETH/USD {fmt_fraction(snap.eth_usd, 2)}")
        text = "\n".join(lines)
        snap.cache["text"] = text
    return text


_COMPARATIVE = {
    "trading_activity": ("Trading activity", {
        1: "very low; recording an observation is the usual outcome",
        2: "low; trade only on clear setups",
        3: "moderate",
        4: "high; check for entries every invocation",
        5: "very high; act whenever a genuine setup shows up"}),
    "asset_risk_preference": ("Asset risk preference", {
        1: "conservative; tokens older than a day only",
        2: "cautious; mostly tokens with a day of history",
        3: "balanced; tokens at least half a day old",
        4: "adventurous",
        5: "very adventurous"}),
    "trade_size": ("Trade size", {
        1: "very small buys", 2: "small buys", 3: "medium buys",
        4: "large buys", 5: "very large buys, close to the whole ETH balance"}),
    "holding_style": ("Holding style", {
        1: "short holds; quick exits are fine", 2: "fairly short holds",
        3: "medium holds", 4: "patient holds", 5: "long holds; exit on stop or broken thesis"}),
    "diversification": ("Diversification", {
        1: "one position at a time", 2: "up to two positions", 3: "around three positions",
        4: "around five positions", 5: "a broad book of up to eight positions"}),
}


def _settings_lines(t: BriefTemplate, s: SliderConfig) -> list[str]:
    lines = []
    for name, (title, words) in _COMPARATIVE.items():
        v = getattr(s, name)
        if name == "trading_activity" and t.settings_style == "floors":
            floor = t.observe_floors[v - 1]
            lines.append(f"- {title} {v}/5: record_observation on at least "
                         f"{fmt_fraction(floor, 1)}% of invocations")
        else:
            lines.append(f"- {title} {v}/5: {words[v]}")
    return lines


def _strategy_line(e: StrategyEntry) -> str:
    exp = f" (expires tick {e.expiry})" if e.expiry is not None else ""
    return f"- [{e.priority.value}] {e.label}{exp}: {e.text}"


def _portfolio_lines(p: PortfolioContext) -> list[str]:
    lines = [f"ETH available: {fmt_units(p.eth_balance)}",
             f"Token value: {_eth(p.token_value)} ETH; deployed {fmt_pct(p.deployment_fraction).lstrip('+')}"]
    if not p.positions:
        lines.append("No open positions.")
    for v in p.positions:
        lines.append(f"- {v.token_id}: {fmt_units(v.balance, 2)} tokens, avg entry "
                     f"{fmt_price(v.avg_entry_price)} ETH, spot {fmt_price(v.spot)} ETH, "
                     f"unrealized {fmt_pct(v.unrealized_pnl_pct)}, held {fmt_ticks(v.time_held)}, "
                     f"last trade tick {v.last_trade_at}")
    return lines


def _constraint_lines(c: ExecutionConstraints) -> list[str]:
    memo = c.__dict__.get("_lines_memo")
    if memo is None:
        memo = _constraint_text(c)
        object.__setattr__(c, "_lines_memo", memo)
    return list(memo)


def _constraint_text(c: ExecutionConstraints) -> list[str]:
    lines = [f"- Max trade: {c.max_trade_bps} bps of available ETH per buy",
             f"- Slippage tolerance: {c.slippage_bps} bps",
             f"- Max price impact: {c.max_price_impact_bps} bps (fees included)"]
    if c.max_positions is not None:
        lines.append(f"- Max open positions: {c.max_positions}")
    for tid, b, s in c.limits:
        lines.append(f"- {tid}: max buy {fmt_units(b)} ETH, max sell {fmt_units(s)} tokens")
    for nc in c.new_coin_caps:
        lines.append(f"- {nc.token_id}: new-coin cap {fmt_units(nc.cap)} ETH per buy "
                     f"(age {nc.age_minutes} min)")
    return lines


def _reap_lines(r: ReapContext, now: int) -> list[str]:
    memo = r.__dict__.get("_lines_memo")
    if memo is None or memo[0] != now:
        memo = (now, _reap_text(r, now))
        object.__setattr__(r, "_lines_memo", memo)
    return list(memo[1])


def _reap_text(r: ReapContext, now: int) -> list[str]:
    if r.next_at is None:
        return ["No reap is scheduled."]
    cd = r.countdown(now)
    lines = [f"Next reap at tick {r.next_at} (in {cd} ticks, about {fmt_ticks(cd)})."]
    if r.sources:
        lines.append("Lowest market cap (reap candidates): "
                     + ", ".join(f"{x.token_id} {fmt_fraction(x.market_cap, 3)} ETH"
                                 for x in r.sources))
    if r.targets:
        lines.append("Highest market cap (reap leaders): "
                     + ", ".join(f"{x.token_id} {fmt_fraction(x.market_cap, 3)} ETH"
                                 for x in r.targets))
    return lines


def _memory_line(m: MemoryEntry, now: int) -> str:
    ago = now - m.tick
    head = f"- tick {m.tick} ({ago} ago) {m.action}"
    if m.token_id:
        head += f" {m.token_id}"
    if m.fraction is not None:
        head += f" fraction {m.fraction:g}"
    if m.strategy_label:
        head += f" [{m.strategy_label}]"
    if m.outcome:
        head += f" -> {m.outcome}"
    if m.tags:
        head += f"; tags {','.join(m.tags)}"
    return head


# --- compile ---------------------------------------------------------------------

def _strategy_entries(commit: ConfigCommit, now: int,
                      status: Mapping[str, DirectiveStatus] | None) -> tuple[StrategyEntry, ...]:
    out = []
    for s in active_strategies(commit, now):
        d = _classify(s.text)
        st = (status or {}).get(s.label) or default_status(d)
        out.append(StrategyEntry(s.label, s.priority, s.text, s.expiry, d, st))
    return tuple(out)


@functools.lru_cache(maxsize=4096)
def _classify(text: str) -> Directive:
    return classify_directive(text)


def default_status(d: Directive) -> DirectiveStatus:
    return {DirectiveKind.IMMEDIATE: DirectiveStatus.PENDING,
            DirectiveKind.RESTRICTION: DirectiveStatus.ACTIVE_COMPLIANT,
            DirectiveKind.HOLD: DirectiveStatus.ACTIVE_COMPLIANT}.get(d.kind, DirectiveStatus.MONITORING)


def build_constraints(cfg: GuardConfig, limits: Mapping[str, TradeCaps],
                      snapshot: MarketSnapshot, now: int) -> ExecutionConstraints:
    key = ("constraints", id(cfg), id(limits), now)
    hit = snapshot.cache.get(key)
    if hit is not None and hit[0] is cfg and hit[1] is limits:
        return hit[2]
    rows = []
    caps = []
    for r in snapshot.rows:
        if r.token_id not in cfg.allowlist:
            continue
        lim = limits.get(r.token_id)
        if lim is not None:
            rows.append((r.token_id, lim.buy_max, lim.sell_max))
        cap = new_coin_buy_cap(r.launched_at, now)
        if cap is not None:
            caps.append(NewCoinCap(r.token_id, cap, (now - r.launched_at) * 5))
    out = ExecutionConstraints(cfg.max_trade_bps, cfg.slippage_bps, cfg.max_price_impact_bps,
                               cfg.max_positions, tuple(rows), tuple(caps))
    snapshot.cache[key] = (cfg, limits, out)
    return out


def compile_brief(template: BriefTemplate, commit: ConfigCommit | None,
                  snapshot: MarketSnapshot | None, portfolio_ctx: PortfolioContext | None,
                  guard_cfg: GuardConfig | None, reap_ctx: ReapContext | None,
                  memory: Sequence[MemoryEntry] | None, now: int, *,
                  limits: Mapping[str, TradeCaps] | None = None,
                  vault_id: str = "",
                  launch: LaunchInfo | None = None,
                  strategy_status: Mapping[str, DirectiveStatus] | None = None,
                  memory_window: int = MEMORY_WINDOW) -> tuple[StructuredBrief, RenderedBrief]:
    S = SectionId
    for payload, section, what in ((commit, S.ACTIVE_SETTINGS, "config commit"),
                                   (snapshot, S.MARKET_SNAPSHOT, "market snapshot"),
                                   (portfolio_ctx, S.PORTFOLIO_CONTEXT, "portfolio"),
                                   (guard_cfg, S.EXECUTION_CONSTRAINTS, "guard config"),
                                   (limits, S.EXECUTION_CONSTRAINTS, "per-token limits"),
                                   (reap_ctx, S.REAP_CONTEXT, "reap context"),
                                   (memory, S.PREVIOUS_DECISIONS, "memory")):
        if payload is None and section not in template.disabled:
            raise MissingSectionPayload(section, what)

    mem = tuple(memory[-memory_window:]) if memory_window > 0 else ()
    sb = StructuredBrief(
        clock=Clock(now, vault_id),
        config_version=commit.version,
        sliders=commit.sliders,
        strategies=_strategy_entries(commit, now, strategy_status),
        market=snapshot,
        portfolio=portfolio_ctx,
        constraints=build_constraints(guard_cfg, limits or {}, snapshot, now),
        reap=reap_ctx or ReapContext(None),
        launch=launch,
        memory=mem,
    )
    return sb, render(template, sb)


def _payload(section: SectionId, sb: StructuredBrief) -> list[str]:
    S = SectionId
    now = sb.clock.tick
    if section is S.DIRECTIVE_ROUTER:
        highs = sb.high_strategies()
        if not highs:
            return ["No [HIGH] strategies are active."]
        return [f"- {e.label}: {e.kind.value}, status {e.status.value}" for e in highs]
    if section is S.MARKET_SNAPSHOT:
        return [_market_text(sb.market)]
    if section is S.ACTIVE_STRATEGIES:
        order = {Priority.HIGH: 0, Priority.MEDIUM: 1, Priority.LOW: 2}
        entries = sorted(sb.strategies, key=lambda e: order[e.priority])
        return [_strategy_line(e) for e in entries] or ["No active strategies; follow the sliders."]
    if section is S.PORTFOLIO_CONTEXT:
        return _portfolio_lines(sb.portfolio)
    if section is S.EXECUTION_CONSTRAINTS:
        return _constraint_lines(sb.constraints)
    if section is S.REAP_CONTEXT:
        return _reap_lines(sb.reap, now)
    if section is S.UPCOMING_LAUNCH:
        if sb.launch is None:
            return ["No launch is scheduled."]
        l = sb.launch
        return [f"{l.symbol} ({l.token_id}) launches at tick {l.at}, in {fmt_ticks(l.at - now)}."]
    if section is S.PREVIOUS_DECISIONS:
        return [_memory_line(m, now) for m in sb.memory] or ["No previous decisions."]
    if section is S.CURRENT_STATE:
        return [f"Tick {now} (elapsed {fmt_ticks(now)}); vault {sb.clock.vault_id or '-'}; "
                f"config version {sb.config_version}."]
    return []


def render(template: BriefTemplate, sb: StructuredBrief) -> RenderedBrief:
    blocks = []
    for section in template.section_order:
        parts = []
        static = template.static(section)
        if static:
            parts.append(static)
        if section is SectionId.ACTIVE_SETTINGS:
            parts.extend(_settings_lines(template, sb.sliders))
        else:
            parts.extend(_payload(section, sb))
        parts.extend(r.text for r in template.rules_for(section) if r.predicate.holds(sb.sliders))
        blocks.append((section, "\n".join(parts)))
    text = "\n\n".join(b for _, b in blocks) + "\n"
    return RenderedBrief(text, hashlib.sha256(text.encode("utf-8")).hexdigest(),
                         template.variant_id, sb.structure_hash(), tuple(blocks))


@dataclass(frozen=True)
class BriefDiff:
    diff: str
    structurally_equal: bool


def brief_diff(a: RenderedBrief, b: RenderedBrief) -> BriefDiff:
    lines = difflib.unified_diff(a.text.splitlines(), b.text.splitlines(),
                                 fromfile=a.template_variant_id, tofile=b.template_variant_id,
                                 lineterm="")
    return BriefDiff("\n".join(lines), a.structure_hash == b.structure_hash)
