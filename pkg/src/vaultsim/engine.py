"""The deterministic tick loop.

One tick (five simulated minutes):

1. delayed mode only: settle last tick's accepted trades (re-quote, abort on
   slippage);
2. scheduled owner actions (activation, funding, config commits, pauses...);
3. mark prices and build the shared market snapshot;
4. decision phase, per active vault in order: read config, compile brief,
   ask the policy, parse;
5. settlement phase, serial in the same order: validate against live state,
   then execute (immediate mode) or queue (delayed mode); append a record;
6. token launches for the next tick, then the reap if one is due.

In immediate mode each call is validated right before its own settlement,
so the quote it carries is never stale and slippage aborts cannot occur;
only injected failures can stop an accepted trade.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .brief.compiler import LaunchInfo, MemoryEntry, compile_brief, reap_context
from .brief.template import BriefTemplate, load_template
from .guard import Accepted, GuardConfig, Rejected, settlement_check, trade_caps, validate
from .mandate import MandateError, MandateLog, Priority, active_strategies
from .market import (MarketHistory, Pool, TokenMeta, TradeEvent, execute_swap, snapshot)
from .policies.registry import make_policy, rng_for
from .policies.toolcall import Observe, ParseError, parse_tool_call, tool_call_to_json
from .policies.tracking import DirectiveTracker
from .reap import InsufficientTokens, ProtocolAccount, ReapSchedule, execute_reap, select_reap_pair
from .scenario import ActionSpec, Scenario
from .trace import TraceRecord, TraceStore
from .units import TICK_SECONDS, TICKS_PER_HOUR, UNIT
from .vault import (Close, EmergencyLiquidate, Fund, Pause, Unpause, UpdateSliders,
                    UpdateStrategies, Vault, VaultError, WithdrawUnallocated, apply_owner_action,
                    apply_settlement, portfolio_view)

log = logging.getLogger("vaultsim.engine")


class ConservationError(AssertionError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    seed: int = 0
    settlement_mode: str = "immediate"
    failure_rate: float = 0.0
    invocation_jitter: bool = False
    vault_order: str = "id"
    check_conservation: bool = False

    def __post_init__(self) -> None:
        if self.settlement_mode not in ("immediate", "delayed"):
            raise ValueError(f"unknown settlement mode {self.settlement_mode!r}")
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ValueError("failure rate must be in [0, 1]")
        if self.vault_order not in ("id", "shuffle"):
            raise ValueError(f"unknown vault order {self.vault_order!r}")


@dataclass
class _Decision:
    vault_id: str
    invocation_id: int
    tick: int
    ts: int
    config_version: int
    sliders: tuple[int, ...]
    brief_hash: str
    structure_hash: str
    raw: str
    parsed: object
    due: list[str]
    verdict: object = None
    before: dict = field(default_factory=dict)


def _fmt_impact(x: Fraction) -> str:
    return f"{float(x):.4f}"


class World:
    """Single authoritative simulation state; mutate only through ``run_tick``."""

    def __init__(self, scenario: Scenario, config: EngineConfig | None = None, *,
                 template: BriefTemplate | None = None, store: TraceStore | None = None):
        self.scenario = scenario
        self.config = config or EngineConfig(
            seed=scenario.seed, settlement_mode=scenario.settlement_mode,
            failure_rate=scenario.failure_rate, invocation_jitter=scenario.invocation_jitter,
            vault_order=scenario.vault_order, check_conservation=scenario.check_conservation)
        self.template = template or load_template(scenario.template)
        self.store = store if store is not None else TraceStore()
        self.tick = 0
        self.tokens: dict[str, TokenMeta] = {}
        self.pools: dict[str, Pool] = {}
        self.history = MarketHistory()
        self.protocol = ProtocolAccount()
        self.initial_token_reserve: dict[str, int] = {}
        self.eth_in = 0           # pool seeds + vault funding
        self.eth_out = 0          # withdrawals
        self._launches = sorted(scenario.tokens, key=lambda t: (t.launch_at, t.token_id))
        for spec in self._launches:
            self.tokens[spec.token_id] = TokenMeta(spec.token_id, spec.symbol,
                                                   launched_at=spec.launch_at,
                                                   genesis=spec.launch_at == 0)
        for spec in self._launches:
            if spec.launch_at == 0:
                self._launch(spec)
        self.guard: GuardConfig = scenario.guard.with_allowlist(self.pools)
        self.reap_schedule = (ReapSchedule(scenario.reap_period, scenario.reap_first_at)
                              if scenario.reap_period else None)

        self.vaults: dict[str, Vault] = {}
        self.mandates: dict[str, MandateLog] = {}
        self.policies = {}
        self.policy_names: dict[str, str] = {}
        self.trackers: dict[str, DirectiveTracker] = {}
        self.memory: dict[str, deque] = {}
        self._scheduled: dict[int, list[tuple[str, ActionSpec | None]]] = {}
        for v in scenario.vaults:
            self.vaults[v.vault_id] = Vault(v.vault_id, v.owner, activated_at=v.activate_at)
            self.mandates[v.vault_id] = MandateLog()
            pol = make_policy(v.policy_kind, v.policy_params)
            self.policies[v.vault_id] = pol
            self.policy_names[v.vault_id] = pol.name
            self.trackers[v.vault_id] = DirectiveTracker()
            self.memory[v.vault_id] = deque(maxlen=max(scenario.memory_window, 1))
            self._scheduled.setdefault(v.activate_at, []).append((v.vault_id, None))
            for a in v.actions:
                self._scheduled.setdefault(a.at, []).append((v.vault_id, a))
        self._specs = {v.vault_id: v for v in scenario.vaults}
        self._next_id = 1
        self._pending: list[_Decision] = []
        self.reap_events = []

    # -- market lifecycle -------------------------------------------------------------

    def _launch(self, spec) -> None:
        pool = Pool(spec.token_id, spec.eth_reserve, spec.token_reserve,
                    lp_fee_bps=self.scenario.lp_fee_bps,
                    protocol_fee_bps=self.scenario.protocol_fee_bps)
        self.pools[spec.token_id] = pool
        self.initial_token_reserve[spec.token_id] = spec.token_reserve
        self.eth_in += spec.eth_reserve
        self.history.record_launch(spec.token_id, pool.spot_price())

    def _launch_due(self, t: int) -> None:
        for spec in self._launches:
            if spec.launch_at == t and spec.token_id not in self.pools and spec.launch_at > 0:
                self._launch(spec)
                self.store.add_event({"kind": "launch", "tick": t, "token": spec.token_id,
                                      "eth_reserve": str(spec.eth_reserve),
                                      "token_reserve": str(spec.token_reserve)})
        self.guard = self.guard.with_allowlist(self.pools)

    def _upcoming_launch(self, t: int) -> LaunchInfo | None:
        for spec in self._launches:
            if spec.launch_at > t:
                return LaunchInfo(spec.token_id, spec.symbol, spec.launch_at)
        return None

    def _reap(self, t: int) -> None:
        caps = {tid: p.spot_price() * self.tokens[tid].total_supply / UNIT
                for tid, p in sorted(self.pools.items())}
        try:
            pair = select_reap_pair(caps, self.tokens)
        except InsufficientTokens as exc:
            self.store.add_event({"kind": "reap_skipped", "tick": t, "reason": str(exc)})
            return
        ev = execute_reap(self.tokens, self.pools, self.vaults, self.protocol, t, pair)
        self.reap_events.append(ev)
        self.store.add_event(ev.to_json())
        self.guard = self.guard.with_allowlist(self.pools)

    # -- owner side ---------------------------------------------------------------------

    def _owner_actions(self, t: int) -> None:
        for vid, spec in sorted(self._scheduled.get(t, ()), key=lambda x: x[0]):
            vault = self.vaults[vid]
            issuer = vault.owner_id
            if spec is None:
                vs = self._specs[vid]
                actions = [Fund(vs.fund)]
                self.mandates[vid].commit(vs.sliders, vs.strategies, t)
                label = "activate"
            else:
                issuer = spec.issuer or issuer
                actions = [self._owner_action(spec)]
                label = spec.type
            event = {"kind": "owner", "tick": t, "vault": vid, "action": label, "ok": True}
            try:
                for a in actions:
                    results = apply_owner_action(vault, a, issuer, pools=self.pools,
                                                 mandate=self.mandates[vid], tick=t)
                    if isinstance(a, Fund):
                        self.eth_in += a.amount
                    elif isinstance(a, WithdrawUnallocated):
                        self.eth_out += a.amount
                    for res in results:
                        q = res.quote
                        self.history.record_trade(TradeEvent(t, q.token_id, vid, q.direction,
                                                             q.eth_leg, q.token_leg))
                    if results:
                        event["swaps"] = len(results)
            except (VaultError, MandateError, ValueError) as exc:
                event["ok"] = False
                event["error"] = getattr(exc, "code", type(exc).__name__)
            self.store.add_event(event)

    @staticmethod
    def _owner_action(spec: ActionSpec):
        return {"fund": lambda: Fund(spec.amount),
                "withdraw": lambda: WithdrawUnallocated(spec.amount),
                "pause": Pause, "unpause": Unpause, "close": Close,
                "emergency_liquidate": EmergencyLiquidate,
                "update_sliders": lambda: UpdateSliders(spec.sliders),
                "update_strategies": lambda: UpdateStrategies(spec.strategies)}[spec.type]()

    # -- invocation pipeline -----------------------------------------------------------

    def _compact(self, vault: Vault) -> dict:
        value = Fraction(0)
        pos = {}
        for tid in sorted(vault.positions):
            p = vault.positions[tid]
            pos[tid] = [str(p.balance), str(p.cost_basis)]
            pool = self.pools.get(tid)
            if pool is not None:
                value += p.balance * pool.spot_price()
        return {"eth": str(vault.eth_balance), "positions": pos,
                "token_value": str(value.numerator // value.denominator)}

    def _decide(self, vid: str, t: int, ts: int, snap, limits, reap_ctx, launch,
                stream: str) -> _Decision:
        vault = self.vaults[vid]
        commit = self.mandates[vid].read_latest(t)
        prices = snap.prices
        pctx = portfolio_view(vault, prices, t)
        highs = [s for s in active_strategies(commit, t) if s.priority is Priority.HIGH]
        tracker = self.trackers[vid]
        status = {}
        if highs:
            pnl = None
            if vault.net_funded:
                pnl = (vault.mark_to_market(prices) - vault.net_funded) / vault.net_funded
            status = tracker.refresh(highs, pctx, snap, pnl)
        else:
            tracker.refresh((), pctx, snap)
        sb, rb = compile_brief(self.template, commit, snap, pctx, self.guard, reap_ctx,
                               list(self.memory[vid]), t, limits=limits, vault_id=vid,
                               launch=launch, strategy_status=status,
                               memory_window=self.scenario.memory_window)
        self.store.archive.add(rb)
        rng = rng_for(self.config.seed, vid, t, stream)
        raw = self.policies[vid].respond(sb, rb, rng)
        parsed = parse_tool_call(raw)
        d = _Decision(vid, self._next_id, t, ts, commit.version, commit.sliders.as_tuple(),
                      rb.brief_hash, rb.structure_hash, raw, parsed, tracker.due())
        self._next_id += 1
        return d

    def _validate(self, d: _Decision) -> None:
        vault = self.vaults[d.vault_id]
        d.before = self._compact(vault)
        if not isinstance(d.parsed, ParseError):
            d.verdict = validate(d.parsed, vault, self.pools, self.guard, d.tick, self.tokens)

    def _settle(self, d: _Decision, now: int) -> None:
        """Execute an accepted trade (or record why not) and append the record."""
        vault = self.vaults[d.vault_id]
        call = d.parsed
        v = d.verdict
        settlement = {"status": "not_applicable"}
        outcome = "parse_error"
        if isinstance(call, ParseError):
            verdict_json = None
        elif isinstance(v, Rejected):
            verdict_json = {"accepted": False, "code": v.code, "detail": v.detail}
            outcome = f"rejected:{v.code}"
        elif isinstance(call, Observe):
            verdict_json = {"accepted": True, "code": "Accepted"}
            outcome = "observed"
        else:
            verdict_json = {"accepted": True, "code": "Accepted", "amount_in": str(v.amount_in),
                            "min_output": str(v.min_output)}
            settlement, outcome = self._execute(d, vault, v, now)
        if d.before == {}:
            d.before = self._compact(vault)
        after = self._compact(vault) if settlement["status"] == "settled" else d.before
        self.memory[d.vault_id].append(MemoryEntry(
            d.tick, getattr(call, "kind", "parse_error"), getattr(call, "token_id", None),
            getattr(call, "fraction", None), getattr(call, "strategy_label", None), outcome,
            tuple(t.value for t in getattr(call, "reason_tags", ()))))
        self.trackers[d.vault_id].record(d.due, call, outcome.split(":")[0],
                                         {k: m.genesis for k, m in self.tokens.items()})
        self.store.append(TraceRecord(
            d.invocation_id, d.tick, d.ts, d.vault_id, d.config_version, d.brief_hash,
            d.structure_hash, self.template.variant_id, self.policy_names[d.vault_id], d.raw,
            tool_call_to_json(call), verdict_json, settlement, d.before, after, d.sliders))

    def _execute(self, d: _Decision, vault: Vault, v: Accepted, now: int) -> tuple[dict, str]:
        call = d.parsed
        tid = call.token_id
        pool = self.pools.get(tid)
        q = v.quote
        if self.config.settlement_mode == "delayed":
            dec = settlement_check(v, pool)
            if not dec.proceed:
                return {"status": "failed", "reason": dec.reason}, f"failed:{dec.reason}"
            q = dec.quote
            d.before = self._compact(vault)
            if (q.direction == "buy" and q.amount_in > vault.eth_balance) or \
                    (q.direction == "sell" and q.amount_in > vault.token_balance(tid)):
                return {"status": "failed", "reason": "InsufficientBalance"}, "failed:InsufficientBalance"
        if self.config.failure_rate > 0:
            if rng_for(self.config.seed, d.vault_id, d.invocation_id, "settle").random() \
                    < self.config.failure_rate:
                return {"status": "failed", "reason": "InjectedFailure"}, "failed:InjectedFailure"
        pos = vault.positions.get(tid)
        held = now - pos.first_acquired_at if pos is not None else None
        age = now - self.tokens[tid].launched_at
        res = execute_swap(pool, q)
        if self.config.check_conservation and q.lp_fee > 0 and res.k_after <= res.k_before:
            raise ConservationError(f"tick {now}: k did not grow on a fee-bearing {tid} swap")
        realized = apply_settlement(vault, res, now)
        self.history.record_trade(TradeEvent(now, tid, d.vault_id, q.direction, q.eth_leg, q.token_leg))
        s = {"status": "settled", "side": q.direction, "token": tid,
             "amount_in": str(q.amount_in), "amount_out": str(q.amount_out),
             "protocol_fee": str(q.protocol_fee), "lp_fee": str(q.lp_fee),
             "impact_bps": _fmt_impact(q.price_impact_bps), "realized_pnl": str(realized),
             "token_age": age, "settled_tick": now}
        if q.direction == "sell":
            s["held_ticks"] = held
        else:
            ages = sorted(now - self.tokens[x].launched_at for x in self.pools)
            older = sum(1 for a in ages if a > age)
            s["younger_than"] = round(older / (len(ages) - 1), 6) if len(ages) > 1 else 0.0
        return s, "settled"

    # -- tick -------------------------------------------------------------------------

    def _order(self, t: int, ids: list[str]) -> list[str]:
        ids = sorted(ids)
        if self.config.vault_order == "shuffle":
            rng_for(self.config.seed, "*", t, "order").shuffle(ids)
        return ids

    def _extra_invocation(self, vid: str, t: int) -> bool:
        per_hour = rng_for(self.config.seed, vid, t // TICKS_PER_HOUR, "jitter-hour").randrange(4)
        return rng_for(self.config.seed, vid, t, "jitter").random() < per_hour / TICKS_PER_HOUR

    def run_tick(self) -> None:
        t = self.tick
        if self._pending:
            pending, self._pending = self._pending, []
            for d in pending:
                self._settle(d, t)
        self._owner_actions(t)
        self.history.mark(t, self.pools)
        balances = {vid: v.balances() for vid, v in sorted(self.vaults.items()) if v.positions}
        snap = snapshot(self.history, self.tokens, self.pools, balances, t, self.scenario.eth_usd)
        limits = trade_caps(self.pools, self.guard)
        reap_ctx = reap_context(snap, self.reap_schedule.next_at if self.reap_schedule else None)
        launch = self._upcoming_launch(t)

        active = [vid for vid, v in self.vaults.items() if v.active]
        rounds = [self._order(t, active)]
        if self.config.invocation_jitter:
            rounds.append([vid for vid in rounds[0] if self._extra_invocation(vid, t)])
        for r, order in enumerate(rounds):
            n = max(len(order), 1)
            stream = "policy" if r == 0 else f"policy-{r}"
            base = t * TICK_SECONDS + r * (TICK_SECONDS // 2)
            decisions = [self._decide(vid, t, base + i * (TICK_SECONDS // 2) // n, snap, limits,
                                      reap_ctx, launch, stream)
                         for i, vid in enumerate(order)]
            if self.config.settlement_mode == "immediate" or r > 0:
                for d in decisions:
                    self._validate(d)
                    self._settle(d, t)
            else:
                # validate against tick-start state, settle next tick
                for d in decisions:
                    self._validate(d)
                    if isinstance(d.verdict, Accepted) and d.verdict.quote is not None:
                        self._pending.append(d)
                    else:
                        self._settle(d, t)

        self._launch_due(t + 1)
        if self.reap_schedule is not None and self.reap_schedule.due(t):
            self._reap(t)
            self.reap_schedule.advance()
        if self.config.check_conservation:
            self.check_conservation()
        self.tick += 1
        if t % 288 == 0:
            log.info("tick %d: %d records", t, self.store.count)

    def run(self, n_ticks: int) -> "World":
        for _ in range(n_ticks):
            self.run_tick()
        return self

    def flush(self) -> None:
        """Settle anything still queued (delayed mode) at the end of a run."""
        if self._pending:
            pending, self._pending = self._pending, []
            for d in pending:
                self._settle(d, self.tick)

    # -- invariants -------------------------------------------------------------------

    def total_eth(self) -> int:
        return (sum(v.eth_balance for v in self.vaults.values())
                + sum(p.eth_reserve + p.protocol_fee_accrued for p in self.pools.values())
                + self.protocol.eth)

    def check_conservation(self) -> None:
        expected = self.eth_in - self.eth_out
        got = self.total_eth()
        if got != expected:
            raise ConservationError(f"tick {self.tick}: ETH {got} != {expected}")
        for tid, pool in self.pools.items():
            held = sum(v.token_balance(tid) for v in self.vaults.values())
            total = pool.token_reserve + held + self.protocol.dust.get(tid, 0)
            if total != self.initial_token_reserve[tid]:
                raise ConservationError(f"tick {self.tick}: {tid} supply {total} != "
                                        f"{self.initial_token_reserve[tid]}")


@dataclass
class RunResult:
    world: World
    manifest: dict


def simulate(scenario: Scenario, seed: int | None = None, *, out_dir: str | Path | None = None,
             template: BriefTemplate | None = None, ticks: int | None = None) -> RunResult:
    """Run a scenario end to end; with ``out_dir`` the export streams to disk."""
    from .trace import StreamingExport, manifest as make_manifest
    seed = scenario.seed if seed is None else seed
    cfg = EngineConfig(seed=seed, settlement_mode=scenario.settlement_mode,
                       failure_rate=scenario.failure_rate,
                       invocation_jitter=scenario.invocation_jitter,
                       vault_order=scenario.vault_order,
                       check_conservation=scenario.check_conservation)
    n = scenario.ticks if ticks is None else ticks
    exporter = StreamingExport(Path(out_dir)) if out_dir is not None else None
    world = World(scenario, cfg, template=template,
                  store=exporter.store if exporter else None)
    try:
        world.run(n)
        world.flush()
    except BaseException:
        if exporter:
            exporter.abort()
        raise
    head = make_manifest(seed, scenario.raw, scenario.digest, world.template.variant_id,
                         world.store.count, n)
    if exporter:
        exporter.finish(head)
    return RunResult(world, head)
