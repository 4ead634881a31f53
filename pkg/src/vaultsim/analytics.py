"""Diagnostics computed from trace exports alone.

Everything here is a pure function of trace records (or of a plain trade
stream), so a metric recomputed from an exported trace always matches the
one computed in-process.
"""

from __future__ import annotations

import bisect
import csv
import io
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from statistics import mean, median
from typing import Iterable, Mapping, Sequence

from .mandate import SLIDER_ABBREV, SLIDER_NAMES
from .trace import ImportedTrace, TraceRecord, failure_taxonomy

COLD_START_WINDOW = 30
CASCADE_VAULTS = 10
CASCADE_WINDOW = 600.0
TWO_SIDED_WINDOW = 300.0
FLAT_TOLERANCE = 1e-9


class InsufficientCohorts(ValueError):
    code = "InsufficientCohorts"


class UnknownMetric(ValueError):
    code = "UnknownMetric"


# --- trades ----------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Trade:
    ts: float
    token_id: str
    vault_id: str
    side: str           # buy | sell


def trades_from_records(records: Iterable[TraceRecord]) -> list[Trade]:
    out = [Trade(r.ts, r.settlement["token"], r.vault_id, r.settlement["side"])
           for r in records if r.is_trade]
    out.sort(key=lambda t: t.ts)
    return out


def _records(trace) -> list[TraceRecord]:
    if isinstance(trace, ImportedTrace):
        return trace.records
    return list(trace)


# --- reports ---------------------------------------------------------------------

@dataclass
class MetricReport:
    metric: str
    window: str
    rows: list[dict] = field(default_factory=list)

    def add(self, scope: str, key, value, samples: int) -> None:
        self.rows.append({"scope": scope, "key": key, "value": value, "samples": samples})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["metric", "window", "scope", "key", "value", "samples"],
                           lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            v = row["value"]
            w.writerow({"metric": self.metric, "window": self.window, **row,
                        "value": "" if v is None else (f"{v:.6g}" if isinstance(v, float) else v)})
        return buf.getvalue()


# --- cold start ------------------------------------------------------------------

@dataclass(frozen=True)
class ColdStart:
    buys: int
    sells: int

    @property
    def ratio(self) -> float | None:
        """buys / sells; None when there were no sells (see ``label``)."""
        return self.buys / self.sells if self.sells else None

    @property
    def label(self) -> str:
        if self.sells:
            return f"{self.ratio:.3f}"
        return "buys-with-zero-sells" if self.buys else "undefined"


def cold_start_buy_sell(trace, vault_id: str, window: int = COLD_START_WINDOW) -> ColdStart:
    mine = sorted((r for r in _records(trace) if r.vault_id == vault_id),
                  key=lambda r: r.invocation_id)[:window]
    if not mine:
        raise ValueError(f"vault {vault_id} has no invocations")
    sides = Counter(r.settlement["side"] for r in mine if r.is_trade)
    return ColdStart(sides["buy"], sides["sell"])


# --- per-vault slider metrics -------------------------------------------------------

def _slider_index(name: str) -> int:
    full = SLIDER_ABBREV.get(name, name)
    if full not in SLIDER_NAMES:
        raise ValueError(f"unknown slider {name!r}")
    return SLIDER_NAMES.index(full)


def trade_rate(records: Sequence[TraceRecord]) -> float | None:
    return sum(r.is_trade for r in records) / len(records) if records else None


def spend_fraction(records: Sequence[TraceRecord]) -> float | None:
    """Mean share of the ETH balance spent per settled buy."""
    xs = [int(r.settlement["amount_in"]) / int(r.portfolio_before["eth"])
          for r in records if r.is_trade and r.settlement["side"] == "buy"
          and int(r.portfolio_before["eth"]) > 0]
    return mean(xs) if xs else None


def risk_selection(records: Sequence[TraceRecord]) -> float | None:
    """Mean inverted launch-age percentile of bought tokens (1 = youngest)."""
    xs = [r.settlement["younger_than"] for r in records
          if r.is_trade and r.settlement["side"] == "buy"]
    return mean(xs) if xs else None


def hold_ticks(records: Sequence[TraceRecord]) -> float | None:
    """Mean ticks held before a voluntary (not directive-driven) sell."""
    xs = [r.settlement["held_ticks"] for r in records
          if r.is_trade and r.settlement["side"] == "sell" and not r.parsed.get("strategy")]
    return mean(xs) if xs else None


def open_positions(records: Sequence[TraceRecord]) -> float | None:
    xs = [sum(1 for bal, _ in r.portfolio_after["positions"].values() if int(bal) > 0)
          for r in records]
    return mean(xs) if xs else None


SLIDER_METRICS = {
    "trading_activity": ("trade_rate", trade_rate),
    "asset_risk_preference": ("risk_selection", risk_selection),
    "trade_size": ("spend_fraction", spend_fraction),
    "holding_style": ("hold_ticks", hold_ticks),
    "diversification": ("open_positions", open_positions),
}


@dataclass(frozen=True)
class LevelStat:
    level: int
    mean: float
    samples: int


@dataclass(frozen=True)
class GradientReport:
    slider: str
    metric: str
    levels: tuple[LevelStat, ...]
    verdict: str                        # strictly-monotone | inverted | flat | mixed
    steps: tuple[str, ...]              # per adjacent pair: up | down | flat

    def table(self) -> MetricReport:
        rep = MetricReport(f"gradient:{self.slider}:{self.metric}", "per vault, whole run")
        for s in self.levels:
            rep.add("level", s.level, s.mean, s.samples)
        rep.add("verdict", self.verdict, None, len(self.levels))
        return rep


def _verdict(means: Sequence[float], tol: float) -> tuple[str, tuple[str, ...]]:
    steps = tuple("flat" if abs(b - a) <= tol else ("up" if b > a else "down")
                  for a, b in zip(means, means[1:]))
    if all(s == "up" for s in steps):
        return "strictly-monotone", steps
    if all(s == "flat" for s in steps):
        return "flat", steps
    if "down" in steps:
        return "inverted", steps
    return "mixed", steps


def slider_gradient_report(traces, slider: str, *, tolerance: float = FLAT_TOLERANCE) -> GradientReport:
    """Per-level means of the slider's diagnostic with a monotonicity verdict.

    ``traces`` is one trace (records or ImportedTrace) or a list of them, as a
    sweep produces.  Each (trace, vault, level) group is one sample, and a
    level's value is the mean over its samples.
    """
    if isinstance(traces, ImportedTrace) or (traces and isinstance(traces[0], TraceRecord)):
        traces = [traces]
    per_level: dict[int, list[float]] = defaultdict(list)
    for tr in traces:
        for level, value in sample_values(tr, slider):
            per_level[level].append(value)
    return gradient_from_values(slider, per_level, tolerance=tolerance)


def sample_values(trace, slider: str) -> list[tuple[int, float]]:
    """(level, metric) per (vault, level) group of one trace, groups with no data dropped."""
    idx = _slider_index(slider)
    _, fn = SLIDER_METRICS[SLIDER_NAMES[idx]]
    groups: dict[tuple[str, int], list[TraceRecord]] = defaultdict(list)
    for r in _records(trace):
        groups[(r.vault_id, r.sliders[idx])].append(r)
    out = []
    for (_, level), recs in sorted(groups.items()):
        v = fn(recs)
        if v is not None:
            out.append((level, v))
    return out


def gradient_from_values(slider: str, per_level: Mapping[int, Sequence[float]], *,
                         tolerance: float = FLAT_TOLERANCE) -> GradientReport:
    name = SLIDER_NAMES[_slider_index(slider)]
    metric_name, _ = SLIDER_METRICS[name]
    levels = tuple(LevelStat(lv, mean(per_level[lv]), len(per_level[lv]))
                   for lv in sorted(per_level) if per_level[lv])
    if len(levels) < 2:
        raise InsufficientCohorts(f"{name} needs at least two levels with data, found {len(levels)}")
    verdict, steps = _verdict([s.mean for s in levels], tolerance)
    return GradientReport(name, metric_name, levels, verdict, steps)


# --- deployment and fee salience ------------------------------------------------------

def deployment_from_snapshot(snap: Mapping) -> Fraction:
    tokens = int(snap["token_value"])
    total = tokens + int(snap["eth"])
    return Fraction(tokens, total) if total else Fraction(0)


def deployment_fraction(trace, vault_id: str, at: int) -> Fraction:
    """Token share of vault value after the vault's last invocation at or before ``at``."""
    mine = [r for r in _records(trace) if r.vault_id == vault_id and r.tick <= at]
    if not mine:
        raise ValueError(f"vault {vault_id} has no invocation at or before tick {at}")
    last = max(mine, key=lambda r: r.invocation_id)
    return deployment_from_snapshot(last.portfolio_after)


def fee_salience_rate(trace, cohort: Iterable[str] | None = None) -> float | None:
    """Share of observe records led by the fee_cost tag; None without observes."""
    keep = None if cohort is None else set(cohort)
    observes = [r for r in _records(trace) if r.action == "observe"
                and (keep is None or r.vault_id in keep)]
    if not observes:
        return None
    led = sum(1 for r in observes if r.reason_tags[:1] == ("fee_cost",))
    return led / len(observes)


# --- sell cascades ------------------------------------------------------------------

@dataclass(frozen=True)
class CascadeEvent:
    token_id: str
    start: float
    end: float
    vaults: int
    sells: int
    median_gap: float | None


def _gaps(sells: Sequence[Trade]) -> list[float]:
    return [b.ts - a.ts for a, b in zip(sells, sells[1:]) if a.vault_id != b.vault_id]


def detect_sell_cascades(trades: Iterable[Trade], k: int = CASCADE_VAULTS,
                         window: float = CASCADE_WINDOW) -> list[CascadeEvent]:
    """Bursts where at least ``k`` distinct vaults sold one token inside ``[t, t+window)``.

    Candidate windows start at each sell; windows whose spans overlap are
    merged into one event covering every sell they contain.
    """
    by_token: dict[str, list[Trade]] = defaultdict(list)
    for t in trades:
        if t.side == "sell":
            by_token[t.token_id].append(t)
    events = []
    for token in sorted(by_token):
        sells = sorted(by_token[token], key=lambda t: t.ts)
        n = len(sells)
        counts: Counter = Counter()
        hi = 0
        spans: list[tuple[int, int]] = []       # index ranges [i, hi) of qualifying windows
        last_start = None
        for i in range(n):
            while hi < n and sells[hi].ts < sells[i].ts + window:
                counts[sells[hi].vault_id] += 1
                hi += 1
            if len(counts) >= k:
                if last_start is not None and sells[i].ts < last_start + window:
                    spans[-1] = (spans[-1][0], hi)
                else:
                    spans.append((i, hi))
                last_start = sells[i].ts
            v = sells[i].vault_id
            counts[v] -= 1
            if not counts[v]:
                del counts[v]
        for lo, up in spans:
            chunk = sells[lo:up]
            gaps = _gaps(chunk)
            events.append(CascadeEvent(token, chunk[0].ts, chunk[-1].ts,
                                       len({t.vault_id for t in chunk}), len(chunk),
                                       median(gaps) if gaps else None))
    events.sort(key=lambda e: (e.start, e.token_id))
    return events


# --- two-sided windows -------------------------------------------------------------

def two_sided_fraction(trades: Iterable[Trade], window: float = TWO_SIDED_WINDOW,
                       *, rolling: bool = False) -> float | None:
    """Share of trades that sit in a token-window holding both a buy and a sell.

    Tiled mode cuts time into ``[j*window, (j+1)*window)`` from tick 0.
    Rolling mode counts a trade when an opposite-side trade of the same
    token lies strictly less than ``window`` away.  None for no trades.
    """
    trades = list(trades)
    if not trades:
        return None
    if rolling:
        times: dict[tuple[str, str], list[float]] = defaultdict(list)
        for t in trades:
            times[(t.token_id, t.side)].append(t.ts)
        for v in times.values():
            v.sort()
        hit = 0
        for t in trades:
            other = times.get((t.token_id, "sell" if t.side == "buy" else "buy"), [])
            j = bisect.bisect_left(other, t.ts)
            near = [abs(other[x] - t.ts) for x in (j - 1, j) if 0 <= x < len(other)]
            hit += bool(near) and min(near) < window
        return hit / len(trades)
    cells: dict[tuple[str, int], list[int]] = defaultdict(lambda: [0, 0])
    for t in trades:
        c = cells[(t.token_id, int(t.ts // window))]
        c[t.side == "sell"] += 1
    two = sum(b + s for b, s in cells.values() if b and s)
    return two / len(trades)


# --- report assembly ----------------------------------------------------------------

def _cold_start_report(records) -> MetricReport:
    rep = MetricReport("cold_start", f"first {COLD_START_WINDOW} invocations")
    for vid in sorted({r.vault_id for r in records}):
        cs = cold_start_buy_sell(records, vid)
        rep.add("vault", vid, cs.ratio if cs.sells else cs.label, cs.buys + cs.sells)
    return rep


def _deployment_report(records) -> MetricReport:
    rep = MetricReport("deployment", "after last invocation")
    last: dict[str, TraceRecord] = {}
    for r in records:
        last[r.vault_id] = r
    for vid in sorted(last):
        rep.add("vault", vid, float(deployment_from_snapshot(last[vid].portfolio_after)), 1)
    return rep


def _fee_report(records) -> MetricReport:
    rep = MetricReport("fee_salience", "observe records")
    rep.add("all", "*", fee_salience_rate(records), sum(r.action == "observe" for r in records))
    return rep


def _cascade_report(records) -> MetricReport:
    events = detect_sell_cascades(trades_from_records(records))
    rep = MetricReport("cascades", f">= {CASCADE_VAULTS} vaults in {CASCADE_WINDOW:g}s")
    for e in events:
        rep.add(e.token_id, f"{e.start:g}-{e.end:g}", e.median_gap, e.vaults)
    rep.add("all", "events", len(events), len(events))
    return rep


def _two_sided_report(records, rolling=False) -> MetricReport:
    trades = trades_from_records(records)
    rep = MetricReport("two_sided_rolling" if rolling else "two_sided",
                       f"{'rolling' if rolling else 'tiled'} {TWO_SIDED_WINDOW:g}s")
    rep.add("all", "*", two_sided_fraction(trades, rolling=rolling), len(trades))
    return rep


def _taxonomy_report(records) -> MetricReport:
    tax = failure_taxonomy(records)
    rep = MetricReport("taxonomy", "all records")
    for key in ("parse_errors", "settlement_failures", "settled", "not_applicable", "total"):
        rep.add("bucket", key, tax[key], tax["total"])
    for code, n in tax["guard_rejections"].items():
        rep.add("rejection", code, n, tax["total"])
    rep.add("rate", "settlement_success", tax["settlement_success"],
            tax["settled"] + tax["settlement_failures"])
    return rep


def _gradient(slider):
    def build(records):
        return slider_gradient_report(records, slider).table()
    return build


METRICS = {
    "cold_start": _cold_start_report,
    "deployment": _deployment_report,
    "fee_salience": _fee_report,
    "cascades": _cascade_report,
    "two_sided": _two_sided_report,
    "two_sided_rolling": lambda recs: _two_sided_report(recs, rolling=True),
    "taxonomy": _taxonomy_report,
    **{f"gradient_{a.lower()}": _gradient(a) for a in ("TA", "ARP", "TS", "HS", "DIV")},
}


def build_report(trace, metric: str) -> MetricReport:
    try:
        fn = METRICS[metric]
    except KeyError:
        raise UnknownMetric(f"unknown metric {metric!r}; valid: {', '.join(METRICS)}") from None
    return fn(_records(trace))


# --- plots ---------------------------------------------------------------------------

def plot_gradient(report: GradientReport, path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [s.level for s in report.levels]
    ax.plot(xs, [s.mean for s in report.levels], marker="o")
    ax.set_xticks(xs)
    ax.set_xlabel(f"{report.slider} level")
    ax.set_ylabel(report.metric)
    ax.set_title(f"{report.slider}: {report.verdict}")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_cascades(trades: Sequence[Trade], events: Sequence[CascadeEvent], path: Path,
                  bucket: float = CASCADE_WINDOW) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3.5))
    sells = Counter(int(t.ts // bucket) for t in trades if t.side == "sell")
    buys = Counter(int(t.ts // bucket) for t in trades if t.side == "buy")
    span = range(max([*sells, *buys, 0]) + 1)
    ax.bar([b * bucket / 3600 for b in span], [buys[b] for b in span], width=bucket / 3600,
           label="buys", alpha=0.6)
    ax.bar([b * bucket / 3600 for b in span], [-sells[b] for b in span], width=bucket / 3600,
           label="sells", alpha=0.6)
    for e in events:
        ax.axvspan(e.start / 3600, max(e.end, e.start + 1) / 3600, color="red", alpha=0.2)
    ax.set_xlabel("hours")
    ax.set_ylabel("trades per window")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path
