"""Command line: run, sweep, replay, report.

Exit codes: 0 success, 1 runtime failure (including a failed verification),
2 invalid input.  Failures print one JSON object on stderr.
Set VAULTSIM_VERBOSE=1 for progress logging.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analytics
from .analytics import InsufficientCohorts, UnknownMetric
from .brief.template import TemplateError
from .engine import simulate
from .scenario import ScenarioError, load_scenario, parse_scenario, with_overrides
from .trace import BRIEFS_FILE, TRACE_FILE, CorruptLine, TraceError, failure_taxonomy, import_trace

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


class CliError(Exception):
    def __init__(self, code: str, message: str, exit_code: int, **extra):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code
        self.extra = extra


class VerificationMismatch(CliError):
    def __init__(self, message: str, invocation_id: int | None, line: int, file: str):
        super().__init__("VerificationMismatch", message, EXIT_RUNTIME,
                         invocation_id=invocation_id, line=line, file=file)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _scenario(path: str, template: str | None = None, ticks: int | None = None):
    sc = load_scenario(path)
    if template is not None or ticks is not None:
        sc = parse_scenario(with_overrides(sc.raw, template=template, ticks=ticks))
    return sc


# --- run -------------------------------------------------------------------------

def cmd_run(args) -> int:
    sc = _scenario(args.scenario, args.template, args.ticks)
    out = Path(args.out)
    result = simulate(sc, args.seed, out_dir=out)
    tax = failure_taxonomy(import_trace(out, with_briefs=False).records)
    summary = {"scenario": sc.name, "seed": result.manifest["seed"],
               "ticks": result.manifest["ticks"], "records": result.manifest["records"],
               "template": result.manifest["template"], "taxonomy": tax,
               "files": [TRACE_FILE, BRIEFS_FILE, "summary.json"]}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _emit(summary)
    return EXIT_OK


# --- sweep -----------------------------------------------------------------------

def parse_levels(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        levels = list(range(int(lo), int(hi) + 1))
    else:
        levels = [int(x) for x in text.split(",") if x.strip()]
    if not levels or any(not 1 <= lv <= 5 for lv in levels):
        raise ValueError(f"levels must lie in 1..5, got {text!r}")
    return levels


def sample_seed(seed: int, level: int, sample: int) -> int:
    digest = hashlib.sha256(f"sweep:{seed}:{level}:{sample}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def run_sample(raw: dict, slider: str, level: int, sample: int, seed: int) -> list[tuple[int, float]]:
    sc = parse_scenario(with_overrides(raw, sliders={slider: level}))
    result = simulate(sc, sample_seed(seed, level, sample))
    return analytics.sample_values(result.world.store.records, slider)


def sweep(raw: dict, slider: str, levels: list[int], samples: int, seed: int,
          jobs: int = 1) -> analytics.GradientReport:
    """Run ``samples`` seeds per level; results merge in (level, sample) order."""
    tasks = [(raw, slider, lv, i, seed) for lv in levels for i in range(samples)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(run_sample, *zip(*tasks)))
    else:
        results = [run_sample(*t) for t in tasks]
    per_level: dict[int, list[float]] = {lv: [] for lv in levels}
    for (_, _, lv, _, _), values in zip(tasks, results):
        per_level[lv].extend(v for _, v in values)
    return analytics.gradient_from_values(slider, per_level)


def cmd_sweep(args) -> int:
    sc = _scenario(args.scenario, args.template, args.ticks)
    try:
        levels = parse_levels(args.levels)
    except ValueError as exc:
        raise CliError("InvalidLevels", str(exc), EXIT_INPUT) from None
    seed = sc.seed if args.seed is None else args.seed
    report = sweep(sc.raw, args.slider, levels, args.samples, seed, args.jobs)
    table = report.table()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradient.csv").write_text(table.to_csv())
        if args.plots:
            analytics.plot_gradient(report, out / f"gradient_{report.slider}.png")
    sys.stdout.write(table.to_csv())
    return EXIT_OK


# --- replay ----------------------------------------------------------------------

def _first_divergence(orig: Path, fresh: Path) -> tuple[int, int | None] | None:
    """(line number, invocation id) of the first differing trace line."""
    with open(orig, "rb") as a, open(fresh, "rb") as b:
        n = 0
        while True:
            n += 1
            la, lb = a.readline(), b.readline()
            if la == lb:
                if not la:
                    return None
                continue
            rid = None
            for line in (lb, la):
                try:
                    d = json.loads(line)
                except ValueError:
                    continue
                if isinstance(d, dict) and d.get("kind") == "invocation":
                    rid = d.get("id")
                    break
            return n, rid


def _rerun(manifest: dict, out: Path, template: str | None = None):
    raw = manifest["scenario"]
    if template is not None:
        raw = with_overrides(raw, template=template)
    sc = parse_scenario(raw)
    return simulate(sc, manifest["seed"], out_dir=out, ticks=manifest["ticks"])


def _head(path: Path) -> dict:
    trace_file = path / TRACE_FILE if path.is_dir() else path
    with open(trace_file, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        head = json.loads(first)
    except ValueError:
        raise CorruptLine(1, "manifest line is not valid JSON") from None
    if not isinstance(head, dict) or head.get("kind") != "manifest":
        raise CorruptLine(1, "first line is not a manifest")
    return head


def verify_trace(path: Path) -> dict:
    trace_dir = path if path.is_dir() else path.parent
    head = _head(trace_dir)
    with tempfile.TemporaryDirectory(prefix="vaultsim-replay-") as tmp:
        fresh = Path(tmp)
        _rerun(head, fresh)
        where = _first_divergence(trace_dir / TRACE_FILE, fresh / TRACE_FILE)
        if where is not None:
            line, rid = where
            raise VerificationMismatch(f"trace diverges at line {line}", rid, line, TRACE_FILE)
        orig_briefs = trace_dir / BRIEFS_FILE
        if orig_briefs.read_bytes() != (fresh / BRIEFS_FILE).read_bytes():
            raise VerificationMismatch("brief archive differs", None, 0, BRIEFS_FILE)
    return {"verified": True, "records": head["records"], "seed": head["seed"],
            "scenario_hash": head["scenario_hash"]}


def _metrics(records) -> dict:
    trades = analytics.trades_from_records(records)
    tax = failure_taxonomy(records)
    return {"trade_rate": analytics.trade_rate(records),
            "fee_salience": analytics.fee_salience_rate(records),
            "two_sided": analytics.two_sided_fraction(trades),
            "cascades": len(analytics.detect_sell_cascades(trades)),
            "settled": tax["settled"], "rejected": sum(tax["guard_rejections"].values()),
            "parse_errors": tax["parse_errors"]}


def template_delta(path: Path, template: str) -> dict:
    """Re-run the traced world under another template and compare."""
    base = import_trace(path, with_briefs=False)
    with tempfile.TemporaryDirectory(prefix="vaultsim-variant-") as tmp:
        _rerun(base.manifest, Path(tmp), template)
        variant = import_trace(Path(tmp), with_briefs=False)
    pairs = list(zip(base.records, variant.records))
    n = len(pairs)
    aligned = sum(a.invocation_id == b.invocation_id and a.vault_id == b.vault_id for a, b in pairs)
    before, after = _metrics(base.records), _metrics(variant.records)
    delta = {k: (None if before[k] is None or after[k] is None else after[k] - before[k])
             for k in before}
    return {"template": {"base": base.manifest["template"], "variant": variant.manifest["template"]},
            "invocations": n, "aligned": aligned,
            "brief_hash_divergence": (sum(a.brief_hash != b.brief_hash for a, b in pairs) / n) if n else None,
            "structure_equality": (sum(a.structure_hash == b.structure_hash for a, b in pairs) / n) if n else None,
            "metrics": {"base": before, "variant": after, "delta": delta}}


def cmd_replay(args) -> int:
    path = Path(args.trace)
    if not path.exists():
        raise CliError("MissingTrace", f"no trace at {path}", EXIT_INPUT)
    out = {}
    if args.verify:
        out["verify"] = verify_trace(path)
    if args.template:
        out["variant"] = template_delta(path, args.template)
    if not out:
        head = _head(path)
        out["manifest"] = {k: head[k] for k in ("seed", "scenario_hash", "template", "records", "ticks")}
    _emit(out)
    return EXIT_OK


# --- report ----------------------------------------------------------------------

def cmd_report(args) -> int:
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = [m for m in names if m not in analytics.METRICS]
    if bad:
        raise UnknownMetric(f"unknown metric {bad[0]!r}; valid: {', '.join(analytics.METRICS)}")
    trace = import_trace(Path(args.trace), with_briefs=False)
    for name in names:
        sys.stdout.write(analytics.build_report(trace, name).to_csv())
    if args.plots:
        out = Path(args.plots)
        out.mkdir(parents=True, exist_ok=True)
        trades = analytics.trades_from_records(trace.records)
        analytics.plot_cascades(trades, analytics.detect_sell_cascades(trades), out / "cascades.png")
        for slider in ("TA", "TS"):
            try:
                rep = analytics.slider_gradient_report(trace, slider)
            except InsufficientCohorts:
                continue
            analytics.plot_gradient(rep, out / f"gradient_{rep.slider}.png")
    return EXIT_OK


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vaultsim", description="Trading-vault agent simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and export its trace")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.add_argument("--ticks", type=int)
    r.add_argument("--template", help="template variant name or file")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="slider gradient over seeded samples")
    s.add_argument("--scenario", required=True)
    s.add_argument("--slider", required=True, choices=["TA", "ARP", "TS", "HS", "DIV"])
    s.add_argument("--levels", default="1..5")
    s.add_argument("--samples", type=int, default=60)
    s.add_argument("--seed", type=int)
    s.add_argument("--ticks", type=int)
    s.add_argument("--template")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--plots", action="store_true")
    s.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("replay", help="re-run an exported trace")
    rp.add_argument("--trace", required=True)
    rp.add_argument("--verify", action="store_true")
    rp.add_argument("--template", help="re-run under this template and report deltas")
    rp.set_defaults(func=cmd_replay)

    rep = sub.add_parser("report", help="metric tables from an exported trace")
    rep.add_argument("--trace", required=True)
    rep.add_argument("--metrics", required=True,
                     help=f"comma-separated: {', '.join(analytics.METRICS)}")
    rep.add_argument("--plots", metavar="DIR")
    rep.set_defaults(func=cmd_report)
    return p


_INPUT_ERRORS = (ScenarioError, UnknownMetric, InsufficientCohorts, TemplateError, CorruptLine)


def main(argv: list[str] | None = None) -> int:
    level = logging.INFO if os.environ.get("VAULTSIM_VERBOSE") else logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _fail(exc.code, str(exc), **exc.extra)
        return exc.exit_code
    except _INPUT_ERRORS as exc:
        extra = {"path": exc.path} if isinstance(exc, ScenarioError) and exc.path else {}
        if isinstance(exc, CorruptLine):
            extra = {"line": exc.line}
        _fail(getattr(exc, "code", type(exc).__name__), str(exc), **extra)
        return EXIT_INPUT
    except (TraceError, OSError) as exc:
        _fail(getattr(exc, "code", type(exc).__name__), str(exc))
        return EXIT_RUNTIME


def _fail(code: str, message: str, **extra) -> None:
    sys.stderr.write(json.dumps({"error": code, "message": message, **extra}, sort_keys=True) + "\n")


if __name__ == "__main__":
    sys.exit(main())
