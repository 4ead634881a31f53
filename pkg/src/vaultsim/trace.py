"""Append-only instruction-to-settlement trace, brief archive, export/import.

Export layout (one directory per run):

``trace.jsonl``
    line 1 is the manifest (format version, seed, scenario hash and the
    scenario itself, template variant, record count); every further line is
    one event: ``invocation`` records plus ``owner``, ``launch`` and ``reap``
    events in the order they happened.  Amounts are decimal strings.
``briefs.jsonl.gz``
    the rendered-brief archive, deduplicated by section: ``chunk`` lines
    carry section text the first time it appears, ``brief`` lines list the
    chunk ids that make up each brief hash.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

TRACE_FORMAT = "vaultsim-trace/1"
TRACE_FILE = "trace.jsonl"
BRIEFS_FILE = "briefs.jsonl.gz"


class TraceError(Exception):
    code = "TraceError"


class DanglingBriefHash(TraceError):
    code = "DanglingBriefHash"


class NonMonotoneId(TraceError):
    code = "NonMonotoneId"


class CorruptLine(TraceError):
    code = "CorruptLine"

    def __init__(self, line: int, cause: str):
        super().__init__(f"line {line}: {cause}")
        self.line = line
        self.cause = cause


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


@dataclass
class TraceRecord:
    invocation_id: int
    tick: int
    ts: int                      # seconds since tick 0
    vault_id: str
    config_version: int
    brief_hash: str
    structure_hash: str
    template_variant_id: str
    policy: str
    raw_response: str
    parsed: dict | None          # tool call json, or {"action": "parse_error", ...}
    verdict: dict | None         # absent on parse errors
    settlement: dict             # status: settled | failed | not_applicable
    portfolio_before: dict
    portfolio_after: dict
    sliders: tuple[int, ...] = ()

    kind = "invocation"

    @property
    def action(self) -> str:
        return self.parsed["action"] if self.parsed else "parse_error"

    @property
    def reason_tags(self) -> tuple[str, ...]:
        return tuple(self.parsed.get("reason", ())) if self.parsed else ()

    @property
    def status(self) -> str:
        return self.settlement["status"]

    @property
    def bucket(self) -> str:
        if self.action == "parse_error":
            return "parse_error"
        if not self.verdict["accepted"]:
            return "rejected"
        return self.settlement["status"]

    @property
    def is_trade(self) -> bool:
        return self.status == "settled" and self.action in ("buy", "sell")

    def to_json(self) -> dict:
        return {"kind": "invocation", "id": self.invocation_id, "tick": self.tick, "ts": self.ts,
                "vault": self.vault_id, "config_version": self.config_version,
                "brief_hash": self.brief_hash, "structure_hash": self.structure_hash,
                "template": self.template_variant_id, "policy": self.policy,
                "raw": self.raw_response, "parsed": self.parsed, "verdict": self.verdict,
                "settlement": self.settlement, "before": self.portfolio_before,
                "after": self.portfolio_after, "sliders": list(self.sliders)}

    @classmethod
    def from_json(cls, d: dict) -> "TraceRecord":
        return cls(d["id"], d["tick"], d["ts"], d["vault"], d["config_version"], d["brief_hash"],
                   d["structure_hash"], d["template"], d["policy"], d["raw"], d["parsed"],
                   d["verdict"], d["settlement"], d["before"], d["after"], tuple(d["sliders"]))


class BriefArchive:
    """hash -> rendered text, stored as deduplicated section chunks.

    With ``sink`` set, lines are streamed to it and texts are not kept in
    memory; otherwise everything stays in memory and ``text()`` works.
    """

    def __init__(self, sink=None):
        self._sink = sink
        self._chunks: dict[str, str] = {}
        self._seen_chunks: set[str] = set()
        self._briefs: dict[str, tuple[str, ...]] = {}
        self._hashes: set[str] = set()
        self._lines: list[str] | None = [] if sink is None else None

    def __contains__(self, brief_hash: str) -> bool:
        return brief_hash in self._hashes

    def __len__(self) -> int:
        return len(self._hashes)

    def _emit(self, obj: dict) -> None:
        line = _dumps(obj) + "\n"
        if self._sink is not None:
            self._sink.write(line)
        else:
            self._lines.append(line)

    def add(self, rendered) -> None:
        if rendered.brief_hash in self._hashes:
            return
        ids = []
        for section, text in rendered.sections:
            cid = hashlib.sha256(text.encode("utf-8")).hexdigest()[:32]
            if cid not in self._seen_chunks:
                self._seen_chunks.add(cid)
                self._emit({"kind": "chunk", "id": cid, "text": text})
                if self._sink is None:
                    self._chunks[cid] = text
            ids.append(cid)
        self._hashes.add(rendered.brief_hash)
        self._emit({"kind": "brief", "hash": rendered.brief_hash,
                    "template": rendered.template_variant_id, "chunks": ids})
        if self._sink is None:
            self._briefs[rendered.brief_hash] = tuple(ids)

    def text(self, brief_hash: str) -> str:
        ids = self._briefs[brief_hash]
        return "\n\n".join(self._chunks[c] for c in ids) + "\n"

    def write(self, path: Path) -> None:
        with gzip.GzipFile(path, "wb", compresslevel=6, mtime=0) as gz:
            with io.TextIOWrapper(gz, encoding="utf-8", newline="\n") as fh:
                fh.writelines(self._lines)

    @classmethod
    def read(cls, path: Path) -> "BriefArchive":
        a = cls()
        with gzip.open(path, "rt", encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                try:
                    d = json.loads(line)
                    if d["kind"] == "chunk":
                        a._chunks[d["id"]] = d["text"]
                        a._seen_chunks.add(d["id"])
                    else:
                        a._briefs[d["hash"]] = tuple(d["chunks"])
                        a._hashes.add(d["hash"])
                except (ValueError, KeyError) as exc:
                    raise CorruptLine(n, f"brief archive: {exc}") from None
                a._lines.append(line)
        return a

    def verify(self) -> None:
        for h in self._briefs:
            if hashlib.sha256(self.text(h).encode("utf-8")).hexdigest() != h:
                raise TraceError(f"brief {h} does not match its text")


class TraceStore:
    """Ordered event log.  Records are kept in memory unless streaming."""

    def __init__(self, archive: BriefArchive | None = None, keep: bool = True):
        self.archive = archive if archive is not None else BriefArchive()
        self.keep = keep
        self.records: list[TraceRecord] = []
        self.events: list[dict] = []        # non-invocation events, kept for analytics
        self._lines: list[str] | None = [] if keep else None
        self._body = None
        self._last_id = 0
        self.count = 0
        self._by_vault: dict[str, list[int]] = {}

    def stream_to(self, fh) -> None:
        self._body = fh

    def _emit(self, line: str) -> None:
        if self._body is not None:
            self._body.write(line)
        if self._lines is not None:
            self._lines.append(line)

    def append(self, record: TraceRecord) -> None:
        if record.invocation_id <= self._last_id:
            raise NonMonotoneId(f"id {record.invocation_id} after {self._last_id}")
        if record.brief_hash not in self.archive:
            raise DanglingBriefHash(record.brief_hash)
        self._last_id = record.invocation_id
        self.count += 1
        self._emit(_dumps(record.to_json()) + "\n")
        if self.keep:
            self._by_vault.setdefault(record.vault_id, []).append(len(self.records))
            self.records.append(record)

    def add_event(self, event: dict) -> None:
        self._emit(_dumps(event) + "\n")
        if self.keep:
            self.events.append(event)

    def by_vault(self, vault_id: str) -> list[TraceRecord]:
        return [self.records[i] for i in self._by_vault.get(vault_id, ())]

    def by_tick(self, tick: int) -> list[TraceRecord]:
        return [r for r in self.records if r.tick == tick]

    def lines(self) -> list[str]:
        return list(self._lines or ())


def manifest(seed: int, scenario_raw: dict, scenario_digest: str, template_variant: str,
             record_count: int, ticks: int) -> dict:
    return {"kind": "manifest", "format": TRACE_FORMAT, "seed": seed,
            "scenario_hash": scenario_digest, "template": template_variant,
            "records": record_count, "ticks": ticks, "scenario": scenario_raw}


def write_export(out_dir: Path, head: dict, body_lines: Iterable[str] | Path,
                 archive: BriefArchive | Path) -> None:
    """Write trace.jsonl (manifest first) and the brief archive."""
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / TRACE_FILE, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(head) + "\n")
        if isinstance(body_lines, Path):
            with open(body_lines, encoding="utf-8") as src:
                shutil.copyfileobj(src, fh)
        else:
            fh.writelines(body_lines)
    if isinstance(archive, Path):
        if archive != out_dir / BRIEFS_FILE:
            shutil.move(archive, out_dir / BRIEFS_FILE)
    else:
        archive.write(out_dir / BRIEFS_FILE)


class StreamingExport:
    """Context that streams a run straight to disk, keeping memory flat."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".body-", dir=self.out_dir)
        os.close(fd)
        self.body_path = Path(tmp)
        self.briefs_path = self.out_dir / BRIEFS_FILE
        self._body = open(self.body_path, "w", encoding="utf-8", newline="\n")
        self._gz = gzip.GzipFile(self.briefs_path, "wb", compresslevel=6, mtime=0)
        self._briefs = io.TextIOWrapper(self._gz, encoding="utf-8", newline="\n")
        self.archive = BriefArchive(sink=self._briefs)
        self.store = TraceStore(self.archive, keep=False)
        self.store.stream_to(self._body)

    def finish(self, head: dict) -> None:
        self._body.close()
        self._briefs.close()
        try:
            write_export(self.out_dir, head, self.body_path, self.briefs_path)
        finally:
            self.body_path.unlink(missing_ok=True)

    def abort(self) -> None:
        for fh in (self._body, self._briefs):
            try:
                fh.close()
            except Exception:
                pass
        self.body_path.unlink(missing_ok=True)


@dataclass
class ImportedTrace:
    manifest: dict
    records: list[TraceRecord]
    events: list[dict]
    archive: BriefArchive | None = None
    lines: list[str] = field(default_factory=list, repr=False)


def iter_lines(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.endswith("\n"):
                raise CorruptLine(n, "truncated line (no newline)")
            try:
                yield n, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptLine(n, f"invalid json: {exc.msg}") from None


def import_trace(path: str | Path, *, with_briefs: bool = True) -> ImportedTrace:
    p = Path(path)
    trace_file = p / TRACE_FILE if p.is_dir() else p
    records: list[TraceRecord] = []
    events: list[dict] = []
    head = None
    last_id = 0
    for n, d in iter_lines(trace_file):
        kind = d.get("kind") if isinstance(d, dict) else None
        if n == 1:
            if kind != "manifest" or d.get("format") != TRACE_FORMAT:
                raise CorruptLine(1, "first line is not a manifest of a supported format")
            head = d
            continue
        if kind == "invocation":
            try:
                r = TraceRecord.from_json(d)
            except (KeyError, TypeError) as exc:
                raise CorruptLine(n, f"missing field {exc}") from None
            if r.invocation_id <= last_id:
                raise CorruptLine(n, f"non-monotone invocation id {r.invocation_id}")
            last_id = r.invocation_id
            records.append(r)
        elif kind in ("owner", "launch", "reap", "reap_skipped"):
            events.append(d)
        else:
            raise CorruptLine(n, f"unknown event kind {kind!r}")
    if head is None:
        raise CorruptLine(1, "empty trace")
    if head["records"] != len(records):
        raise CorruptLine(n, f"manifest says {head['records']} records, found {len(records)}")
    archive = None
    briefs = trace_file.parent / BRIEFS_FILE
    if with_briefs and briefs.exists():
        archive = BriefArchive.read(briefs)
    return ImportedTrace(head, records, events, archive)


def failure_taxonomy(records: Iterable[TraceRecord]) -> dict:
    """Partition records: parse errors, rejections by code, failures, settled, no-op."""
    out = {"parse_errors": 0, "guard_rejections": {}, "settlement_failures": 0,
           "settled": 0, "not_applicable": 0, "total": 0}
    for r in records:
        out["total"] += 1
        b = r.bucket
        if b == "parse_error":
            out["parse_errors"] += 1
        elif b == "rejected":
            code = r.verdict["code"]
            out["guard_rejections"][code] = out["guard_rejections"].get(code, 0) + 1
        elif b == "failed":
            out["settlement_failures"] += 1
        elif b == "settled":
            out["settled"] += 1
        else:
            out["not_applicable"] += 1
    out["guard_rejections"] = dict(sorted(out["guard_rejections"].items()))
    denom = out["settled"] + out["settlement_failures"]
    out["settlement_success"] = out["settled"] / denom if denom else None
    return out
