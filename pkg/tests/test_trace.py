import dataclasses
from collections import Counter

import pytest

from worlds import raw_scenario, vault
from vaultsim.engine import simulate
from vaultsim.scenario import parse_scenario
from vaultsim.trace import (BRIEFS_FILE, TRACE_FILE, CorruptLine, DanglingBriefHash,
                            NonMonotoneId, TraceStore, failure_taxonomy, import_trace)

MIXED = raw_scenario([vault("a", sliders={"TA": 5}, activate_at=10), vault("b", "random_trader"),
                      vault("c", "schema_breaker"), vault("d", "fee_paralyzed"),
                      vault("e", {"kind": "cadence_trader", "params": {"k": 2}}, activate_at=10)],
                     ticks=60, reap={"period": 30}, engine={"failure_rate": 0.05})


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    out = tmp_path_factory.mktemp("trace")
    res = simulate(parse_scenario(MIXED), out_dir=out)
    return out, res


def test_export_import_round_trip(exported):
    out, res = exported
    mem = simulate(parse_scenario(MIXED)).world.store
    back = import_trace(out)
    assert back.manifest["records"] == mem.count == len(back.records)
    assert back.manifest["scenario"] == MIXED and back.manifest["seed"] == 7
    assert [r.to_json() for r in back.records] == [r.to_json() for r in mem.records]
    assert back.events == mem.events
    assert [e["kind"] for e in back.events].count("reap") == 1
    text = (out / TRACE_FILE).read_text()
    assert text.splitlines()[1:] == [x.rstrip("\n") for x in mem.lines()]


def test_every_brief_hash_resolves(exported):
    out, _ = exported
    back = import_trace(out)
    back.archive.verify()
    assert all(r.brief_hash in back.archive for r in back.records)
    first = back.archive.text(back.records[0].brief_hash)
    assert first.startswith("## SYSTEM") and "vault b" in first
    # shared sections are stored once, so the archive is far smaller than the texts
    raw_size = sum(len(back.archive.text(h).encode()) for h in {r.brief_hash for r in back.records})
    assert (out / BRIEFS_FILE).stat().st_size * 20 < raw_size


def test_truncated_last_line_is_reported(exported, tmp_path):
    out, _ = exported
    lines = (out / TRACE_FILE).read_text().splitlines(keepends=True)
    (tmp_path / TRACE_FILE).write_text("".join(lines)[:-5])
    with pytest.raises(CorruptLine) as err:
        import_trace(tmp_path, with_briefs=False)
    assert err.value.line == len(lines)


def test_garbled_line_is_reported_at_its_index(exported, tmp_path):
    out, _ = exported
    lines = (out / TRACE_FILE).read_text().splitlines(keepends=True)
    lines[17] = lines[17].replace('"tick"', '"tick', 1)
    (tmp_path / TRACE_FILE).write_text("".join(lines))
    with pytest.raises(CorruptLine) as err:
        import_trace(tmp_path, with_briefs=False)
    assert err.value.line == 18


def test_store_append_guards():
    res = simulate(parse_scenario(raw_scenario([vault("a", "fee_paralyzed")], ticks=3)))
    recs = res.world.store.records
    store = TraceStore(res.world.store.archive)
    store.append(recs[0])
    with pytest.raises(NonMonotoneId):
        store.append(recs[0])
    with pytest.raises(DanglingBriefHash):
        store.append(dataclasses.replace(recs[1], brief_hash="0" * 64))
    store.append(recs[2])
    assert [r.invocation_id for r in store.by_vault("a")] == [1, 3]
    assert store.by_tick(2) == [recs[2]]


def test_taxonomy_partitions_the_mixed_run(exported):
    out, _ = exported
    recs = import_trace(out, with_briefs=False).records
    tax = failure_taxonomy(recs)
    buckets = Counter(r.bucket for r in recs)
    assert tax["parse_errors"] == buckets["parse_error"] > 0
    assert sum(tax["guard_rejections"].values()) == buckets["rejected"] > 0
    assert tax["settlement_failures"] == buckets["failed"] > 0
    assert tax["settled"] == buckets["settled"] > 0
    assert (tax["parse_errors"] + sum(tax["guard_rejections"].values()) + tax["settlement_failures"]
            + tax["settled"] + tax["not_applicable"]) == tax["total"] == len(recs)
    # brute-force recount from the raw fields
    assert tax["parse_errors"] == sum(1 for r in recs if r.parsed["action"] == "parse_error")
    assert tax["settlement_success"] == tax["settled"] / (tax["settled"] + tax["settlement_failures"])


def test_taxonomy_special_cohorts():
    quiet = simulate(parse_scenario(raw_scenario([vault("a", "fee_paralyzed")], ticks=20))).world
    tax = failure_taxonomy(quiet.store.records)
    assert tax["not_applicable"] == tax["total"] == 20 and tax["settlement_success"] is None
    broken = simulate(parse_scenario(raw_scenario([vault("a", "schema_breaker")], ticks=20))).world
    tax = failure_taxonomy(broken.store.records)
    assert tax["parse_errors"] > 0 and tax["guard_rejections"] == {}
    assert all(r.verdict is None for r in broken.store.records if r.bucket == "parse_error")


def test_wrong_first_line_and_count(tmp_path, exported):
    out, _ = exported
    lines = (out / TRACE_FILE).read_text().splitlines(keepends=True)
    (tmp_path / TRACE_FILE).write_text("".join(lines[1:]))
    with pytest.raises(CorruptLine) as err:
        import_trace(tmp_path)
    assert err.value.line == 1
    (tmp_path / TRACE_FILE).write_text("".join(lines[:-1]))
    with pytest.raises(CorruptLine):
        import_trace(tmp_path)


def test_brief_archive_is_deterministic(exported, tmp_path):
    out, _ = exported
    simulate(parse_scenario(MIXED), out_dir=tmp_path)
    assert (tmp_path / BRIEFS_FILE).read_bytes() == (out / BRIEFS_FILE).read_bytes()
    assert sorted(p.name for p in tmp_path.iterdir()) == [BRIEFS_FILE, TRACE_FILE]
