import json
import shutil
from pathlib import Path

import pytest

from worlds import record
from vaultsim.cli import main, parse_levels, sample_seed
from vaultsim.trace import TRACE_FILE, BriefArchive, manifest, write_export

MINIMAL = str(Path(__file__).parents[1] / "scenarios" / "minimal.yaml")


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def minimal_trace(tmp_path_factory):
    out = tmp_path_factory.mktemp("minimal")
    assert main(["run", "--scenario", MINIMAL, "--out", str(out)]) == 0
    return out


def synthetic_trace(path, records):
    head = manifest(0, {}, "0" * 64, "default", len(records), 1)
    write_export(path, head, [json.dumps(r.to_json()) + "\n" for r in records], BriefArchive())
    return path


def test_run_minimal_writes_ten_records(minimal_trace, capsys):
    summary = json.loads((minimal_trace / "summary.json").read_text())
    assert summary["records"] == 10 and summary["taxonomy"]["total"] == 10
    lines = (minimal_trace / TRACE_FILE).read_text().splitlines()
    assert sum(json.loads(line)["kind"] == "invocation" for line in lines) == 10


def test_run_twice_is_identical(minimal_trace, tmp_path, capsys):
    assert main(["run", "--scenario", MINIMAL, "--out", str(tmp_path)]) == 0
    for name in ("trace.jsonl", "briefs.jsonl.gz", "summary.json"):
        assert (tmp_path / name).read_bytes() == (minimal_trace / name).read_bytes()


def test_missing_scenario_is_input_error(tmp_path, capsys):
    code, out, err = run_cli(capsys, "run", "--scenario", str(tmp_path / "nope.yaml"),
                             "--out", str(tmp_path / "o"))
    assert code == 2 and out == ""
    assert json.loads(err)["error"] == "InvalidScenario"


def test_invalid_scenario_reports_path(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(Path(MINIMAL).read_text().replace("TA: 3", "TA: 9"))
    code, _, err = run_cli(capsys, "run", "--scenario", str(bad), "--out", str(tmp_path / "o"))
    assert code == 2
    assert json.loads(err)["path"] == "vaults/0/sliders/TA"


def test_sweep_with_one_level_is_insufficient(capsys):
    code, _, err = run_cli(capsys, "sweep", "--scenario", MINIMAL, "--slider", "TA",
                           "--levels", "3", "--samples", "2")
    assert code == 2 and json.loads(err)["error"] == "InsufficientCohorts"


def test_sweep_levels_and_seeds():
    assert parse_levels("1..5") == [1, 2, 3, 4, 5]
    assert parse_levels("2,4") == [2, 4]
    with pytest.raises(ValueError):
        parse_levels("0..3")
    seeds = {sample_seed(7, lv, i) for lv in range(1, 6) for i in range(60)}
    assert len(seeds) == 300
    assert sample_seed(7, 1, 0) == sample_seed(7, 1, 0) != sample_seed(8, 1, 0)


def test_sweep_writes_table(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "sweep", "--scenario", MINIMAL, "--slider", "TA",
                           "--levels", "1,5", "--samples", "2", "--out", str(tmp_path))
    assert code == 0
    assert out == (tmp_path / "gradient.csv").read_text()
    assert out.startswith("metric,window,scope,key,value,samples")


def test_replay_verify_passes(minimal_trace, capsys):
    code, out, _ = run_cli(capsys, "replay", "--trace", str(minimal_trace), "--verify")
    assert code == 0 and json.loads(out)["verify"]["verified"] is True


def test_replay_detects_edited_record(minimal_trace, tmp_path, capsys):
    copy = tmp_path / "t"
    shutil.copytree(minimal_trace, copy)
    lines = (copy / TRACE_FILE).read_text().splitlines(keepends=True)
    n = next(i for i, line in enumerate(lines) if '"id":4,' in line)
    d = json.loads(lines[n])
    d["raw"] += " "
    lines[n] = json.dumps(d, separators=(",", ":"), ensure_ascii=False) + "\n"
    (copy / TRACE_FILE).write_text("".join(lines))
    code, _, err = run_cli(capsys, "replay", "--trace", str(copy), "--verify")
    e = json.loads(err)
    assert code == 1
    assert (e["error"], e["invocation_id"], e["line"]) == ("VerificationMismatch", 4, n + 1)


def test_replay_under_fee_late_template(minimal_trace, capsys):
    code, out, _ = run_cli(capsys, "replay", "--trace", str(minimal_trace), "--template", "fee-late")
    v = json.loads(out)["variant"]
    assert code == 0 and v["invocations"] == 10 and v["aligned"] == 10
    assert v["brief_hash_divergence"] == 1.0
    assert v["structure_equality"] == 1.0
    assert v["template"] == {"base": "default", "variant": "fee-late"}


def test_replay_missing_trace(tmp_path, capsys):
    code, _, err = run_cli(capsys, "replay", "--trace", str(tmp_path / "none"), "--verify")
    assert code == 2 and json.loads(err)["error"] == "MissingTrace"


def test_report_two_sided_on_buys_only(tmp_path, capsys):
    path = synthetic_trace(tmp_path, [record(i, action="buy", ts=i * 10) for i in range(1, 21)])
    code, out, _ = run_cli(capsys, "report", "--trace", str(path), "--metrics", "two_sided")
    assert code == 0
    assert "two_sided,tiled 300s,all,*,0," in out


def test_report_cascade_on_twelve_sellers(tmp_path, capsys):
    recs = [record(i, f"v{i:02d}", tick=1, action="sell", ts=300 + i * 20, held_ticks=3)
            for i in range(1, 13)]
    path = synthetic_trace(tmp_path / "t", recs)
    code, out, _ = run_cli(capsys, "report", "--trace", str(path), "--metrics", "cascades",
                           "--plots", str(tmp_path / "plots"))
    assert code == 0 and "all,events,1,1" in out
    assert (tmp_path / "plots" / "cascades.png").exists()


def test_report_unknown_metric_lists_valid_names(minimal_trace, capsys):
    code, _, err = run_cli(capsys, "report", "--trace", str(minimal_trace), "--metrics", "alpha")
    e = json.loads(err)
    assert code == 2 and e["error"] == "UnknownMetric"
    assert "two_sided" in e["message"] and "cascades" in e["message"]


def test_report_on_corrupt_trace(minimal_trace, tmp_path, capsys):
    copy = tmp_path / "t"
    shutil.copytree(minimal_trace, copy)
    lines = (copy / TRACE_FILE).read_text().splitlines(keepends=True)
    lines[3] = lines[3][:20] + "\n"
    (copy / TRACE_FILE).write_text("".join(lines))
    code, _, err = run_cli(capsys, "report", "--trace", str(copy), "--metrics", "two_sided")
    assert code == 2 and json.loads(err)["line"] == 4
