"""Byte-level golden files for the published formats.

Regenerate after an intended format change with VAULTSIM_REGEN_GOLDENS=1.
"""
import os
from pathlib import Path

import pytest

from briefs import make_brief
from vaultsim.cli import main
from vaultsim.mandate import Priority, SliderConfig, Strategy
from vaultsim.units import UNIT

GOLDENS = Path(__file__).parent / "goldens"
MINIMAL = str(Path(__file__).parents[1] / "scenarios" / "minimal.yaml")
REGEN = bool(os.environ.get("VAULTSIM_REGEN_GOLDENS"))


def check(name: str, data: bytes):
    path = GOLDENS / name
    if REGEN:
        path.write_bytes(data)
    assert path.exists(), f"missing golden {name}"
    assert data == path.read_bytes()


def holder_brief(template):
    return make_brief(SliderConfig(4, 2, 3, 5, 1),
                      [Strategy("exit-poop", "Sell all POOP if it drops 20% from entry.", Priority.HIGH),
                       Strategy("young", "Prefer tokens younger than one hour.", Priority.MEDIUM)],
                      {"POOP": (40_000_000 * UNIT, UNIT, 380)},
                      [(396, "buy", "POOP", 0.1, None, "settled")], template=template)[1]


@pytest.mark.parametrize("template", ["default", "fee-late", "number-hardened"])
def test_rendered_brief_golden(template):
    rb = holder_brief(template)
    check(f"brief_{template}.txt", rb.text.encode() + b"\n# brief_hash " + rb.brief_hash.encode()
          + b"\n# structure_hash " + rb.structure_hash.encode() + b"\n")


def test_minimal_run_golden(tmp_path, capsys):
    assert main(["run", "--scenario", MINIMAL, "--out", str(tmp_path)]) == 0
    check("minimal_trace.jsonl", (tmp_path / "trace.jsonl").read_bytes())
    check("minimal_summary.json", (tmp_path / "summary.json").read_bytes())
    capsys.readouterr()
    assert main(["report", "--trace", str(tmp_path), "--metrics",
                 "taxonomy,two_sided,cascades,cold_start"]) == 0
    check("minimal_report.csv", capsys.readouterr().out.encode())
