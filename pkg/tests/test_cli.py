from __future__ import annotations

import hashlib
import json

import pytest

from _helpers import edit_config
from scmtransmit.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    assert main(["run", "--out", str(out)]) == EXIT_OK
    return out


def test_validate_ok(capsys):
    assert main(["validate"]) == EXIT_OK
    assert "config OK" in capsys.readouterr().out


def test_invalid_config_exit_code_and_no_output(fixture_dir, tmp_path, capsys):
    cfg = edit_config(fixture_dir / "config.yaml", lambda r: r["scm"][0]["donors"].append("BIH"))
    out = tmp_path / "never"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_INVALID
    assert "disjoint-donor rule" in capsys.readouterr().err
    assert not out.exists()


def test_manifest_lists_every_file(run_dir):
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["failures"] == {}
    listed = {f["path"]: f for f in manifest["files"]}
    on_disk = {p.relative_to(run_dir).as_posix() for p in run_dir.rglob("*") if p.is_file()} - {"manifest.json"}
    assert set(listed) == on_disk
    assert list(listed) == sorted(listed)
    for path, entry in listed.items():
        data = (run_dir / path).read_bytes()
        assert entry["sha256"] == hashlib.sha256(data).hexdigest()
        assert entry["bytes"] == len(data)


def test_expected_outputs(run_dir):
    for rel in ("stage1/tables/BALTICS_weights.csv", "stage1/plots/transfer_WB3_s050.csv",
                "stage2/tables/delta_g.csv", "stage2/plots/fig9_delta_g.csv", "report.md"):
        assert (run_dir / rel).exists(), rel
    header = (run_dir / "stage1/tables/BALTICS_diagnostics.csv").read_text().splitlines()[0]
    assert "pre_RMSPE" in header and "ratio_0406" in header
    report = (run_dir / "report.md").read_text()
    assert "scenarios, not causal estimates" in report


def test_empty_battery_table_is_header_only(run_dir):
    lines = (run_dir / "stage1/tables/WB3_placebo_time.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("fake")
    assert json.loads((run_dir / "stage1/tables/WB3_placebo_time.json").read_text())["rows"] == []


def test_tables_four_decimals(run_dir):
    body = (run_dir / "stage1/tables/BALTICS_weights.csv").read_text().splitlines()[1:]
    for line in body:
        num = line.split(",")[-1]
        assert len(num.split(".")[1]) == 4


def test_rerun_is_byte_identical(run_dir, tmp_path):
    out = tmp_path / "again"
    assert main(["run", "--out", str(out)]) == EXIT_OK
    assert (out / "manifest.json").read_bytes() == (run_dir / "manifest.json").read_bytes()


def test_stage_verbs_and_report(tmp_path, run_dir, capsys):
    out = tmp_path / "staged"
    assert main(["stage2", "--out", str(out)]) == EXIT_INVALID
    assert main(["stage1", "--out", str(out)]) == EXIT_OK
    assert not (out / "stage2").exists()
    assert main(["stage2", "--out", str(out)]) == EXIT_OK
    assert (out / "manifest.json").read_bytes() == (run_dir / "manifest.json").read_bytes()
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == EXIT_OK
    assert "# Run report" in capsys.readouterr().out


def test_refuses_foreign_output_dir(tmp_path):
    out = tmp_path / "busy"
    out.mkdir()
    (out / "thesis.tex").write_text("x")
    assert main(["run", "--out", str(out)]) == EXIT_INVALID
    assert (out / "thesis.tex").exists()


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--out", str(blocker)]) in (EXIT_INVALID, EXIT_FAILED)


def test_bad_workers():
    assert main(["validate", "--workers", "0"]) == EXIT_INVALID


def test_fixture_verb(tmp_path, capsys):
    assert main(["fixture", "--out", str(tmp_path / "fx")]) == EXIT_OK
    assert main(["validate", "--config", str(tmp_path / "fx" / "config.yaml")]) == EXIT_OK
