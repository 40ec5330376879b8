from __future__ import annotations

import csv
import os
from pathlib import Path

import pytest

from spraycoal import __version__, cli
from spraycoal.errors import FlowReversalError


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_writes_diagnostics_and_meta(tmp_path, capsys):
    code, out, _ = run(["run", "--case", "mono_lin_nocoal", "--method", "dqmom", "--N", "3",
                        "--output", str(tmp_path / "d")], capsys)
    assert code == 0
    with open(tmp_path / "d" / "diagnostics.csv") as fh:
        assert next(csv.reader(fh)) == ["z_cm", "m0_per_cm3", "m1_mg_per_cm3", "ud_m_per_s", "r32_um"]
    meta = (tmp_path / "d" / "meta").read_text()
    assert f"version = {__version__}" in meta and "N = 3" in meta and "config_case = mono_lin_nocoal" in meta
    assert "wrote" in out


def test_default_output_lands_under_the_output_root(capsys):
    code, _, _ = run(["run", "--case", "mono_lin_nocoal", "--method", "multifluid"], capsys)
    assert code == 0
    assert (Path(os.environ["SPRAYCOAL_OUTPUT_ROOT"]) / "mono_lin_nocoal_multifluid" / "diagnostics.csv").exists()


def test_config_file_with_overrides(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text(f"[run]\ncase = mono_lin_coal\nmethod = dqmom\noutput = {tmp_path / 'o'}\n"
                   "stations_cm = 16\n\n[dqmom]\nN = 2\n")
    code, _, _ = run(["run", "--config", str(ini), "--set", "dqmom.rtol=1e-5"], capsys)
    assert code == 0
    meta = (tmp_path / "o" / "meta").read_text()
    assert "rtol = 1e-05" in meta and "N = 2" in meta
    assert (tmp_path / "o" / "snapshot_z16.00cm.csv").exists()


@pytest.mark.parametrize("argv, needle", [
    (["run", "--case", "mono_lin_nocoal", "--method", "dqmom", "--set", "dqmom.bogus=1"], "'bogus'"),
    (["run", "--case", "mono_lin_nocoal", "--method", "dqmom", "--set", "dqmom.N=two"], "'N'"),
    (["run", "--case", "mono_lin_nocoal", "--method", "dqmom", "--set", "plot.dpi=3"], "[plot]"),
    (["run", "--case", "mono_lin_nocoal", "--method", "lagrangian", "--N", "3"], "--N"),
    (["run", "--case", "mono_lin_nocoal", "--method", "dqmom", "--seed", "3"], "--seed"),
    (["run", "--method", "dqmom"], "'case'"),
    (["run", "--case", "octo_lin_coal", "--method", "dqmom"], "octo"),
    (["run", "--case", "mono_lin_nocoal", "--method", "dqmom", "--set", "nodots"], "--set"),
    (["run", "--config", "/nonexistent/run.ini"], "cannot read"),
    (["sweep", "--Ns", "2,x"], "--Ns"),
])
def test_configuration_errors_exit_2(argv, needle, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2
    assert needle in err


def test_solver_failure_exits_3(monkeypatch, capsys):
    def boom(*a, **k):
        raise FlowReversalError("velocity crossed zero at z=0.2")
    monkeypatch.setattr(cli, "run_case", boom)
    code, _, err = run(["run", "--case", "mono_lin_nocoal", "--method", "dqmom"], capsys)
    assert code == 3
    assert "FlowReversalError" in err


def test_validate_needs_a_seed(capsys):
    code, _, err = run(["validate"], capsys)
    assert code == 2 and "--seed" in err


def test_validate_without_parcels(capsys):
    code, out, _ = run(["validate", "--no-lagrangian"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 4 and all(line.startswith("PASS") for line in lines)


def test_validate_with_parcels(capsys):
    code, out, _ = run(["validate", "--seed", "11"], capsys)
    assert code == 0
    assert out.count("PASS") == 6 and "FAIL" not in out


def test_validate_reports_failures(monkeypatch, capsys):
    import spraycoal.checks as checks
    monkeypatch.setattr(checks, "all_checks", lambda seed: [("always fails", lambda rng: (False, "nope"))])
    code, out, _ = run(["validate", "--no-lagrangian"], capsys)
    assert code == 1 and out.startswith("FAIL")


def test_compare_writes_report(tmp_path, capsys):
    for method, n in (("dqmom", "2"), ("multifluid", "20")):
        assert run(["run", "--case", "mono_lin_coal", "--method", method, "--N", n,
                    "--output", str(tmp_path / method)], capsys)[0] == 0
    code, out, _ = run(["compare", str(tmp_path / "dqmom"), str(tmp_path / "multifluid"),
                        "--output", str(tmp_path / "cmp" / "report.csv")], capsys)
    assert code == 0
    with open(tmp_path / "cmp" / "report.csv") as fh:
        header = next(csv.reader(fh))
    assert header[:5] == ["z_cm", "m1_ref", "ud_ref", "band_m1", "band_ud"]
    assert "multifluid_norm_m1" in header and "multifluid_rel_ud" in header
    assert (tmp_path / "cmp" / "report_summary.csv").exists()
    assert "multifluid: max m1 err" in out


def test_sweep_writes_one_directory_per_node_count(tmp_path, capsys):
    code, _, _ = run(["sweep", "--case", "mono_lin_coal", "--Ns", "2,3", "--output", str(tmp_path / "s")], capsys)
    assert code == 0
    assert (tmp_path / "s" / "N2" / "diagnostics.csv").exists()
    assert (tmp_path / "s" / "N3" / "diagnostics.csv").exists()


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out
