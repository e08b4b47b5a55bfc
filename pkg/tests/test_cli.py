"""CLI subcommands, output formats, and exit codes."""

import json

import pytest

from nearfield.cli import cli
from nearfield.harness import CSV_HEADER

DESK = "scenarios/tab2_desk.json"
SINGLE = "scenarios/single_path.json"


class TestExitCodes:
    def test_missing_subcommand_is_usage_error(self, capsys):
        assert cli([]) == 1

    def test_unknown_flag_is_usage_error(self, capsys):
        assert cli(["sweep", "--config", DESK, "--bogus"]) == 1

    def test_missing_config_names_path(self, capsys):
        assert cli(["validate", "--config", "does/not/exist.json"]) == 2
        err = capsys.readouterr().err
        assert "does/not/exist.json" in err

    def test_invalid_scenario_is_config_error(self, tmp_path, capsys):
        p = tmp_path / "broken.json"
        p.write_text(json.dumps({"array": {"num_antennas": 64}}))
        assert cli(["validate", "--config", str(p)]) == 2
        assert "wavelength" in capsys.readouterr().err


class TestEstimate:
    def test_json_payload(self, tmp_path):
        out = tmp_path / "est.json"
        assert cli(["estimate", "--config", SINGLE, "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert "fusion" in payload and "per_bs" in payload
        assert payload["per_bs"][0]["nmse_db_step1"] < -10
        path = payload["per_bs"][0]["paths"][0]
        assert set(path) == {"theta", "r", "g", "phi", "cov"}
        assert len(path["cov"]) == 16


class TestSweep:
    def test_csv_contract(self, tmp_path):
        out = tmp_path / "sweep.csv"
        assert cli(["sweep", "--config", SINGLE, "--trials", "2",
                    "--snr-db", "10,20", "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == CSV_HEADER
        assert len(lines) == 1 + 2 * 2  # header + points*trials (1 BS)

    def test_seed_override_changes_rows(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        cli(["sweep", "--config", SINGLE, "--trials", "1",
             "--snr-db", "10", "--out", str(a), "--seed", "1"])
        cli(["sweep", "--config", SINGLE, "--trials", "1",
             "--snr-db", "10", "--out", str(b), "--seed", "2"])
        assert a.read_text() != b.read_text()


class TestCrlb:
    def test_table_shape(self, tmp_path):
        out = tmp_path / "crlb.csv"
        assert cli(["crlb", "--config", DESK, "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "bs,path,param,crlb,sqrt_crlb"
        # 4 BSs x 2 paths x 4 params
        assert len(lines) == 1 + 4 * 2 * 4
        for ln in lines[1:]:
            _, _, param, v, sv = ln.split(",")
            assert param in {"theta", "r", "g", "phi"}
            assert float(sv) == pytest.approx(max(float(v), 0.0) ** 0.5,
                                              rel=1e-9)


class TestCodebook:
    def test_dump(self, tmp_path, capsys):
        out = tmp_path / "cb.csv"
        assert cli(["codebook", "--config", SINGLE, "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "n_theta,n_r,cos_theta,theta_rad,r_m"
        assert len(lines) == 1 + 1083
        assert "1083 codewords" in capsys.readouterr().err


class TestValidate:
    def test_bundled_scenarios_pass(self, capsys):
        assert cli(["validate", "--config", DESK]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "PASS" in out
