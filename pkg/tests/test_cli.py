import csv
import json
import math
from io import StringIO

import pytest

from conftest import FIXTURES, SIGMA2
from eepa.cli import main
from eepa.montecarlo import RECORD_COLUMNS


def run(*argv):
    out = StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def run_json(*argv):
    code, text = run(*argv, "--format", "json")
    assert code == 0, text
    return json.loads(text)


def summary_value(text, key):
    for line in text.splitlines():
        parts = line.split()
        if parts and parts[0] == key:
            return parts[1]
    raise KeyError(key)


class TestAllocate:
    def test_equal_weak_users(self):
        doc = run_json("allocate", "--units", "db", "--gains=-112,-112", "--outage-threshold", "10")
        expected = 10 * SIGMA2 * 10**11.2
        assert expected == pytest.approx(7.92447e-2, rel=1e-5)
        for user in doc["users"]:
            assert user["p_star"] == pytest.approx(expected, rel=1e-12)
            assert user["power"] == user["p_star"]
        assert doc["saturated"] is False

    def test_table_output(self):
        code, text = run("allocate", "--units", "db", "--gains=-112,-112", "--outage-threshold", "10")
        assert code == 0
        assert summary_value(text, "saturated") == "False"
        assert "0.0792447" in text

    def test_zero_gain(self):
        doc = run_json("allocate", "--gains", "0")
        assert doc["users"][0]["power"] == 1.0
        assert doc["cell_utility"] == 0.0

    def test_three_user_saturated_trace(self):
        # gains chosen so the demands are (0.2, 0.3, 0.6) with a = 6
        gains = [SIGMA2 * 6 / d for d in (0.2, 0.3, 0.6)]
        doc = run_json("allocate", "--gains", *map(repr, gains))
        assert [u["power"] for u in doc["users"]] == pytest.approx([0.2, 0.3, 0.5], abs=1e-12)
        assert doc["saturated"] is True
        assert doc["served_set"] == [0, 1, 2]

    def test_reported_gains(self):
        doc = run_json("allocate", "--gains", "1e-12", "2e-12", "--reported", "2e-12", "4e-12")
        assert [u["power"] for u in doc["users"]] == pytest.approx([0.15, 0.075], rel=1e-12)
        assert doc["cell_utility_believed"] > doc["cell_utility_actual"]
        assert all("utility_believed" in u for u in doc["users"])

    def test_reported_length_mismatch(self):
        assert run("allocate", "--gains", "1e-12", "2e-12", "--reported", "2e-12")[0] == 2

    def test_malformed_list(self):
        assert run("allocate", "--gains", "1e-12,abc")[0] == 2

    def test_missing_gains(self):
        assert run("allocate")[0] == 2

    def test_invalid_gain(self):
        assert run("allocate", "--gains", "-1e-12")[0] == 2


class TestUnits:
    @pytest.mark.parametrize("units, values", [("db", ["-112.37", "-120.1"]), ("linear", ["6.31e-12", "1.2345678901234567e-12"])])
    def test_round_trip(self, units, values):
        doc = run_json("allocate", "--units", units, "--gains=" + ",".join(values))
        assert [u["gain"] for u in doc["users"]] == [float(v) for v in values]
        code, text = run("allocate", "--units", units, "--gains=" + ",".join(values))
        for v in values:
            assert repr(float(v)) in text

    def test_db_and_linear_agree(self):
        a = run_json("allocate", "--units", "db", "--gains=-110,-113")
        b = run_json("allocate", "--gains", repr(10**-11.0), repr(10**-11.3))
        assert [u["power"] for u in a["users"]] == pytest.approx([u["power"] for u in b["users"]], rel=1e-12)


class TestConfig:
    def test_unknown_field(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"gains": [1e-12], "colour": "red"}))
        assert run("allocate", "--config", str(path))[0] == 2

    def test_flags_override_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"gains": [1e-12], "outage_threshold": 1.0}))
        doc = run_json("allocate", "--config", str(path))
        assert doc["users"][0]["p_star"] == pytest.approx(0.05, rel=1e-12)
        doc = run_json("allocate", "--config", str(path), "--outage-threshold", "2")
        assert doc["users"][0]["p_star"] == pytest.approx(0.1, rel=1e-12)

    def test_threshold_from_rate(self):
        doc = run_json("allocate", "--gains", "1e-12", "--rate", "2", "--bandwidth", "1")
        assert doc["users"][0]["p_star"] == pytest.approx(0.15, rel=1e-12)

    def test_unreadable_config(self, tmp_path):
        assert run("allocate", "--config", str(tmp_path / "missing.json"))[0] == 2

    def test_bad_units(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"units": "dbm"}))
        assert run("nash", "--config", str(path), "--users", "2")[0] == 2


class TestOracle:
    def test_unsaturated_gap(self):
        doc = run_json("oracle", "--gains", "1e-11", "2e-11", "--grid", "41")
        assert abs(doc["relative_gap"]) <= 1e-4

    def test_regression_fixture(self):
        doc = run_json("oracle", "--config", str(FIXTURES / "worst_case_k3.json"))
        assert doc["relative_gap"] > 0
        assert doc["relative_gap"] == pytest.approx(0.153144, abs=1e-5)
        assert doc["oracle_slope_spread"] < doc["algorithm_slope_spread"]

    def test_single_user(self):
        doc = run_json("oracle", "--gains", "3e-12", "--grid", "21")
        assert abs(doc["relative_gap"]) <= 1e-9

    def test_too_many_users(self):
        assert run("oracle", "--gains", *["1e-12"] * 5)[0] == 3

    def test_table(self):
        code, text = run("oracle", "--config", str(FIXTURES / "worst_case_k3.json"))
        assert code == 0 and "relative_gap" in text


class TestNash:
    def test_two_users(self):
        doc = run_json("nash", "--users", "2", "--outage-threshold", "10")
        assert doc["g_star_db"] == pytest.approx(-120.0, abs=1e-12)
        assert doc["uniform_power"] == 0.5
        assert doc["audit_max_improvement"] <= 1e-9

    def test_gains_at_threshold(self):
        doc = run_json("nash", "--gains", "1e-12", "1e-12", "--outage-threshold", "10")
        assert doc["efficiency_ratio"] == pytest.approx(1.0, rel=1e-12)
        assert doc["actual_cell_utility"] == pytest.approx(doc["believed_cell_utility"], rel=1e-12)

    def test_snr_columns(self):
        doc = run_json("nash", "--units", "db", "--gains=-112,-115,-118")
        assert doc["player_snrs"][0] == pytest.approx(10**-11.2 / (3 * SIGMA2), rel=1e-12)
        assert doc["audit_max_improvement"] <= 1e-9

    def test_infeasible(self):
        assert run("nash", "--users", "4", "--max-report", "1e-13")[0] == 4

    def test_needs_users(self):
        assert run("nash")[0] == 2

    def test_table(self):
        code, text = run("nash", "--units", "db", "--gains=-112,-115")
        assert code == 0
        assert float(summary_value(text, "uniform_power")) == 0.5


class TestSimulate:
    ARGS = ("--user-counts", "1,2,5", "--trials", "200")

    def test_csv_layout(self, tmp_path):
        path = tmp_path / "out.csv"
        code, text = run("simulate", "--out", str(path), *self.ARGS)
        assert code == 0
        raw = path.read_bytes()
        assert raw.count(b"\r\n") == 7
        rows = list(csv.reader(StringIO(raw.decode())))
        assert rows[0] == list(RECORD_COLUMNS)
        assert [(r[0], r[1]) for r in rows[1:]] == [(k, p) for k in ("1", "2", "5") for p in ("0.1", "1.0")]
        for r in rows[1:]:
            k, p = int(r[0]), float(r[1])
            assert float(r[4]) == k**2 / p * math.exp(-1)
            assert r[7:] == ["200", "42"]
        assert "[PASS] truthful EE" in text

    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run("simulate", "--out", str(a), *self.ARGS, "--workers", "1")[0] == 0
        assert run("simulate", "--out", str(b), *self.ARGS, "--workers", "3")[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_in_output(self, tmp_path):
        path = tmp_path / "out.csv"
        doc = run_json("simulate", "--out", str(path), *self.ARGS, "--seed", "9")
        assert doc["seed"] == 9
        assert all(r["seed"] == 9 for r in doc["records"])

    def test_db_mean_gain(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run("simulate", "--out", str(a), *self.ARGS)
        run("simulate", "--out", str(b), *self.ARGS, "--units", "db", "--mean-gain=-112")
        assert a.read_bytes() == b.read_bytes()

    def test_skipped_rows_blank(self, tmp_path):
        path = tmp_path / "out.csv"
        code, text = run("simulate", "--out", str(path), *self.ARGS, "--max-report", "1e-12")
        assert code == 0
        rows = list(csv.reader(StringIO(path.read_text())))
        skipped = [r for r in rows[1:] if r[3] == ""]
        assert skipped and all(r[4] == r[6] == "" and r[2] != "" for r in skipped)
        assert "skipped" in text

    def test_unwritable(self, tmp_path):
        assert run("simulate", "--out", str(tmp_path / "nope" / "out.csv"), *self.ARGS)[0] == 5

    def test_requires_out(self):
        assert run("simulate")[0] == 2
