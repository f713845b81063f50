import csv
import json

import pytest

from roci.cli import main
from roci.config import dumps_config, load_config, loads_config, preset_path
from roci.errors import ConfigError

SMALL = """
output_dir = "unused"

[grid]
values = [6, 9, 12, 15, 18]

[estimand]
treatment = "dosing interval"
population = "stable patients"
variable = "2-year survival"

[margin]
rr = 0.88
alpha = 0.05

[[scenarios]]
name = "flat"
kind = "flat"
pi0 = 0.65

[[scenarios]]
name = "margin"
kind = "margin_family"
pi0 = 0.65
count = 4

[samplesize]
n_min = 1000
n_max = 1200
n_step = 50

[simulate]
n_values = [1750]

[mc]
nsim = 200
master_seed = 7
"""


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _manifest(out, cmd):
    return json.loads((out / f"manifest_{cmd}.json").read_text())


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_preset(self):
        cfg = load_config(preset_path())
        grid = cfg.arm_grid()
        assert list(grid.values) == [6, 9, 12, 15, 18] and grid.control_index == 0
        assert cfg.scenario("flat").probs == (0.65,) * 5
        assert cfg.margin_obj().rr == 0.88 and cfg.margin_obj().alpha == 0.05
        assert cfg.samplesize.n_values == list(range(1000, 2001, 50))
        assert [s.name for s in cfg.scenario_list()] == ["flat", "margin_1", "margin_2", "margin_3", "margin_4"]

    def test_missing_margin(self):
        text = SMALL.replace("[margin]\nrr = 0.88\nalpha = 0.05\n", "")
        with pytest.raises(ConfigError, match=r"margin\.rr"):
            loads_config(text)

    def test_alpha_out_of_range(self):
        with pytest.raises(ConfigError, match="margin"):
            loads_config(SMALL.replace("alpha = 0.05", "alpha = 0.6"))

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"mc\.nsims"):
            loads_config(SMALL.replace("nsim = 200", "nsims = 200"))

    def test_type_mismatch(self):
        with pytest.raises(ConfigError, match=r"mc\.nsim"):
            loads_config(SMALL.replace("nsim = 200", 'nsim = "many"'))

    def test_empty_scenario_selection(self):
        with pytest.raises(ConfigError, match=r"simulate\.scenarios"):
            loads_config(SMALL.replace("n_values = [1750]", "n_values = [1750]\nscenarios = []"))

    def test_unknown_scenario_reference(self):
        with pytest.raises(ConfigError, match=r"samplesize\.scenario"):
            loads_config(SMALL.replace("n_min = 1000", 'scenario = "steep"\nn_min = 1000'))

    @pytest.mark.parametrize("source", ["small", "preset"])
    def test_round_trip(self, source):
        cfg = loads_config(SMALL) if source == "small" else load_config(preset_path())
        again = loads_config(dumps_config(cfg))
        assert again == cfg
        assert again.to_dict() == cfg.to_dict()


class TestCli:
    def test_config_error_exit(self, tmp_path, capsys):
        path = _write(tmp_path, SMALL.replace("rr = 0.88", "rr = 1.5"))
        assert main(["simulate", str(path), "--out", str(tmp_path / "o")]) == 2
        assert "margin" in capsys.readouterr().err

    def test_preset_command(self, capsys):
        assert main(["preset"]) == 0
        assert "[margin]" in capsys.readouterr().out
        assert main(["preset", "nope"]) == 2

    def test_simulate_writes_csv_and_manifest(self, tmp_path):
        out = tmp_path / "o"
        path = _write(tmp_path, SMALL)
        assert main(["simulate", str(path), "--out", str(out), "--scenario", "flat", "--workers", "1"]) == 0
        rows = _rows(out / "simulate_flat.csv")
        assert len(rows) == 1 and rows[0]["N"] == "1750" and rows[0]["method"] == "delta"
        assert {"share_6", "share_18", "optimal_power", "type1_error"} <= set(rows[0])
        man = _manifest(out, "simulate")
        assert man["status"] == "complete" and man["outputs"] == ["simulate_flat.csv"]
        # full resolved config, defaults included
        assert man["config"]["methods"]["B"] == 1000 and man["config"]["mc"]["master_seed"] == 7

    def test_samplesize_insufficient_range(self, tmp_path, capsys):
        out = tmp_path / "o"
        path = _write(tmp_path, SMALL + "\n[performance]\ntarget_power = 0.99\n")
        assert main(["samplesize", str(path), "--out", str(out), "--workers", "1"]) == 4
        assert "not reached" in capsys.readouterr().err
        man = _manifest(out, "samplesize")
        assert man["status"] == "incomplete"
        assert "power_curve.csv" in man["outputs"]

    def test_interim_outputs(self, tmp_path, capsys):
        out = tmp_path / "o"
        path = _write(tmp_path, SMALL)
        assert main(["interim", str(path), "--out", str(out)]) == 0
        man = _manifest(out, "interim")
        assert sorted(man["outputs"]) == [
            "interim_alpha_by_p0.csv", "interim_alpha_by_p1.csv", "interim_alpha_by_power.csv", "interim_design.csv",
        ]
        design = {r["sided"]: r for r in _rows(out / "interim_design.csv")}
        assert design["two"]["n_total"] == "180" and design["one"]["n_total"] == "144"
        assert any("150" in n and "brackets" in n for n in man["notes"])
        assert len(_rows(out / "interim_alpha_by_p1.csv")) == 20

    def test_interim_null_cell_continues(self, tmp_path):
        out = tmp_path / "o"
        path = _write(tmp_path, SMALL + "\n[interim]\np1_values = [0.3, 0.5]\n")
        assert main(["interim", str(path), "--out", str(out)]) == 0
        rows = _rows(out / "interim_alpha_by_p1.csv")
        assert sum(1 for r in rows if "no effect" in r["error"]) == 4
        assert sum(1 for r in rows if r["error"] == "") == 4


class TestAnalyze:
    def _data(self, tmp_path, body):
        return _write(tmp_path, "arm_value,n,events\n" + body, "data.csv")

    def test_large_flat_dataset_recommends_longest_interval(self, tmp_path):
        out = tmp_path / "o"
        data = self._data(tmp_path, "".join(f"{v},2000,1300\n" for v in (6, 9, 12, 15, 18)))
        assert main(["analyze", str(_write(tmp_path, SMALL)), str(data), "--out", str(out)]) == 0
        rows = _rows(out / "analysis.csv")
        assert [r["selected"] for r in rows] == ["False"] * 4 + ["True"]
        assert _manifest(out, "analyze")["results"]["analysis"]["selected_arm"] == 18

    def test_malformed_row_reports_line(self, tmp_path, capsys):
        data = self._data(tmp_path, "6,350,230\n9,350,abc\n12,350,230\n15,350,230\n18,350,230\n")
        assert main(["analyze", str(_write(tmp_path, SMALL)), str(data), "--out", str(tmp_path / "o")]) == 3
        assert "data.csv:3" in capsys.readouterr().err

    def test_grid_mismatch(self, tmp_path, capsys):
        data = self._data(tmp_path, "6,350,230\n8,350,230\n12,350,230\n15,350,230\n18,350,230\n")
        assert main(["analyze", str(_write(tmp_path, SMALL)), str(data), "--out", str(tmp_path / "o")]) == 3
        assert "not on the configured grid" in capsys.readouterr().err

    def test_missing_arm(self, tmp_path):
        data = self._data(tmp_path, "6,350,230\n9,350,230\n")
        assert main(["analyze", str(_write(tmp_path, SMALL)), str(data), "--out", str(tmp_path / "o")]) == 3


class TestDeterminism:
    def _fingerprint(self, tmp_path, tag, args):
        out = tmp_path / tag
        assert main(args + ["--out", str(out)]) == 0
        return _manifest(out, args[0])["fingerprint"]

    @pytest.mark.parametrize("method", ["delta", "bootstrap"])
    def test_repeat_and_workers(self, tmp_path, method):
        text = SMALL.replace("nsim = 200", "nsim = 100") + "\n[methods]\nB = 100\n"
        path = str(_write(tmp_path, text))
        base = ["simulate", path, "--n", "1000", "--method", method, "--scenario", "margin_2"]
        a = self._fingerprint(tmp_path, "a", base + ["--workers", "1"])
        b = self._fingerprint(tmp_path, "b", base + ["--workers", "1"])
        c = self._fingerprint(tmp_path, "c", base + ["--workers", "2"])
        assert a == b == c

    def test_seed_changes_fingerprint(self, tmp_path):
        path = str(_write(tmp_path, SMALL))
        base = ["simulate", path, "--scenario", "flat", "--workers", "1"]
        assert self._fingerprint(tmp_path, "a", base) != self._fingerprint(tmp_path, "b", base + ["--seed", "8"])
