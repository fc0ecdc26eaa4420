import csv
import json

import numpy as np
import pytest

from igafemu import cli, runner


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv(runner.OUT_DIR_ENV, str(tmp_path / "out"))
    return tmp_path / "out"


class TestForward:
    def test_zero_load(self, tmp_path, out):
        cfg = _write(tmp_path, "z.json", {"example": "beam", "setup": "simply_supported", "fe": 8,
                                          "levels": [0.0]})
        assert cli.main(["forward", "--config", cfg]) == 0
        rows = _read(out / "z_state.csv")
        assert len(rows) == 101
        assert all(float(r["ux"]) == 0 and float(r["uz"]) == 0 for r in rows)

    def test_inflation_stretch_peaks_in_soft_region(self, tmp_path, out):
        cfg = _write(tmp_path, "arc.json", {"example": "arc", "setup": "pressure", "fe": 64,
                                            "grid": 200})
        assert cli.main(["forward", "--config", cfg]) == 0
        rows = _read(out / "arc_state.csv")
        xi = np.array([float(r["xi"]) for r in rows])
        lam = np.array([float(r["stretch"]) for r in rows])
        from igafemu.synthetic import get_field
        ea = get_field("arc_ea")(xi)
        assert abs(xi[np.argmax(lam)] - xi[np.argmin(ea)]) <= 0.05

    def test_modal_ascending(self, tmp_path, out):
        cfg = _write(tmp_path, "m.json", {"example": "arc", "setup": "modal", "fe": 32,
                                          "analysis": "modal", "modes": 5,
                                          "fields": {"rho": 1e-5, "ea": {"values": [100, 120, 90]}}})
        assert cli.main(["forward", "--config", cfg]) == 0
        om = [float(r["omega"]) for r in _read(out / "m_frequencies.csv")]
        assert len(om) == 5 and om == sorted(om)

    @pytest.mark.parametrize("cfg", [{"example": "arc"},
                                     {"example": "arc", "setup": "tension", "fe": 4},
                                     {"example": "arc", "setup": "pressure", "fe": 4, "x": 1},
                                     {"example": "arc", "setup": "pressure", "fe": 4,
                                      "fields": {"ea": "missing_field"}}])
    def test_config_errors(self, tmp_path, out, cfg, capsys):
        assert cli.main(["forward", "--config", _write(tmp_path, "b.json", cfg)]) == 1
        assert "configuration error" in capsys.readouterr().err

    def test_solver_failure(self, tmp_path, out):
        cfg = _write(tmp_path, "s.json", {"example": "sheet", "setup": "tension", "fe": 4,
                                          "fields": {"ea": 1e-4}})
        assert cli.main(["forward", "--config", cfg]) == 2


class TestCaseVerbs:
    def test_generate_deterministic(self, out):
        assert cli.main(["generate", "--case", "1.10", "--seeds", "2"]) == 0
        first = (out / "generated" / "1.10" / "seed_1_tension.csv").read_text()
        assert cli.main(["generate", "--case", "1.10", "--seeds", "1:2"]) == 0
        assert (out / "generated" / "1.10" / "seed_1_tension.csv").read_text() == first

    def test_generate_clean(self, out):
        assert cli.main(["generate", "--case", "1.3"]) == 0
        assert (out / "generated" / "1.3" / "clean_tension.json").is_file()

    def test_identify_and_reaggregate(self, out):
        assert cli.main(["identify", "--case", "1.3"]) == 0
        row = _read(out / "identify_1.3.csv")[0]
        assert float(row["delta_ave_mean"]) == pytest.approx(0.99, abs=0.01)
        assert row["target_delta_ave"] == "0.99"
        res = json.loads((out / "results" / "case_1.3.json").read_text())
        again = runner.table_rows(cli.load_case("1.3"), "", res)[0]
        assert float(row["delta_ave_mean"]) == again["delta_ave_mean"]

    def test_identify_noisy_seeds(self, out):
        assert cli.main(["identify", "--case", "1.10", "--seeds", "3"]) == 0
        assert len(json.loads((out / "results" / "case_1.10.json").read_text())) == 3

    def test_identify_from_config(self, tmp_path, out):
        d = cli.load_case("1.3").to_dict()
        d["id"] = "custom"
        assert cli.main(["identify", "--config", _write(tmp_path, "c.json", d)]) == 0
        assert (out / "identify_custom.csv").is_file()

    def test_unknown_case(self, out):
        assert cli.main(["identify", "--case", "7.7"]) == 1
        assert cli.main(["generate"]) == 1

    def test_lcurve(self, out):
        assert cli.main(["lcurve", "--case", "1.2", "--alphas=-4:0:0.5"]) == 0
        rows = _read(out / "lcurve_1.2.csv")
        assert len(rows) == 9
        assert sum(int(r["corner_fd"]) for r in rows) == 1


class TestReproduce:
    def test_unknown_table(self, out):
        assert cli.main(["reproduce", "12"]) == 1

    @pytest.mark.parametrize("table,n", [("1", 11), ("8", 5)])
    def test_row_counts(self, monkeypatch, out, table, n):
        def fake(case, seeds=None, variant="", out_dir=None, tol=1e-6, alpha=None, workers=1):
            return [{"iterations": 1, "fields": {k: {"delta_ave": 0.5, "delta_max": 1.0}
                                                 for k in case.unknowns}}]

        monkeypatch.setattr(runner, "run_seeds", fake)
        assert cli.main(["reproduce", table]) == 0
        assert len(_read(out / f"table_{table}.csv")) == n

    def test_partial(self, monkeypatch, out):
        def fake(case, *a, **kw):
            raise RuntimeError("diverged")

        monkeypatch.setattr(runner, "run_seeds", fake)
        assert cli.main(["reproduce", "3"]) == 3

    def test_bad_arguments(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["nonsense"])
        assert exc.value.code == 1
