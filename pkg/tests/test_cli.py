import io
import json
import subprocess
import sys

import pandas as pd
import pytest

from demonoise import ingest
from demonoise.cli import main


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    return pd.read_csv(io.StringIO(text), comment="#", keep_default_na=False)


def test_lifetable_toy(toy_csv, capsys):
    code, out, err = run(["lifetable", "--input", toy_csv, "--terminal-age", 2], capsys)
    assert code == 0, err
    assert "# variance=[1.0]" in out
    assert "# seed=0" in out
    t = table(out)
    assert list(t.columns[:9]) == ["region", "sex", "year", "age", "M_x", "l_x", "L_x", "T_x", "E_x"]
    assert t.loc[0, "E_x"] == 3.0
    assert "3.00" in out.splitlines()[-3]


def test_missing_terminal_deaths_names_region(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text(
        "region,sex,age,year,measure,value\n"
        "ZZ9,T,0,2023,population,100\nZZ9,T,1+,2023,population,50\n"
        "ZZ9,T,0,2023,deaths,2\nZZ9,T,1+,2023,deaths,0\n"
        "OK1,T,0,2023,population,100\nOK1,T,1+,2023,population,50\n"
        "OK1,T,0,2023,deaths,2\nOK1,T,1+,2023,deaths,9\n",
        encoding="utf-8",
    )
    out_path = tmp_path / "lt.csv"
    code, _, err = run(["lifetable", "--input", path, "--terminal-age", 1, "--out", out_path], capsys)
    assert code != 0
    listing = json.loads(err)
    assert listing["errors"][0]["error"] == "TerminalRateZero"
    assert listing["errors"][0]["region"] == "ZZ9"
    assert "ZZ9" in listing["errors"][0]["message"]
    assert json.loads((tmp_path / "lt.csv.errors.json").read_text()) == listing
    # the healthy region is still written
    assert set(table(out_path.read_text())["region"]) == {"OK1"}


def test_uncertainty_single_death_row(tmp_path, capsys):
    path = tmp_path / "one.csv"
    path.write_text(
        "region,sex,age,year,measure,value\n"
        "XX1,T,0,2023,population,1000\nXX1,T,1+,2023,population,500\n"
        "XX1,T,0,2023,deaths,1\nXX1,T,1+,2023,deaths,50\n",
        encoding="utf-8",
    )
    code, out, err = run(["uncertainty", "--input", path, "--terminal-age", 1, "--indicator", "mx"], capsys)
    assert code == 0, err
    t = table(out)
    row = t[(t["indicator"] == "mx") & (t["age"].astype(str) == "0")].iloc[0]
    assert row["combined_rel"] == 1.41421
    assert row["noise_rel"] == 1


def test_uncertainty_sweep_and_mode(extract, capsys):
    argv = ["uncertainty", "--input", *extract["paths"], "--region", "AA11", "--year", 2023,
            "--variance", "1,5", "--mode", "noise"]
    code, out, err = run(argv, capsys)
    assert code == 0, err
    t = table(out)
    assert set(t["variance"]) == {1, 5}
    assert set(t["indicator"]) == {"fx", "tfr", "mx", "ex"}
    assert "stat_abs" not in t.columns
    assert "noise_rel" in t.columns
    ex = t[(t["indicator"] == "ex") & (t["age"].astype(str) == "0")]
    assert len(ex) == 6  # 3 sexes x 2 variances


def test_uncertainty_json(extract, capsys):
    argv = ["uncertainty", "--input", *extract["paths"], "--region", "AA12", "--sex", "F",
            "--year", 2023, "--indicator", "ex", "--format", "json", "--exact", "--zero-fix"]
    code, out, err = run(argv, capsys)
    assert code == 0, err
    payload = json.loads(out)
    assert payload["config"]["mode"] == "exact"
    assert payload["config"]["zero_fix"] is True
    assert len(payload["rows"]) == 86


def test_figure1_contour(capsys):
    code, out, _ = run(["figures", "--which", 1], capsys)
    assert code == 0
    t = table(out)
    row = t[(abs(t["w_x"] - 1e4) < 1e-6) & (abs(t["f_x"] - 1e-4) < 1e-12)].iloc[0]
    assert row["noise_rel"] == pytest.approx(1.0, rel=1e-5)


def test_figure2_columns(capsys):
    code, out, _ = run(["figures", "--which", 2, "--variance", 4], capsys)
    assert code == 0
    assert {"B_x", "M_x", "D_x", "M_x_at_D1"} <= set(table(out).columns)


def test_figure4_analytic(capsys):
    code, out, _ = run(["figures", "--which", 4, "--variance", "1,2,5"], capsys)
    assert code == 0
    t = table(out)
    row = t[(t["variance"] == 1) & (t["count"] == 1)].iloc[0]
    assert row["admixture"] == 0.414214


def test_figure3_and_table1(extract, capsys):
    code, out, err = run(["figures", "--which", 3, "--input", *extract["paths"], "--year", 2023], capsys)
    assert code == 0, err
    t = table(out)
    assert set(t["age"]) == {0, 30, 80}
    assert set(t["region"]) == {"AA11", "AA12"}
    code, out, err = run(["figures", "--which", "table1", "--input", *extract["paths"],
                          "--region", "AA11,AA12", "--year", 2023], capsys)
    assert code == 0, err
    t = table(out)
    assert len(t) == 6
    assert "admixture_V5" in t.columns


def test_simulate_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        code, _, err = run(["simulate", "--synthetic", 1e5, "--replicates", 100, "--seed", 7, "--out", path], capsys)
        assert code == 0, err
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert "# variance=[2.0]" in text
    assert "# js=2" in text
    assert "# zero_fix=true" in text


def test_simulate_defaults_pass(capsys):
    code, out, err = run(["simulate", "--synthetic", 1e5, "--format", "json"], capsys)
    assert code == 0, err
    report = json.loads(out)["reports"][0]
    assert report["config"]["replicates"] == 361
    rel = [abs(r["rel_diff"]) for r in report["ages"]]
    assert max(rel) < 0.10


def test_simulate_zero_variance(capsys):
    code, _, err = run(["simulate", "--synthetic", 1e4, "--replicates", 2, "--variance", 0], capsys)
    assert code != 0
    assert json.loads(err)["errors"][0]["error"] == "ReplicateDegenerate"


def test_simulate_writes_ptable(tmp_path, capsys):
    ptable = tmp_path / "ptable.csv"
    code, _, _ = run(["simulate", "--synthetic", 1e5, "--replicates", 50, "--ptable-out", ptable], capsys)
    assert code == 0
    assert ptable.read_text().startswith("row_class,noise_value,probability\n")


def test_simulate_from_data(extract, capsys):
    argv = ["simulate", "--input", *extract["paths"], "--region", "AA12", "--sex", "T", "--year", 2023]
    code, out, err = run(argv, capsys)
    assert code == 0, err
    assert set(table(out)["region"]) == {"AA12"}


def test_config_file_and_override(tmp_path, toy_csv, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"input": [str(toy_csv)], "terminal_age": 2, "variance": "5",
                               "indicator": "ex", "vintage": "2024-03"}))
    code, out, _ = run(["uncertainty", "--config", cfg], capsys)
    assert code == 0
    assert "# variance=[5.0]" in out
    assert '# vintage="2024-03"' in out
    code, out, _ = run(["uncertainty", "--config", cfg, "--variance", "2"], capsys)
    assert code == 0
    assert "# variance=[2.0]" in out


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"varience": 2}))
    with pytest.raises(SystemExit):
        main(["uncertainty", "--config", str(cfg)])


def test_ingest_command(extract, tmp_path, capsys):
    out_path = tmp_path / "canon.csv"
    code, _, _ = run(["ingest", "--input", *extract["paths"], "--out", out_path, "--vintage", "fixture"], capsys)
    assert code == 0
    assert out_path.read_text().startswith("# command=\"ingest\"")
    back = ingest.read_canonical_csv(out_path)
    pd.testing.assert_frame_equal(back, ingest.load_inputs(extract["paths"]))


def test_poisson_check(extract, capsys):
    code, out, err = run(["poisson-check", "--input", *extract["paths"]], capsys)
    assert code == 0, err
    t = table(out)
    assert set(t["measure"]) == {"deaths", "births"}
    assert (t["n_years"] == 5).all()


def test_poisson_check_too_few_years(toy_csv, capsys):
    code, _, err = run(["poisson-check", "--input", toy_csv], capsys)
    assert code != 0
    assert json.loads(err)["errors"][0]["error"] == "InsufficientYears"


def test_module_entry_point(toy_csv):
    proc = subprocess.run([sys.executable, "-m", "demonoise", "lifetable", "--input", str(toy_csv),
                           "--terminal-age", "2"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert "3.00" in proc.stdout
