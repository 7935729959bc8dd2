"""CLI contract tests: CSV schema, subcommands, presets, exit codes."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lowrank_expint.cli import CSV_HEADER, PRESETS, RunRecord, main, write_rows


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------- records


def test_csv_header_is_pinned():
    assert CSV_HEADER == (
        "experiment,method,n,rank,tol,h,variant,k,c2,seed,error_rel,order,runtime_s"
    )


def test_record_line_formatting():
    rec = RunRecord(experiment="x", method="m", n=32, h=0.001,
                    error_rel=1.0 / 3.0, seed=7)
    assert rec.to_line() == "x,m,32,,,0.001,,,,7,0.33333333333333331,,"


def test_record_17_significant_digits():
    rec = RunRecord(experiment="x", error_rel=np.pi)
    line = rec.to_line()
    assert "3.1415926535897931" in line


def test_record_rejects_nonfinite_and_negative():
    with pytest.raises(ValueError):
        RunRecord(experiment="x", error_rel=float("nan"))
    with pytest.raises(ValueError):
        RunRecord(experiment="x", error_rel=-1.0)
    with pytest.raises(ValueError):
        RunRecord(experiment="x", h=float("inf"))


def test_write_rows_appends_without_duplicate_header(tmp_path):
    out = tmp_path / "r.csv"
    write_rows(out, [RunRecord(experiment="a", error_rel=1.0)])
    write_rows(out, [RunRecord(experiment="b", error_rel=2.0)])
    lines = out.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 3
    assert sum(1 for ln in lines if ln == CSV_HEADER) == 1


# -------------------------------------------------------------- subcommands


def test_convergence_writes_rows_order_row_and_meta(tmp_path):
    out = tmp_path / "conv.csv"
    code = main([
        "convergence", "--problem", "lyapunov-timedep", "--n", "24",
        "--rank", "8", "--h", "0.125", "--h", "0.0625", "--h", "0.03125",
        "--krylov", "extended", "--k", "2", "--out", str(out),
    ])
    assert code == 0
    rows = read_rows(out)
    assert len(rows) == 4
    for row in rows[:3]:
        assert row["experiment"] == "lyapunov-timedep"
        assert row["method"] == "projected_exp_euler"
        assert float(row["error_rel"]) > 0
        assert row["order"] == ""
    order_row = rows[3]
    assert order_row["h"] == "" and order_row["error_rel"] == ""
    assert abs(float(order_row["order"]) - 1.0) <= 0.3

    meta = json.loads(out.with_suffix(".meta.json").read_text())
    assert meta["subcommand"] == "convergence"
    assert meta["resolved"]["problem"] == "lyapunov-timedep"
    assert meta["resolved"]["rank"] == 8
    assert abs(meta["observed_order"] - float(order_row["order"])) < 1e-15


def test_convergence_single_h_has_no_order_row(tmp_path):
    out = tmp_path / "conv1.csv"
    code = main([
        "convergence", "--problem", "lyapunov-const", "--n", "24",
        "--rank", "5", "--h", "0.25", "--out", str(out),
    ])
    assert code == 0
    rows = read_rows(out)
    assert len(rows) == 1
    assert rows[0]["order"] == ""


def test_mesh_rows_and_stability(tmp_path):
    out = tmp_path / "mesh.csv"
    code = main([
        "mesh", "--problem", "lyapunov-timedep", "--n", "24", "--n", "32",
        "--n", "48", "--rank", "8", "--h", "0.01", "--krylov", "extended",
        "--k", "2", "--out", str(out),
    ])
    assert code == 0
    rows = read_rows(out)
    assert [int(r["n"]) for r in rows] == [24, 32, 48]
    errs = [float(r["error_rel"]) for r in rows]
    assert max(errs) <= 3.0 * min(errs)


def test_krylov_study_rows_bounds_and_orderings(tmp_path):
    out = tmp_path / "ks.csv"
    code = main([
        "krylov-study", "--problem", "riccati", "--n", "48", "--rank", "1",
        "--t-eval", "0.01", "--k-max", "5", "--out", str(out),
    ])
    assert code == 0
    rows = read_rows(out)
    by = {}
    for row in rows:
        key = row["variant"] or row["method"]
        by.setdefault(key, {})[int(row["k"])] = float(row["error_rel"])
    assert set(by) == {"polynomial", "extended", "rational", "bound_order1"}
    for key in by:
        assert set(by[key]) == {1, 2, 3, 4, 5}
    # polynomial and rational share the k=1 space (the orthonormalized seed);
    # the extended space already contains the inverse block at k=1
    assert by["polynomial"][1] == pytest.approx(by["rational"][1], rel=1e-9)
    assert by["extended"][1] <= by["polynomial"][1]
    # richer spaces do better at the same k
    assert by["extended"][5] <= by["polynomial"][5]
    assert by["rational"][5] <= by["polynomial"][5]
    # bounds decay geometrically in k and stay positive
    bounds = [by["bound_order1"][k] for k in range(1, 6)]
    assert all(b > 0 for b in bounds)
    assert all(bounds[i + 1] < bounds[i] for i in range(4))


def test_adaptive_series_and_rank_stats(tmp_path):
    out = tmp_path / "ad.csv"
    code = main([
        "adaptive", "--problem", "lyapunov-five-phase", "--n", "32",
        "--tol", "1e-2", "--tol", "1e-4", "--h", "0.05", "--r-max", "24",
        "--method", "projected_exp_runge", "--krylov", "extended", "--k", "1",
        "--out", str(out),
    ])
    assert code == 0
    rows = read_rows(out)
    assert len(rows) == 2
    assert [float(r["tol"]) for r in rows] == [1e-2, 1e-4]
    assert all(r["rank"] == "" for r in rows)

    series = read_rows(tmp_path / "ad_series.csv")
    assert set(series[0]) == {"experiment", "tol", "t", "rank", "error_rel"}
    tols = {float(r["tol"]) for r in series}
    assert tols == {1e-2, 1e-4}
    per_tol = {t: [r for r in series if float(r["tol"]) == t] for t in tols}
    for t, srows in per_tol.items():
        assert len(srows) <= 1000
        assert all(int(r["rank"]) >= 1 for r in srows)
        # tighter tolerance keeps more singular values
    max_loose = max(int(r["rank"]) for r in per_tol[1e-2])
    max_tight = max(int(r["rank"]) for r in per_tol[1e-4])
    assert max_tight >= max_loose

    meta = json.loads(out.with_suffix(".meta.json").read_text())
    stats = meta["rank_stats"]
    assert len(stats) == 2
    for entry in stats.values():
        assert entry["rank_min"] >= 1
        assert entry["rank_max"] >= entry["rank_min"]
        assert entry["rank_min"] <= entry["rank_mean"] <= entry["rank_max"]


def test_adaptive_loose_tolerance_stays_at_minimum_rank(tmp_path):
    out = tmp_path / "ad05.csv"
    code = main([
        "adaptive", "--problem", "lyapunov-five-phase", "--n", "32",
        "--tol", "0.5", "--h", "0.1", "--r-max", "24", "--out", str(out),
    ])
    assert code == 0
    series = read_rows(tmp_path / "ad05_series.csv")
    assert {int(r["rank"]) for r in series} == {1}


def test_list_presets_names_every_preset(capsys):
    assert main(["list-presets"]) == 0
    shown = capsys.readouterr().out
    for name in ("lyapunov-const", "lyapunov-timedep", "riccati",
                 "allen-cahn", "adaptive-five-phase"):
        assert name in shown
    assert set(PRESETS) == {"lyapunov-const", "lyapunov-timedep", "riccati",
                            "allen-cahn", "adaptive-five-phase"}


# --------------------------------------------------------- config resolution


def test_config_file_used_and_overridden_by_flags(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text(
        "# comment line\n"
        "problem = lyapunov-const\n"
        "n = 24\n"
        "rank = 5\n"
        "h = 0.5\n"
    )
    out1 = tmp_path / "a.csv"
    assert main(["convergence", "--config", str(cfgfile), "--out", str(out1)]) == 0
    rows = read_rows(out1)
    assert float(rows[0]["h"]) == 0.5 and int(rows[0]["rank"]) == 5

    out2 = tmp_path / "b.csv"
    assert main(["convergence", "--config", str(cfgfile), "--h", "0.25",
                 "--rank", "4", "--out", str(out2)]) == 0
    rows = read_rows(out2)
    assert float(rows[0]["h"]) == 0.25 and int(rows[0]["rank"]) == 4


def test_preset_flags_override(tmp_path):
    out = tmp_path / "p.csv"
    code = main([
        "convergence", "--preset", "lyapunov-timedep", "--n", "24",
        "--h", "0.25", "--h", "0.125", "--h", "0.0625", "--out", str(out),
    ])
    assert code == 0
    rows = read_rows(out)
    assert rows[0]["experiment"] == "lyapunov-timedep"
    assert int(rows[0]["rank"]) == 10  # preset value survives
    assert [float(r["h"]) for r in rows[:3]] == [0.25, 0.125, 0.0625]


def test_determinism_modulo_runtime(tmp_path):
    args = ["convergence", "--problem", "lyapunov-timedep", "--n", "24",
            "--rank", "6", "--h", "0.125", "--h", "0.0625"]
    out1, out2 = tmp_path / "d1.csv", tmp_path / "d2.csv"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    rows1, rows2 = read_rows(out1), read_rows(out2)
    for r1, r2 in zip(rows1, rows2):
        r1.pop("runtime_s"), r2.pop("runtime_s")
        assert r1 == r2


def test_parallel_jobs_match_serial_errors(tmp_path):
    base = ["mesh", "--problem", "lyapunov-timedep", "--n", "24", "--n", "32",
            "--rank", "6", "--h", "0.05"]
    out1, out2 = tmp_path / "s.csv", tmp_path / "p.csv"
    assert main(base + ["--jobs", "1", "--out", str(out1)]) == 0
    assert main(base + ["--jobs", "2", "--out", str(out2)]) == 0
    errs1 = [r["error_rel"] for r in read_rows(out1)]
    errs2 = [r["error_rel"] for r in read_rows(out2)]
    assert errs1 == errs2


# ----------------------------------------------------------------- failures


def test_exit_code_2_on_config_errors(tmp_path):
    out = str(tmp_path / "x.csv")
    assert main(["convergence", "--problem", "nosuch", "--n", "16",
                 "--rank", "2", "--h", "0.5", "--out", out]) == 2
    assert main(["convergence", "--problem", "lyapunov-const", "--n", "16",
                 "--h", "0.5", "--out", out]) == 2  # no rank, no tol
    assert main(["convergence", "--problem", "lyapunov-const", "--n", "16",
                 "--rank", "2", "--tol", "1e-6", "--h", "0.5", "--out", out]) == 2
    assert main(["convergence", "--preset", "nosuch", "--out", out]) == 2
    assert main(["convergence", "--problem", "lyapunov-const", "--n", "16",
                 "--rank", "2", "--out", out]) == 2  # no h
    assert main(["mesh", "--problem", "lyapunov-const", "--n", "16",
                 "--rank", "2", "--h", "0.5", "--h", "0.25", "--out", out]) == 2
    assert main(["convergence", "--problem", "lyapunov-const", "--n", "16",
                 "--rank", "2", "--h", "0.3", "--out", out]) == 2  # h not dividing
    bad = tmp_path / "bad.cfg"
    bad.write_text("just some words\n")
    assert main(["convergence", "--config", str(bad), "--out", out]) == 2
    assert not (tmp_path / "x.csv").exists()


def test_exit_code_1_on_numerical_failure(tmp_path):
    out = str(tmp_path / "x.csv")
    code = main(["mesh", "--problem", "lyapunov-const", "--n", "520",
                 "--rank", "2", "--h", "0.5", "--out", out])
    assert code == 1


def test_console_module_entrypoint_runs(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "lowrank_expint.cli", "list-presets"],
        capture_output=True, text=True, timeout=120,
    )
    assert result.returncode == 0
    assert "riccati" in result.stdout
