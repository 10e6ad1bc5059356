import csv
import subprocess
import sys
import xml.dom.minidom

import numpy as np
import pytest

from catgfem.cli import main
from catgfem.record import CSV_HEADER, CsvSchemaError, interp_loglog, loglog_slope, read_csv


def cli(*args):
    try:
        return main([str(a) for a in args])
    except SystemExit as exc:  # argparse usage errors
        return exc.code


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "e1.csv"
    assert cli("run", "--problem", "example1", "--max-elements", 400, "--out", out, "--no-timings") == 0
    return out


def test_run_writes_schema(small_csv):
    with open(small_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER
    assert int(rows[-1][1]) >= 400
    assert all(r[-1] == "" for r in rows[1:])  # no timings
    assert rows[1][6] == ""  # no coarse solve on level 0
    assert rows[2][6] != ""


def test_round_trip_is_exact(small_csv, tmp_path):
    from catgfem.adaptive import AdaptiveConfig, run
    from catgfem.problems import example1
    rec = run(example1(), AdaptiveConfig(max_elements=400))
    data = read_csv(small_csv)
    for name in ("eta", "energy_err", "l2_err", "n_elements", "n_dofs"):
        assert np.array_equal(data[name], rec.column(name))
    assert np.array_equal(data["k"], np.arange(len(rec.rows)))


def test_runs_are_deterministic(small_csv, tmp_path):
    again = tmp_path / "again.csv"
    assert cli("run", "--problem", "example1", "--max-elements", 400, "--out", again, "--no-timings") == 0
    assert again.read_bytes() == small_csv.read_bytes()


def test_example3_has_empty_error_columns(tmp_path):
    out = tmp_path / "e3.csv"
    assert cli("run", "--problem", "example3", "--algo", "safem", "--theta", 0.5, "--h0", 8,
               "--max-elements", 140, "--out", out) == 0
    data = read_csv(out)
    assert np.all(np.isnan(data["energy_err"])) and np.all(np.isnan(data["l2_err"]))
    assert np.all(np.isfinite(data["wall_ms"]))
    assert data["n_elements"][0] == 128


def test_usage_errors_exit_2(tmp_path, capsys):
    assert cli("run", "--problem", "example1", "--theta", 1.5, "--out", tmp_path / "x.csv") == 2
    assert "--theta" in capsys.readouterr().err
    assert cli("run", "--problem", "nope", "--out", tmp_path / "x.csv") == 2
    assert cli("run", "--problem", "example1", "--h0", 0, "--out", tmp_path / "x.csv") == 2
    assert "--h0" in capsys.readouterr().err
    assert cli("sweep", "--problem", "example1", "--thetas", "0.3,2", "--out", tmp_path) == 2
    assert not (tmp_path / "x.csv").exists()


def test_exit_code_from_subprocess(tmp_path):
    res = subprocess.run([sys.executable, "-m", "catgfem", "run", "--problem", "example1",
                          "--theta", "1.5", "--out", str(tmp_path / "x.csv")],
                         capture_output=True, text=True)
    assert res.returncode == 2 and "theta" in res.stderr


def test_numerical_failure_exits_1(tmp_path, monkeypatch, capsys):
    import catgfem.adaptive as adaptive
    monkeypatch.setattr(adaptive, "K1_CORRECTION_BOUND", -1.0)
    assert cli("run", "--problem", "example1", "--max-iterations", 3, "--out", tmp_path / "x.csv") == 1
    assert "CorrectionNotSmallAtK1" in capsys.readouterr().err


def test_dump_mesh(tmp_path):
    from catgfem.mesh import load_mesh
    out, dump = tmp_path / "r.csv", tmp_path / "mesh.txt"
    assert cli("run", "--problem", "example2", "--max-iterations", 3, "--out", out, "--dump-mesh", dump) == 0
    with open(dump) as fh:
        mesh = load_mesh(fh)
    assert mesh.n_triangles == int(read_csv(out)["n_elements"][-1])
    assert abs(mesh.areas.sum() - 3.0) < 1e-12


def test_sweep_writes_one_csv_per_theta_and_manifest(tmp_path, monkeypatch):
    monkeypatch.setenv("CATGFEM_THREADS", "2")
    assert cli("sweep", "--problem", "example1", "--thetas", "0.3,0.5", "--max-elements", 300,
               "--out", tmp_path, "--no-timings") == 0
    with open(tmp_path / "manifest.csv", newline="") as fh:
        manifest = list(csv.DictReader(fh))
    assert [m["status"] for m in manifest] == ["ok", "ok"]
    assert [float(m["theta"]) for m in manifest] == [0.3, 0.5]
    for m in manifest:
        assert read_csv(tmp_path / m["csv"])["n_elements"][-1] >= 300


def test_single_theta_sweep_matches_run(tmp_path):
    assert cli("sweep", "--problem", "example2", "--thetas", "0.4", "--max-elements", 800,
               "--out", tmp_path / "s", "--no-timings") == 0
    assert cli("run", "--problem", "example2", "--theta", 0.4, "--max-elements", 800,
               "--out", tmp_path / "r.csv", "--no-timings") == 0
    swept = tmp_path / "s" / "example2_catgfem_theta0.4.csv"
    assert swept.read_bytes() == (tmp_path / "r.csv").read_bytes()
    assert (tmp_path / "s" / "manifest.csv").exists()


def svg_polylines(path):
    doc = xml.dom.minidom.parse(str(path))
    return doc.getElementsByTagName("polyline"), doc


def test_plot_one_column(small_csv, tmp_path):
    out = tmp_path / "p.svg"
    assert cli("plot", small_csv, "--columns", "eta", "--out", out) == 0
    lines, doc = svg_polylines(out)
    assert len(lines) == 1
    assert len(doc.getElementsByTagName("polygon")) == 1  # slope triangle
    assert "-1/2" in out.read_text()
    n_points = len(lines[0].getAttribute("points").split())
    assert n_points == len(read_csv(small_csv)["k"])


def test_plot_three_files_distinct_styles(small_csv, tmp_path):
    copies = []
    for i in range(3):
        c = tmp_path / f"run{i}.csv"
        c.write_bytes(small_csv.read_bytes())
        copies.append(c)
    out = tmp_path / "p.svg"
    assert cli("plot", *copies, "--columns", "energy_err", "--out", out) == 0
    lines, _ = svg_polylines(out)
    assert len(lines) == 3
    styles = {(l.getAttribute("stroke"), l.getAttribute("stroke-dasharray")) for l in lines}
    assert len(styles) == 3
    text = out.read_text()
    assert all(f"run{i}" in text for i in range(3))


def test_plot_schema_errors(small_csv, tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(CSV_HEADER) + "\n")
    assert cli("plot", empty, "--out", tmp_path / "p.svg") == 1
    assert "no data rows" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text(small_csv.read_text() + "1,2,3\n")
    assert cli("plot", bad, "--out", tmp_path / "p.svg") == 1
    err = capsys.readouterr().err
    assert "bad.csv" in err and "line" in err
    assert cli("plot", small_csv, "--columns", "nope", "--out", tmp_path / "p.svg") == 2


def test_read_csv_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(CsvSchemaError, match="line 1"):
        read_csv(p)
    p.write_text(",".join(CSV_HEADER) + "\n" + ",".join(["0"] * 8) + ",oops\n")
    with pytest.raises(CsvSchemaError, match="line 2"):
        read_csv(p)


def test_slope_helpers():
    n = np.array([100.0, 1000.0, 10000.0])
    err = 3.0 * n ** -0.5
    assert loglog_slope(n, err) == pytest.approx(-0.5, abs=1e-12)
    assert interp_loglog(np.sqrt(1000.0 * 10000.0), n, err) == pytest.approx(3.0 * 10 ** -1.75, rel=1e-12)


def test_selftest(capsys):
    assert cli("selftest", "--rounds", 5, "--seed", 3) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 5


def test_golden_file(tmp_path):
    from pathlib import Path
    golden = Path(__file__).parent / "data" / "golden_example1.csv"
    out = tmp_path / "g.csv"
    assert cli("run", "--problem", "example1", "--max-elements", 250, "--no-timings", "--out", out) == 0
    assert out.read_text() == golden.read_text()
    data = read_csv(golden)
    assert cli("plot", golden, "--out", tmp_path / "g.svg") == 0
    lines, _ = svg_polylines(tmp_path / "g.svg")
    assert len(lines) == 2 and len(lines[0].getAttribute("points").split()) == len(data["k"])
