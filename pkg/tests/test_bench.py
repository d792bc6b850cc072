import csv
import os
import subprocess
import sys

import numpy as np
import numpy.testing as npt
import pytest

import cutiga.bench as bench
from cutiga.bench import CSV_HEADER, RunRecord, fit_slope, run_convergence, write_csv
from cutiga.experiments import circle_experiment
from cutiga.quadrature import QuadOptions


def records_from(hs, qs, quantity="h1_error"):
    key = {"l2_error": "l2", "h1_error": "h1", "scn": "scn"}[quantity]
    out = []
    for h, q in zip(hs, qs):
        kw = dict(l2=None, h1=None, scn=None)
        kw[key] = q
        out.append(RunRecord("m", int(round(1 / h)), h, 10, kw["l2"], kw["h1"],
                             kw["scn"], 0, ""))
    return out


def test_fit_slope_quadratic():
    hs = [1 / n for n in (4, 8, 16, 32)]
    slope, intercept, r2 = fit_slope(records_from(hs, [h**2 for h in hs]), "h1_error")
    npt.assert_allclose(slope, 2.0, atol=1e-12)
    npt.assert_allclose(r2, 1.0, atol=1e-12)


def test_fit_slope_cubic_with_constant():
    hs = [1 / n for n in (5, 10, 20, 40)]
    slope, intercept, _ = fit_slope(
        records_from(hs, [7 * h**3 for h in hs], quantity="l2_error"), "l2_error")
    npt.assert_allclose(slope, 3.0, atol=1e-12)
    npt.assert_allclose(intercept, np.log(7.0), atol=1e-12)


def test_fit_slope_exclude_coarsest():
    hs = [1 / n for n in (5, 10, 20, 40, 80)]
    qs = [h**2 for h in hs]
    qs[0] *= 40.0  # polluted coarse point
    full = fit_slope(records_from(hs, qs), "h1_error")[0]
    trimmed = fit_slope(records_from(hs, qs), "h1_error", exclude_coarsest=True)[0]
    assert abs(trimmed - 2.0) <= 1e-12
    assert abs(full - 2.0) > 0.1


def test_fit_slope_errors():
    hs = [0.5, 0.25]
    with pytest.raises(ValueError):
        fit_slope(records_from(hs, [1.0, 2.0]), "h1_error")
    hs3 = [0.5, 0.25, 0.125]
    with pytest.raises(ValueError):
        fit_slope(records_from(hs3, [1.0, -2.0, 1.0]), "h1_error")


def test_run_convergence_requires_ascending():
    exp = circle_experiment(10.0, 1.0)
    with pytest.raises(ValueError):
        run_convergence(exp, ["iga"], [8, 4])


def test_failed_cell_is_recorded_not_raised(monkeypatch):
    exp = circle_experiment(10.0, 1.0)

    def boom(*a, **k):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(bench, "classify_elements", boom)
    recs = run_convergence(exp, ["iga"], [4])
    assert len(recs) == 1 and recs[0].failed
    assert "synthetic failure" in recs[0].notes


def strip_wall(path):
    rows = list(csv.reader(open(path)))
    k = rows[0].index("wall_ms")
    return [[c for i, c in enumerate(r) if i != k] for r in rows]


def test_worker_pool_preserves_order():
    exp = circle_experiment(10.0, 1.0)
    seq = run_convergence(exp, ["iga"], [4, 6], quad=QuadOptions(depth=3),
                          compute_scn=False)
    par = run_convergence(exp, ["iga"], [4, 6], quad=QuadOptions(depth=3),
                          compute_scn=False, workers=2)
    assert [(r.method, r.N) for r in par] == [(r.method, r.N) for r in seq]
    for a, b in zip(seq, par):
        assert a.h1 == b.h1 and a.dofs == b.dofs


def test_iga_scn_constant_across_offsets():
    # the unenriched space does not depend on the interface position
    from cutiga.bench import run_robustness

    recs = run_robustness(10.0, 1.0, ["iga"], [0.025, 0.025 / 2**10, 0.025 / 2**19],
                          N=10)
    vals = [r.scn for r in recs]
    assert max(vals) / min(vals) <= 1.05


def test_csv_header_and_determinism(tmp_path):
    exp = circle_experiment(10.0, 1.0)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (p1, p2):
        recs = run_convergence(exp, ["iga"], [4, 6], quad=QuadOptions(depth=3),
                               compute_scn=True)
        write_csv(recs, p)
    assert open(p1).readline().strip() == CSV_HEADER
    assert strip_wall(p1) == strip_wall(p2)


def test_run_record_csv_row_blank_fields():
    r = RunRecord("iga", 4, 0.25, 10, None, None, None, 3, "note")
    row = r.csv_row().split(",")
    assert row[4] == "" and row[5] == "" and row[6] == ""


def test_cli_end_to_end(tmp_path):
    out = tmp_path / "res.csv"
    svg = tmp_path / "figs"
    cmd = [sys.executable, "-m", "cutiga", "run", "--example", "circle",
           "--methods", "iga", "--n", "4,6,8", "--a0", "10", "--a1", "1",
           "--quad-depth", "3", "--out", str(out), "--svg", str(svg)]
    res = subprocess.run(cmd, capture_output=True, text=True, timeout=600)
    assert res.returncode == 0, res.stderr
    rows = list(csv.reader(open(out)))
    assert rows[0] == CSV_HEADER.split(",")
    assert len(rows) == 4
    svgs = sorted(os.listdir(svg))
    assert any(f.endswith(".svg") for f in svgs)


def test_cli_robustness_mode(tmp_path):
    out = tmp_path / "rob.csv"
    cmd = [sys.executable, "-m", "cutiga", "run", "--example", "robustness",
           "--methods", "iga", "--n", "8", "--a0", "10", "--a1", "1",
           "--deltas", "0.05,0.025", "--out", str(out)]
    res = subprocess.run(cmd, capture_output=True, text=True, timeout=600)
    assert res.returncode == 0, res.stderr
    rows = list(csv.reader(open(out)))
    assert len(rows) == 3
    assert all("delta=" in r[-1] for r in rows[1:])


def test_cli_exit_code_two_on_cell_failure(monkeypatch, capsys):
    import cutiga.cli as cli

    def fake_run_convergence(exp, methods, Ns, **kw):
        recs = [RunRecord(m, n, 1.0 / n, 0, None, None, None, 1,
                          "error=Synthetic", failed=True)
                for m in methods for n in Ns]
        cb = kw.get("on_record")
        if cb:
            for r in recs:
                cb(r)
        return recs

    monkeypatch.setattr(cli, "run_convergence", fake_run_convergence)
    code = cli.main(["run", "--example", "circle", "--methods", "iga",
                     "--n", "4,6", "--out", os.devnull])
    assert code == 2


def test_cli_rejects_unknown_method(capsys):
    import cutiga.cli as cli

    assert cli.main(["run", "--example", "circle", "--methods", "bogus"]) == 2
