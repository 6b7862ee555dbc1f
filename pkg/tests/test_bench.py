import json

import numpy as np
import pytest

from thermoflow.bench import EocTable, FieldSet, RunResult, RunSpec, emit_outputs, read_config, run
from thermoflow.bench.cli import build_parser, main
from thermoflow.bench.config import spec_from_args
from thermoflow.bench.drivers import inlet_profile
from thermoflow.bench.mms import PowerLawMMS
from thermoflow.mesh import generate_rect_mesh, read_vtk_counts
from thermoflow.solver import NewtonResult, SolveReport


# -------------------------------------------------------------------- tables
def test_eoc_table_values_and_csv():
    t = EocTable(["u", "p"])
    for n in range(3):
        t.add(2.0 ** -n, 10 * 4 ** n, {"u": 8.0 ** -n, "p": 2.0 ** -n})
    assert np.allclose(t.eoc("u")[1:], 3.0) and np.allclose(t.eoc("p")[1:], 1.0)
    assert np.isnan(t.eoc("u")[0])
    lines = t.to_csv().splitlines()
    assert lines[0] == "h,dofs,E_u,EOC_u,E_p,EOC_p"
    assert len(lines) == 4 and lines[1].split(",")[3] == ""
    assert t.to_dict()["eoc"]["u"][0] is None
    with pytest.raises(ValueError):
        t.add(1.0, 1, {"u": 1.0})


def test_emit_outputs_without_steps(tmp_path):
    r = RunResult({"command": "cavity", "seed": 7})
    paths = emit_outputs(r, tmp_path / "o")
    assert [p.name for p in paths] == ["report.json"]
    doc = json.loads(paths[0].read_text())
    assert doc["steps"] == [] and doc["seed"] == 7 and "version" in doc


def test_emit_outputs_full(tmp_path):
    rep = SolveReport(meta={"parameter": "Gr"})
    rep.add(5e4, 100, NewtonResult(True, 4, [1.0, 1e-9], [3, 2, 2, 1]), 0.1)
    rep.add(1e5, 100, NewtonResult(False, 50, [1.0], []), 0.2)
    m = generate_rect_mesh(2, 2)
    t = EocTable(["u"])
    t.add(1.0, 10, {"u": np.float64(0.5)})
    fs = FieldSet("x", m, {"s": np.arange(m.num_vertices, dtype=float)})
    paths = emit_outputs(RunResult({"seed": 0}, rep, t, [fs], {"v": np.nan}), tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["eoc.csv", "fields_x.vtk", "iters.csv", "report.json"]
    iters = (tmp_path / "iters.csv").read_text().splitlines()
    assert iters[1].split(",")[2] == "4" and iters[2].split(",")[2] == "*"
    assert read_vtk_counts(tmp_path / "fields_x.vtk") == (m.num_vertices, m.num_cells)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["summary"]["v"] is None and len(doc["steps"]) == 2


def test_emit_outputs_unwritable(tmp_path):
    f = tmp_path / "file"
    f.write_text("")
    with pytest.raises(OSError):
        emit_outputs(RunResult({}), f / "sub")


# -------------------------------------------------------------------- config
def test_read_config_and_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# cavity\nGr = 1e5\nbase = 4x4\nschedule = 1e3, 2e3\n--nref 2\nsolver=direct\n")
    d = read_config(cfg)
    assert d == {"Gr": 1e5, "base": (4, 4), "schedule": [1e3, 2e3], "nref": 2, "solver": "direct"}
    args = build_parser().parse_args(["cavity", "--config", str(cfg), "--nref", "0",
                                      "--base", "2x3"])
    spec = spec_from_args(args)
    assert spec.nref == 0 and spec.base == (2, 3) and spec.Gr == 1e5 and spec.solver == "direct"


@pytest.mark.parametrize("text", ["bogus = 1\n", "justakey\n", "nref = two\n"])
def test_read_config_errors(tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    with pytest.raises(ValueError):
        read_config(cfg)


def test_runspec_validation():
    with pytest.raises(ValueError):
        RunSpec("nope")
    s = RunSpec("channel", base=(3, 4))
    assert s.get("nref", 2) == 2 and s.to_dict()["base"] == [3, 4]


# ----------------------------------------------------------------------- MMS
def _fd_grad(f, x, y, h=1e-5):
    return ((f(x + h, y) - f(x - h, y)) / (2 * h), (f(x, y + h) - f(x, y - h)) / (2 * h))


def test_mms_fields_are_consistent():
    mms = PowerLawMMS(r=2.0, Ra=1e2, Di=0.3, Theta=0.1)
    rng = np.random.default_rng(0)
    pts = rng.uniform(0.1, 0.9, (5, 2))
    u = lambda i: (lambda x, y: mms.velocity(np.array(x), np.array(y))[i])  # noqa: E731
    for x, y in pts:
        du = _fd_grad(u(0), x, y)
        dv = _fd_grad(u(1), x, y)
        assert abs(du[0] + dv[1]) <= 1e-8
    # stream function vanishes on the boundary, so does the normal velocity
    s = np.linspace(0, 1, 7)
    for bx, by, c in [(s, 0 * s, 1), (s, 1 + 0 * s, 1), (0 * s, s, 0), (1 + 0 * s, s, 0)]:
        assert np.abs(mms.velocity(bx, by)[c]).max() <= 1e-12


def test_mms_forcing_matches_residual():
    # independent finite-difference evaluation of the momentum equation at r = 2
    mms = PowerLawMMS(r=2.0, Ra=1e2, Pr=1.3, Di=0.3)
    S = lambda i: (lambda x, y: mms.stress(np.array(x), np.array(y))[i])  # noqa: E731
    U = lambda i: (lambda x, y: mms.velocity(np.array(x), np.array(y))[i])  # noqa: E731
    for x, y in [(0.3, 0.6), (0.7, 0.2)]:
        u = np.array(mms.velocity(np.array(x), np.array(y)), dtype=float)
        gu = [_fd_grad(U(i), x, y) for i in range(2)]
        divS = (_fd_grad(S(0), x, y)[0] + _fd_grad(S(2), x, y)[1],
                _fd_grad(S(2), x, y)[0] + _fd_grad(S(1), x, y)[1])
        gp = _fd_grad(mms.pressure, x, y)
        th = float(mms.temperature(np.array(x), np.array(y)))
        f = np.array(mms.forcing(np.array(x), np.array(y)), dtype=float)
        expect = [-mms.Pr * divS[i] + u @ np.array(gu[i]) + gp[i] for i in range(2)]
        expect[1] -= mms.Ra * mms.Pr * th
        assert np.allclose(f, expect, rtol=1e-5, atol=1e-5)


def test_inlet_profile_is_symmetric_with_plug():
    u = inlet_profile(1.5, 1.0, 1.0)
    y = np.linspace(-1, 1, 201)
    val = np.asarray(u(0 * y, y))
    ux = val[0] if val.ndim == 2 else val
    assert np.allclose(ux, ux[::-1], atol=1e-14)
    assert abs(ux[0]) <= 1e-14 and abs(ux[-1]) <= 1e-14
    assert np.ptp(ux[np.abs(y) < 0.2]) <= 1e-14


# ------------------------------------------------------------------ drivers
def test_conv_study_tiny():
    spec = RunSpec("conv-study", levels=2, base=(2, 2), model_params=[2.0])
    res = run(spec)
    assert res.summary["converged"] and len(res.table.rows) == 2
    assert res.table.errors("u")[1] < res.table.errors("u")[0]


def test_cavity_tiny_al():
    res = run(RunSpec("cavity", base=(2, 2), nref=0, schedule=[1e3, 2e3]))
    assert res.summary["converged"]
    assert res.summary["max_divergence"] <= 1e-8
    assert res.summary["max_avg_krylov"] >= 1


def test_unknown_problem_rejected():
    with pytest.raises(ValueError):
        run(RunSpec("cavity", base=(2, 2), nref=0, problem="P9", schedule=[1e3]))
    with pytest.raises(ValueError):
        run(RunSpec("conv-study", model="newtonian"))


# ----------------------------------------------------------------------- CLI
def test_cli_runs_and_writes(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["conv-study", "--levels", "1", "--base", "2x2", "--model-params", "2",
                 "--out", str(out)])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["converged"] is True
    assert (out / "report.json").exists() and (out / "eoc.csv").exists()


def test_cli_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("what = 1\n")
    assert main(["cavity", "--config", str(cfg)]) == 2
    assert main(["cavity", "--config", str(tmp_path / "missing.cfg")]) == 2
    with pytest.raises(SystemExit):
        main(["nope"])


def test_cli_failed_run_exit_code(tmp_path):
    code = main(["conv-study", "--levels", "1", "--base", "2x2", "--model-params", "2",
                 "--newton-max-iter", "1", "--out", str(tmp_path)])
    assert code == 1
