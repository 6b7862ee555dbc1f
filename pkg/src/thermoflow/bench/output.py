"""Tables, run reports and field files written by the drivers."""
from __future__ import annotations

import csv
import io
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..mesh import Mesh, write_vtk
from ..solver import SolveReport


@dataclass
class EocTable:
    """Errors per refinement level; orders are ``log2(E_{n-1} / E_n)``."""

    fields: list
    rows: list = field(default_factory=list)

    def add(self, h: float, dofs: int, errors: dict):
        missing = set(self.fields) - set(errors)
        if missing:
            raise ValueError(f"missing errors for {sorted(missing)}")
        self.rows.append({"h": float(h), "dofs": int(dofs),
                          **{f: float(errors[f]) for f in self.fields}})

    def errors(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def eoc(self, name: str) -> np.ndarray:
        e = self.errors(name)
        out = np.full(len(e), np.nan)
        if len(e) > 1:
            with np.errstate(divide="ignore", invalid="ignore"):
                out[1:] = np.log2(e[:-1] / e[1:])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["h", "dofs"]
        for f in self.fields:
            header += [f"E_{f}", f"EOC_{f}"]
        w.writerow(header)
        eocs = {f: self.eoc(f) for f in self.fields}
        for i, r in enumerate(self.rows):
            row = [f"{r['h']:.6g}", r["dofs"]]
            for f in self.fields:
                e = eocs[f][i]
                row += [f"{r[f]:.6e}", "" if np.isnan(e) else f"{e:.4f}"]
            w.writerow(row)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"fields": list(self.fields), "rows": self.rows,
                "eoc": {f: [None if np.isnan(v) else float(v) for v in self.eoc(f)]
                        for f in self.fields}}


@dataclass
class FieldSet:
    """Named vertex and cell data on one mesh, written as ``fields_<name>.vtk``."""

    name: str
    mesh: Mesh
    point_data: dict = field(default_factory=dict)
    cell_data: dict = field(default_factory=dict)


@dataclass
class RunResult:
    spec: dict
    report: SolveReport | None = None
    table: EocTable | None = None
    fields: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def iteration_csv(report: SolveReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "dofs", "newton_iters", "avg_krylov", "converged"])
    for s in report.steps:
        w.writerow([f"{s.param:.6g}", s.dofs, s.newton_iters if s.converged else "*",
                    f"{s.avg_krylov:.4g}", int(s.converged)])
    return buf.getvalue()


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def report_json(result: RunResult) -> str:
    doc = {
        "version": version_string(),
        "config": result.spec,
        "seed": result.spec.get("seed", 0) if isinstance(result.spec, dict) else 0,
        "steps": result.report.to_dict()["steps"] if result.report else [],
        "meta": result.report.meta if result.report else {},
        "summary": result.summary,
    }
    if result.table is not None:
        doc["eoc_table"] = result.table.to_dict()
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def emit_outputs(result: RunResult, out_dir: str | Path) -> list[Path]:
    """Write ``eoc.csv``, ``iters.csv``, ``report.json`` and ``fields_*.vtk``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    if result.table is not None:
        written.append(_write(out / "eoc.csv", result.table.to_csv()))
    if result.report is not None:
        written.append(_write(out / "iters.csv", iteration_csv(result.report)))
    written.append(_write(out / "report.json", report_json(result)))
    for fs in result.fields:
        written.append(write_vtk(out / f"fields_{fs.name}.vtk", fs.mesh, fs.point_data,
                                 fs.cell_data))
    return written
