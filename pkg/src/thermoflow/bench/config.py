"""Run specification shared by the CLI and the benchmark drivers."""
from __future__ import annotations

import argparse
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

COMMANDS = ("conv-study", "cavity", "channel", "bingham-euler")


@dataclass
class RunSpec:
    """Configuration of one benchmark run.

    ``None`` entries fall back to the driver's desk-scale defaults.
    """

    command: str
    form: str | None = None
    Ra: float | None = None
    Pr: float | None = None
    Di: float | None = None
    Theta: float | None = None
    Gr: float | None = None
    Re: float | None = None
    Pe: float | None = None
    Bn: float | None = None
    Br: float | None = None
    pair: str | None = None
    formulation: str | None = None
    k: int | None = None
    nref: int | None = None
    levels: int | None = None
    base: tuple[int, int] | None = None
    grading: float | None = None
    gamma: float | None = None
    solver: str | None = None
    schedule: list[float] | None = None
    eps_schedule: list[float] | None = None
    model: str | None = None
    model_params: list[float] | None = None
    problem: str | None = None
    theta_h: float | None = None
    newton_atol: float | None = None
    newton_max_iter: int | None = None
    krylov_rtol: float | None = None
    quad_degree: int | None = None
    seed: int = 0
    out: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}; expected one of {COMMANDS}")

    def get(self, name, default):
        v = getattr(self, name)
        return default if v is None else v

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


_LISTS = {"schedule", "eps_schedule", "model_params"}
_INTS = {"k", "nref", "levels", "newton_max_iter", "quad_degree", "seed"}
_STRS = {"command", "form", "pair", "formulation", "solver", "model", "problem", "out"}


def _parse_list(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def coerce(name: str, value):
    """Convert a textual option value to the type of ``RunSpec.<name>``."""
    if value is None or not isinstance(value, str):
        return value
    if name in _LISTS:
        return _parse_list(value)
    if name == "base":
        nx, ny = (int(float(t)) for t in value.replace("x", " ").replace(",", " ").split())
        return (nx, ny)
    if name in _INTS:
        return int(value)
    if name in _STRS:
        return value
    return float(value)


def read_config(path: str | Path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment; dashes map to underscores."""
    out = {}
    names = {f.name for f in fields(RunSpec)}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, val = (s.strip() for s in line.split("=", 1))
        else:
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, val = parts
        key = key.lstrip("-").replace("-", "_")
        if key not in names:
            raise ValueError(f"{path}:{lineno}: unknown option {key!r}")
        out[key] = coerce(key, val)
    return out


def spec_from_args(args: argparse.Namespace) -> RunSpec:
    """Merge a config file (if any) with command-line flags; flags win."""
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for f in fields(RunSpec):
        if f.name in ("command", "extra"):
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = coerce(f.name, v)
    values["command"] = args.command
    return RunSpec(**values)
