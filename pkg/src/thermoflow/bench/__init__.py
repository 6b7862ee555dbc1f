"""Benchmark drivers, outputs and command-line interface."""
from .config import RunSpec, read_config
from .drivers import (run, run_bingham_euler, run_cavity, run_channel, run_conv_study)
from .output import EocTable, FieldSet, RunResult, emit_outputs

__all__ = ["RunSpec", "read_config", "run", "run_bingham_euler", "run_cavity", "run_channel",
           "run_conv_study", "EocTable", "FieldSet", "RunResult", "emit_outputs"]
