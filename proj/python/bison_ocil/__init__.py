"""Online class-incremental learning engine (C++ core with Python bindings)."""

import json

from . import _bison
from ._bison import (
    ConfigError,
    grad_check,
    gradient_flow,
    metrics,
    reservoir_bench,
    similarity,
)

__all__ = [
    "ConfigError",
    "config_schema",
    "default_config",
    "emit_report",
    "grad_check",
    "gradient_flow",
    "metrics",
    "reservoir_bench",
    "run_experiment",
    "similarity",
    "validate_config",
]


def default_config():
    return json.loads(_bison.default_config())


def config_schema():
    return json.loads(_bison.config_schema())


def validate_config(config):
    """Returns the config with defaults filled in; raises ConfigError."""
    return json.loads(_bison.validate_config(json.dumps(config)))


def run_experiment(config=None, jobs=1, seed_offset=0):
    """Runs the method x capacity x seed grid and returns the results document."""
    text = json.dumps(default_config() if config is None else config)
    return json.loads(_bison.run_experiment(text, jobs, seed_offset))


def emit_report(results, outdir):
    """Writes results.json, per-cell CSVs, summary.csv and interplay.svg."""
    return _bison.emit_report(json.dumps(results), str(outdir))
