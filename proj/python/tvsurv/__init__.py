"""Survival models with time-varying covariates.

Thin wrapper over the C++ core: estimators and metrics take NumPy arrays,
while simulation specs and experiment configs are plain dicts with the same
keys as the JSON files read by the command-line tool.
"""

import csv
import io
import json

from . import _core
from ._core import (
    Error,
    auroc,
    auroc_1y,
    brier,
    fit_cox,
    harrell_c,
    kaplan_meier,
    nelson_aalen,
)

__all__ = [
    "Error",
    "auroc",
    "auroc_1y",
    "brier",
    "fit_cox",
    "harrell_c",
    "kaplan_meier",
    "nelson_aalen",
    "run_experiment",
    "simulate",
]


def simulate(spec):
    """Generate a synthetic cohort.

    Returns the long-format cohort CSV text and the truth sidecar as a dict.
    """
    cohort_csv, truth = _core._simulate(json.dumps(spec))
    return cohort_csv, json.loads(truth)


def run_experiment(config):
    """Prepare, fit and evaluate one experiment; one dict per report row."""
    text = _core._run_experiment(json.dumps(config))
    rows = list(csv.DictReader(io.StringIO(text)))
    labels = ("model", "mode", "imputation")
    return [{k: (v if k in labels else float(v)) for k, v in row.items()} for row in rows]

