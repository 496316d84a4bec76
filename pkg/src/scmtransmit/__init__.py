"""Two-stage counterfactual transmission toolkit.

Stage 1 builds synthetic-control counterfactuals with a robustness battery and
transfers a net effect profile to a target unit as a scenario. Stage 2 derives
monetary-policy shocks and estimates local-projection responses with and
without the simulated integration.
"""

from __future__ import annotations

from .kernels import BACKEND
from .panel import PanelDataset, ingest_csv
from .scm import ScmConfig, ScmFit, PredictorSpec, solve_weights, synthetic_path, rmspe, rmspe_ratio

__all__ = [
    "BACKEND",
    "PanelDataset",
    "ingest_csv",
    "ScmConfig",
    "ScmFit",
    "PredictorSpec",
    "solve_weights",
    "synthetic_path",
    "rmspe",
    "rmspe_ratio",
]
__version__ = "0.1.0"
