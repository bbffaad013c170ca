"""Modality-aware local surrogate explanations for multimodal black boxes.

A single weighted sparse group lasso surrogate is fitted over a binary
interpretable space whose units are grouped by modality, yielding both
modality-level and unit-level attributions.
"""
from .alpha import AlphaSearchConfig, select_alpha
from .attribution import Explanation, explain, positive_evidence_map
from .blackbox import BlackBoxSession, QueryLedger, TargetSelector, make_synthetic
from .neighborhood import KernelConfig, LocalDataset, build_local_dataset
from .pipeline import RunConfig, run_batch, run_explain
from .sgl import SglConfig, SurrogateFit, fit, group_penalty_weights
from .space import InstanceSpec, build_instance_spec, full_mask

__version__ = "0.1.0"

__all__ = [
    "AlphaSearchConfig", "select_alpha", "Explanation", "explain", "positive_evidence_map",
    "BlackBoxSession", "QueryLedger", "TargetSelector", "make_synthetic", "KernelConfig",
    "LocalDataset", "build_local_dataset", "RunConfig", "run_batch", "run_explain", "SglConfig",
    "SurrogateFit", "fit", "group_penalty_weights", "InstanceSpec", "build_instance_spec",
    "full_mask",
]
