"""Convergence diagnostics for posteriors with intractable normalizing constants."""

from __future__ import annotations

from .curvature import acd, cd, cd_trace, naive_cd, scaled_cd, vech
from .model import ErgmModel, GaussianModel, IsingModel, Model, get_model
from .samplers import SampleChain, SamplerConfig, run_sampler
from .score_approx import PointEstimates, estimate_chain, estimate_point
from .stein import KernelConfig, aiks, ksd, ksd_trace

__all__ = [
    "acd",
    "aiks",
    "cd",
    "cd_trace",
    "estimate_chain",
    "estimate_point",
    "ErgmModel",
    "GaussianModel",
    "get_model",
    "IsingModel",
    "KernelConfig",
    "ksd",
    "ksd_trace",
    "Model",
    "naive_cd",
    "PointEstimates",
    "run_sampler",
    "SampleChain",
    "SamplerConfig",
    "scaled_cd",
    "vech",
]

__version__ = "0.1.0"
