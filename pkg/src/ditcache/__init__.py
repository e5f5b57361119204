"""Frequency-aware, error-bounded activation caching for a toy diffusion transformer."""

from .model import ModelConfig, init_model, sampler_run
from .numerics import Polynomial
from .policy import AdaptiveCacheController, CacheState, PolicyConfig, decide

__all__ = [
    "AdaptiveCacheController",
    "CacheState",
    "ModelConfig",
    "PolicyConfig",
    "Polynomial",
    "decide",
    "init_model",
    "sampler_run",
]

__version__ = "0.1.0"
