"""Stochastic switching cell transmission model: stability analysis and simulation."""

from .model import CellParams, FreewayModel, load_model, save_model, validate
from .invariant_set import InvariantBox, build_invariant_box
from .stability import SearchConfig, StabilityVerdict, decide
from .scenarios import bundled

__all__ = [
    "CellParams",
    "FreewayModel",
    "InvariantBox",
    "SearchConfig",
    "StabilityVerdict",
    "build_invariant_box",
    "bundled",
    "decide",
    "load_model",
    "save_model",
    "validate",
]

__version__ = "0.1.0"
