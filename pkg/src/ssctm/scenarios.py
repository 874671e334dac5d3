"""Bundled reference models and the inflows studied with them."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .invariant_set import InvariantBox
from .model import FreewayModel, load_model

BUNDLED = (
    "two_cell_incident",  # one incident hotspot in cell 1, off-ramp after cell 1
    "baseline",  # independent hotspots in both cells
    "variant1",  # cell 2 never degraded
    "variant2",  # cell 2 never degraded and twice as wide
    "corr_comonotone",  # both cells degrade together
    "corr_anticorrelated",  # exactly one cell degraded at any time
)

# inflows for the two-cell incident model
UNSTABLE_INFLOW = (4320.0, 2400.0)
STABLE_INFLOW = (3600.0, 600.0)
# a larger (looser) invariant set for STABLE_INFLOW, used to show conservatism
ENLARGED_BOX = InvariantBox(np.array([35.0, 23.75]), np.array([np.inf, 170.0]))


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled model {name!r}; choose from {', '.join(BUNDLED)}")
    return Path(str(resources.files("ssctm") / "data" / f"{name}.json"))


def bundled(name: str) -> FreewayModel:
    return load_model(bundled_path(name))


def resolve_model(spec: str) -> FreewayModel:
    """A bundled model name or a path to a model JSON file."""
    if spec in BUNDLED:
        return bundled(spec)
    return load_model(spec)


def bundled_dict(name: str) -> dict:
    return json.loads(bundled_path(name).read_text())
