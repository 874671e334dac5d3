"""SS-CTM model instances: geometry, fundamental diagram, capacity modes.

Units used throughout the package:

* densities ``n``: veh/mi
* flows, capacities, inflows ``r``: veh/hr
* transition rates: 1/hr
* time: hr

The mode transition matrix ``Lambda`` is an ``m x m`` generator whose diagonal
holds minus the row sum of the off-diagonal rates.  Modes are indexed from 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

from .markov import is_ergodic, steady_state

ROW_SUM_TOL = 1e-9


class ModelFormatError(ValueError):
    """Raised when a model description cannot be parsed into arrays."""


@dataclass(frozen=True)
class CellParams:
    """Fundamental-diagram parameters shared by every cell."""

    l: float  # cell length, mi
    v: float  # free-flow speed, mi/hr
    w: float  # congestion-wave speed, mi/hr
    n_max: float  # jam density, veh/mi

    @property
    def compatibility_bound(self) -> float:
        """Largest capacity for which free-flow sending never exceeds receiving."""
        return self.v * self.w / (self.v + self.w) * self.n_max


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    try:
        arr = np.array(a, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{name}: not a rectangular numeric array") from exc
    if arr.ndim != ndim:
        raise ModelFormatError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FreewayModel:
    """A full SS-CTM instance.

    ``modes[i, k]`` is the capacity of cell ``k`` in mode ``i``.  Construction
    only normalises array shapes; use :func:`validate` to check the model.
    """

    cells: CellParams
    beta: np.ndarray
    modes: np.ndarray
    Lambda: np.ndarray
    name: str = ""
    onramp_cap: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(self.beta, 1, "beta"))
        object.__setattr__(self, "modes", _frozen(self.modes, 2, "modes"))
        object.__setattr__(self, "Lambda", _frozen(self.Lambda, 2, "lambda"))

    @property
    def K(self) -> int:
        return self.modes.shape[1]

    @property
    def m(self) -> int:
        return self.modes.shape[0]

    @property
    def cell_fmax(self) -> np.ndarray:
        return self.modes.max(axis=0)

    @property
    def cell_fmin(self) -> np.ndarray:
        return self.modes.min(axis=0)

    @cached_property
    def stationary(self) -> np.ndarray:
        """Steady-state mode distribution (computed once per instance)."""
        p = steady_state(self.Lambda)
        p.setflags(write=False)
        return p

    def with_modes(self, modes, Lambda=None, name: str | None = None) -> "FreewayModel":
        return FreewayModel(
            cells=self.cells,
            beta=self.beta,
            modes=modes,
            Lambda=self.Lambda if Lambda is None else Lambda,
            name=self.name if name is None else name,
            onramp_cap=self.onramp_cap,
        )

    # -- serialisation -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "cells": {
                "l": self.cells.l,
                "v": self.cells.v,
                "w": self.cells.w,
                "n_max": self.cells.n_max,
            },
            "beta": self.beta.tolist(),
            "modes": self.modes.tolist(),
            "lambda": self.Lambda.tolist(),
        }
        if self.name:
            d["name"] = self.name
        if self.onramp_cap is not None:
            d["onramp_cap"] = self.onramp_cap
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FreewayModel":
        if not isinstance(d, dict):
            raise ModelFormatError("model must be a JSON object")
        missing = [k for k in ("cells", "beta", "modes", "lambda") if k not in d]
        if missing:
            raise ModelFormatError(f"missing fields: {', '.join(missing)}")
        cells = d["cells"]
        if isinstance(cells, list):
            raise ModelFormatError(
                "per-cell fundamental-diagram parameters are not supported; "
                "'cells' must be a single object {l, v, w, n_max}"
            )
        try:
            params = CellParams(
                l=float(cells["l"]),
                v=float(cells["v"]),
                w=float(cells["w"]),
                n_max=float(cells["n_max"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"cells: {exc}") from exc
        cap = d.get("onramp_cap")
        return cls(
            cells=params,
            beta=d["beta"],
            modes=d["modes"],
            Lambda=d["lambda"],
            name=str(d.get("name", "")),
            onramp_cap=None if cap is None else float(cap),
        )


def load_model(path: str | Path) -> FreewayModel:
    """Read a model JSON file.  Raises ``ModelFormatError`` on bad input."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc})") from exc
    model = FreewayModel.from_dict(data)
    if not model.name:
        model = FreewayModel(
            model.cells, model.beta, model.modes, model.Lambda,
            name=Path(path).stem, onramp_cap=model.onramp_cap,
        )
    return model


def save_model(model: FreewayModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


# -- validation --------------------------------------------------------


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_if_invalid(self) -> None:
        if self.errors:
            raise ValueError("invalid model: " + "; ".join(self.errors))


def validate(model: FreewayModel) -> ValidationReport:
    """Check every structural invariant of ``model``.

    Errors make the model unusable.  Capacities above the compatibility bound
    ``v*w*n_max/(v+w)`` are only warnings: the dynamics stay well defined,
    but the invariant-set construction loses its guarantees for that cell.
    """
    rep = ValidationReport()
    c = model.cells
    for fname in ("l", "v", "w", "n_max"):
        val = getattr(c, fname)
        if not (math.isfinite(val) and val > 0):
            rep.errors.append(f"cells.{fname} must be strictly positive (got {val})")

    K, m = model.K, model.m
    if K < 1 or m < 1:
        rep.errors.append(f"need at least one cell and one mode (got K={K}, m={m})")
        return rep
    if model.beta.shape != (K,):
        rep.errors.append(f"beta has length {model.beta.size}, expected K={K}")
    elif np.any(model.beta <= 0) or np.any(model.beta > 1):
        rep.errors.append("beta entries must lie in (0, 1]")

    F = model.modes
    if np.any(~np.isfinite(F)) or np.any(F < 0):
        rep.errors.append("mode capacities must be finite and nonnegative")
    elif np.any(model.cell_fmax <= 0):
        bad = [k + 1 for k in np.flatnonzero(model.cell_fmax <= 0)]
        rep.errors.append(f"cells {bad} have zero capacity in every mode")

    L = model.Lambda
    if L.shape != (m, m):
        rep.errors.append(f"lambda has shape {L.shape}, expected ({m}, {m})")
    else:
        off = L - np.diag(np.diag(L))
        if np.any(off < 0):
            rep.errors.append("lambda off-diagonal rates must be nonnegative")
        rows = L.sum(axis=1)
        bad = np.flatnonzero(np.abs(rows) > ROW_SUM_TOL * max(1.0, np.abs(L).max()))
        if bad.size:
            rep.errors.append(f"lambda row sum nonzero for modes {bad.tolist()}")
        if not rep.errors and not is_ergodic(L):
            rep.errors.append("mode chain is reducible (not ergodic)")

    if not rep.errors:
        bound = c.compatibility_bound
        for k in range(K):
            if model.cell_fmax[k] > bound * (1 + 1e-12):
                rep.warnings.append(
                    f"[Sbarmax] cell {k + 1}: normal capacity {model.cell_fmax[k]:g} "
                    f"exceeds v*w*n_max/(v+w) = {bound:g}"
                )
    return rep


# -- derived quantities -----------------------------------------------


def critical_density(model: FreewayModel) -> np.ndarray:
    """Per-cell critical density ``F_k^max / v``."""
    return model.cell_fmax / model.cells.v


@dataclass(frozen=True)
class NominalFlows:
    beta_prod: np.ndarray  # beta_prod[h, k] = fraction of r_h routed to cell k (0 for h > k)
    phi: np.ndarray


def routing_products(beta: np.ndarray) -> np.ndarray:
    K = beta.size
    B = np.zeros((K, K))
    for h in range(K):
        B[h, h] = 1.0
        for k in range(h + 1, K):
            B[h, k] = B[h, k - 1] * beta[k - 1]
    return B


def nominal_flows(model: FreewayModel, r) -> NominalFlows:
    r = np.asarray(r, dtype=float)
    B = routing_products(model.beta)
    return NominalFlows(beta_prod=B, phi=r @ B)


def as_inflow(model: FreewayModel, r) -> np.ndarray:
    """Coerce and check an inflow vector for ``model``."""
    arr = np.asarray(r, dtype=float).reshape(-1)
    if arr.shape != (model.K,):
        raise ValueError(f"inflow has {arr.size} entries, model has K={model.K} cells")
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise ValueError("inflow entries must be finite and nonnegative")
    return arr
