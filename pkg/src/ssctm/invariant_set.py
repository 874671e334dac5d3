"""Rectangular invariant box for fixed inflows, plus numerical checks of it."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DEFAULT_DT, integrate_path, vector_field
from .markov import rng_from, sample_mode_path
from .model import FreewayModel, as_inflow

DIRECTION_TOL = 1e-6


@dataclass(frozen=True)
class InvariantBox:
    """``[nbot_1, inf) x prod_k [nbot_k, ntop_k]``; ``ntop[0]`` is always ``inf``."""

    nbot: np.ndarray
    ntop: np.ndarray

    @property
    def K(self) -> int:
        return self.nbot.size

    def contains(self, n, tol: float = 0.0) -> bool:
        n = np.asarray(n, dtype=float)
        return bool(np.all(n >= self.nbot - tol) and np.all(n <= self.ntop + tol))

    def distance(self, n) -> np.ndarray:
        """Euclidean distance from each state in ``n`` (shape ``(..., K)``) to the box."""
        n = np.asarray(n, dtype=float)
        gap = np.maximum(self.nbot - n, 0.0) + np.maximum(n - self.ntop, 0.0)
        return np.sqrt((gap ** 2).sum(axis=-1))

    def to_dict(self) -> dict:
        top = [None if math.isinf(x) else float(x) for x in self.ntop]
        return {"nbot": self.nbot.tolist(), "ntop": top}

    @classmethod
    def from_dict(cls, d: dict) -> "InvariantBox":
        top = [math.inf if x is None else float(x) for x in d["ntop"]]
        return cls(np.asarray(d["nbot"], dtype=float), np.asarray(top, dtype=float))


def build_invariant_box(model: FreewayModel, r) -> InvariantBox:
    """Lower bounds by an upstream-to-downstream sweep, upper bounds downstream-to-upstream."""
    r = as_inflow(model, r)
    c = model.cells
    v, w, nmax = c.v, c.w, c.n_max
    beta = model.beta
    Fmax, Fmin = model.cell_fmax, model.cell_fmin
    K = model.K

    nbot = np.empty(K)
    nbot[0] = min(r[0] / v, Fmax[0] / v)
    for k in range(1, K):
        nbot[k] = min(
            beta[k - 1] * nbot[k - 1] + r[k] / v,
            (beta[k - 1] * Fmin[k - 1] + r[k]) / v,
            Fmax[k] / v,
        )

    ntop = np.full(K, math.inf)
    if K > 1:
        q = beta[K - 2] * Fmax[K - 2] + r[K - 1]
        ntop[K - 1] = q / v if q <= Fmin[K - 1] else nmax - Fmin[K - 1] / w
        for k in range(K - 2, 0, -1):
            room = max(w * (nmax - ntop[k + 1]) - r[k + 1], 0.0) / beta[k]
            cap = min(Fmin[k], room)
            q = beta[k - 1] * Fmax[k - 1] + r[k]
            ntop[k] = q / v if q <= cap else nmax - cap / w
    return InvariantBox(nbot, ntop)


# -- face directionality ----------------------------------------------


@dataclass
class Violation:
    face: str  # "lower" or "upper"
    cell: int  # 0-based
    mode: int
    n: np.ndarray
    G: float


@dataclass
class DirectionalityReport:
    checked: int = 0
    n_violations: int = 0
    violations: list[Violation] = field(default_factory=list)  # first few witnesses

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def _face_points(box: InvariantBox, ncrit1: float, k: int, value: float,
                 samples: int, rng: np.random.Generator) -> np.ndarray:
    K = box.K
    lo = box.nbot.copy()
    hi = box.ntop.copy()
    hi[0] = max(2.0 * ncrit1, lo[0])
    pts = lo + (hi - lo) * rng.random((samples, K))
    # the corners of the face are where the field is most extreme
    axes = [(lo[j], hi[j]) if j != k else (value,) for j in range(K)]
    corners = np.array(list(itertools.product(*axes)), dtype=float)
    pts = np.vstack([pts, corners])
    pts[:, k] = value
    return pts


def verify_boundary_directionality(model: FreewayModel, r, box: InvariantBox,
                                   samples: int = 1000, seed=0,
                                   tol: float = DIRECTION_TOL,
                                   max_witnesses: int = 20) -> DirectionalityReport:
    """Check that the field points into the box on every face, in every mode.

    On the face ``n_k = nbot_k`` we need ``G_k >= -tol``; on ``n_k = ntop_k``
    (cells after the first) ``G_k <= tol``.  The unbounded first axis is
    truncated at twice the first cell's critical density.
    """
    r = as_inflow(model, r)
    rng = rng_from(seed)
    ncrit1 = model.cell_fmax[0] / model.cells.v
    faces = [("lower", k, box.nbot[k]) for k in range(box.K)]
    faces += [("upper", k, box.ntop[k]) for k in range(1, box.K)]
    rep = DirectionalityReport()
    for face, k, value in faces:
        pts = _face_points(box, ncrit1, k, value, samples, rng)
        for i in range(model.m):
            Gk = vector_field(model, i, pts, r)[:, k]
            bad = Gk < -tol if face == "lower" else Gk > tol
            rep.checked += pts.shape[0]
            nbad = int(bad.sum())
            if nbad:
                rep.n_violations += nbad
                for j in np.flatnonzero(bad)[: max(0, max_witnesses - len(rep.violations))]:
                    rep.violations.append(Violation(face, k, i, pts[j].copy(), float(Gk[j])))
    return rep


# -- attraction --------------------------------------------------------


@dataclass
class AttractionReport:
    starts: np.ndarray
    final_states: np.ndarray
    final_distance: np.ndarray

    @property
    def max_distance(self) -> float:
        return float(self.final_distance.max()) if self.final_distance.size else 0.0


def attraction_probe(model: FreewayModel, r, box: InvariantBox, n0_list, T: float,
                     dt: float = DEFAULT_DT, seed=0, i0: int = 0) -> AttractionReport:
    """Integrate each start under its own sampled mode path; measure distance to the box at ``T``."""
    r = as_inflow(model, r)
    starts = np.atleast_2d(np.asarray(n0_list, dtype=float))
    seqs = np.random.SeedSequence(int(seed)).spawn(starts.shape[0])
    finals = np.empty_like(starts)
    for s, (n0, ss) in enumerate(zip(starts, seqs)):
        path = sample_mode_path(model.Lambda, i0, T, ss)
        sol = integrate_path(model, r, n0, i0, path.times, path.modes, dt, T,
                             record_every=max(1, int(math.ceil(T / dt))))
        finals[s] = sol.n[-1]
    return AttractionReport(starts, finals, box.distance(finals))
