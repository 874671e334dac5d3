"""Inflow-plane studies for two-cell freeways: region maps, throughput bounds, sweeps."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .io import csv_text
from .model import FreewayModel
from .simulate import resolve_jobs
from .stability import AMBIGUOUS, STABLE, SearchConfig, decide

OUT_OF_DOMAIN = "OutOfDomain"


@dataclass(frozen=True)
class AxisSpec:
    lo: float
    hi: float
    step: float

    def values(self) -> np.ndarray:
        if self.step <= 0 or self.hi < self.lo:
            raise ValueError(f"bad axis {self.lo}:{self.hi}:{self.step}")
        count = int(np.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return self.lo + self.step * np.arange(count)


@dataclass(frozen=True)
class GridSpec:
    r1: AxisSpec
    r2: AxisSpec

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """Parse ``"r1min:r1max:step,r2min:r2max:step"``."""
        try:
            a, b = text.split(",")
            axes = [AxisSpec(*(float(x) for x in part.split(":"))) for part in (a, b)]
        except (ValueError, TypeError) as exc:
            raise ValueError(f"grid must look like 'lo:hi:step,lo:hi:step' (got {text!r})") from exc
        grid = cls(*axes)
        grid.r1.values()
        grid.r2.values()
        return grid

    def __str__(self) -> str:
        return ",".join(f"{ax.lo:g}:{ax.hi:g}:{ax.step:g}" for ax in (self.r1, self.r2))


DEFAULT_GRID = GridSpec(AxisSpec(0.0, 6000.0, 30.0), AxisSpec(0.0, 3000.0, 30.0))


def throughput(model: FreewayModel, r) -> float:
    """Vehicle-miles per hour: each entry flow times its distance to the exit."""
    r = np.asarray(r, dtype=float)
    dist = model.cells.l * np.arange(model.K, 0, -1)
    return float(r @ dist)


def onramp_admissible(model: FreewayModel, r2: float, cap: float | None) -> bool:
    """On-ramp inflows strictly below the ramp capacity are in the domain."""
    return cap is None or r2 < cap


def _classify_point(model, r1, r2, cap, cfg):
    if not onramp_admissible(model, r2, cap):
        return OUT_OF_DOMAIN, float("nan")
    v = decide(model, (r1, r2), cfg)
    return v.tag, v.margin_min


def _classify_row(args):
    model, r1, r2s, cap, cfg = args
    return [_classify_point(model, r1, r2, cap, cfg) for r2 in r2s]


def _pool_map(fn, tasks, jobs):
    if jobs == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


@dataclass(frozen=True)
class RegionMap:
    grid: GridSpec
    r1: np.ndarray
    r2: np.ndarray
    verdict: np.ndarray  # (len(r1), len(r2)) of tag strings
    margin_min: np.ndarray

    def count(self, tag: str) -> int:
        return int((self.verdict == tag).sum())

    def points(self, tag: str) -> np.ndarray:
        i, j = np.nonzero(self.verdict == tag)
        return np.column_stack([self.r1[i], self.r2[j]])

    def to_csv(self) -> str:
        rows = []
        for a, r1 in enumerate(self.r1):
            for b, r2 in enumerate(self.r2):
                rows.append([r1, r2, self.verdict[a, b], self.margin_min[a, b]])
        return csv_text(["r1", "r2", "verdict", "margin_min"], rows)


def classify_region(model: FreewayModel, grid: GridSpec = DEFAULT_GRID,
                    onramp_cap: float | None = None, cfg: SearchConfig | None = None,
                    jobs: int | None = 1) -> RegionMap:
    """Verdict at every grid point; rows are farmed out to ``jobs`` processes."""
    if model.K != 2:
        raise ValueError("region maps are defined for two-cell models")
    cap = model.onramp_cap if onramp_cap is None else onramp_cap
    r1s, r2s = grid.r1.values(), grid.r2.values()
    tasks = [(model, float(r1), r2s.tolist(), cap, cfg) for r1 in r1s]
    rows = _pool_map(_classify_row, tasks, resolve_jobs(jobs))
    verdict = np.array([[tag for tag, _ in row] for row in rows], dtype=object)
    margin = np.array([[mg for _, mg in row] for row in rows], dtype=float)
    return RegionMap(grid, r1s, r2s, verdict, margin)


# -- throughput --------------------------------------------------------


@dataclass(frozen=True)
class ThroughputBounds:
    J_upper: float
    J_lower: float
    argmax_upper: tuple[float, float] | None
    argmax_lower: tuple[float, float] | None
    grid_J_upper: float
    grid_J_lower: float


def _best(model, pts):
    if len(pts) == 0:
        return float("-inf"), []
    J = np.array([throughput(model, p) for p in pts])
    top = J.max()
    return float(top), [(float(a), float(b)) for a, b in pts[np.isclose(J, top, rtol=0, atol=1e-9)]]


def _refine(model, incumbents, best, accept, h1, h2, cap, cfg):
    arg = incumbents[0] if incumbents else None
    for r1, r2 in incumbents:
        for d1 in (-h1, 0.0, h1):
            for d2 in (-h2, 0.0, h2):
                q = (float(r1 + d1), float(r2 + d2))
                if (d1 == 0 and d2 == 0) or q[0] < 0 or q[1] < 0:
                    continue
                J = throughput(model, q)
                if J <= best:
                    continue
                tag, _ = _classify_point(model, q[0], q[1], cap, cfg)
                if tag in accept:
                    best, arg = J, q
    return best, arg


def throughput_bounds(model: FreewayModel, grid: GridSpec = DEFAULT_GRID,
                      region: RegionMap | None = None, onramp_cap: float | None = None,
                      cfg: SearchConfig | None = None, jobs: int | None = 1,
                      refine: bool = True) -> ThroughputBounds:
    """Grid maxima of J over necessary-satisfying and certified-stable points.

    A single refinement pass then probes half-step neighbours of every grid
    maximiser.
    """
    cap = model.onramp_cap if onramp_cap is None else onramp_cap
    if region is None:
        region = classify_region(model, grid, cap, cfg, jobs)
    upper_pts = np.vstack([region.points(STABLE), region.points(AMBIGUOUS)])
    gu, inc_u = _best(model, upper_pts)
    gl, inc_l = _best(model, region.points(STABLE))
    ju, au = gu, (inc_u[0] if inc_u else None)
    jl, al = gl, (inc_l[0] if inc_l else None)
    if refine:
        h1, h2 = grid.r1.step / 2, grid.r2.step / 2
        ju, au = _refine(model, inc_u, gu, (STABLE, AMBIGUOUS), h1, h2, cap, cfg)
        jl, al = _refine(model, inc_l, gl, (STABLE,), h1, h2, cap, cfg)
    return ThroughputBounds(ju, jl, au, al, gu, gl)


# -- sweeps ------------------------------------------------------------


def fluctuation_family(base: FreewayModel, lam: float, dF: float,
                       Fmax: float = 6000.0) -> FreewayModel:
    """Two-cell model with independent-looking incidents of size ``dF``.

    Modes: no incident, incident in cell 1, incident in cell 2, both.
    Incidents start at rate ``lam`` from the normal mode and clear at rate 1.
    """
    modes = [[Fmax, Fmax], [Fmax - dF, Fmax], [Fmax, Fmax - dF], [Fmax - dF, Fmax - dF]]
    L = [
        [-2 * lam, lam, lam, 0.0],
        [1.0, -(1 + lam), 0.0, lam],
        [1.0, 0.0, -(1 + lam), lam],
        [0.0, 1.0, 1.0, -2.0],
    ]
    return base.with_modes(modes, L, name=f"{base.name or 'family'}-lam{lam:g}-dF{dF:g}")


@dataclass(frozen=True)
class SweepRow:
    lam: float
    dF: float
    J_upper: float
    J_lower: float


def sweep(base: FreewayModel, params, grid: GridSpec = DEFAULT_GRID,
          cfg: SearchConfig | None = None, jobs: int | None = 1,
          family=fluctuation_family) -> list[SweepRow]:
    """``(lambda, dF) -> (J_upper, J_lower)`` for each pair in ``params``."""
    out = []
    for lam, dF in params:
        tb = throughput_bounds(family(base, lam, dF), grid, cfg=cfg, jobs=jobs)
        out.append(SweepRow(float(lam), float(dF), tb.J_upper, tb.J_lower))
    return out


def sweep_csv(rows: list[SweepRow]) -> str:
    return csv_text(["lambda", "dF", "J_upper", "J_lower"],
                    [[r.lam, r.dF, r.J_upper, r.J_lower] for r in rows])
