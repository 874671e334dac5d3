"""Necessary and sufficient stability conditions for fixed inflows.

The necessary condition compares nominal flows with the mean spillback-adjusted
capacities.  The sufficient condition searches for a Lyapunov certificate
``V(i, n) = a_i exp(b Gamma^T n)``; for fixed ``b`` the defining inequalities
are linear in ``a``, which is what the search exploits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from .dynamics import flows, vector_field
from .invariant_set import InvariantBox, build_invariant_box
from .markov import rng_from
from .model import FreewayModel, as_inflow, nominal_flows

MAX_VERTEX_CELLS = 26
SLACK_TOL = 1e-9
_VERTEX_BLOCK = 1 << 15


class PrerequisiteViolated(ValueError):
    """Some nominal flow reaches the mean capacity of its cell."""


class VertexBlowup(ValueError):
    """Too many cells to enumerate the box vertices."""


# -- necessary condition -----------------------------------------------


def spillback_adjusted_capacities(model: FreewayModel, r, box: InvariantBox) -> np.ndarray:
    """``S~[i, k] = min(F_k^i, (R_{k+1}(nbot_{k+1}) - r_{k+1})_+ / beta_k)``; last cell unadjusted."""
    r = as_inflow(model, r)
    c = model.cells
    st = model.modes.copy()
    if model.K > 1:
        room = np.maximum(c.w * (c.n_max - box.nbot[1:]) - r[1:], 0.0) / model.beta[:-1]
        st[:, :-1] = np.minimum(st[:, :-1], room)
    return st


@dataclass(frozen=True)
class NecessaryResult:
    satisfied: bool
    margins: np.ndarray  # mean S~ minus nominal flow, per cell
    stilde: np.ndarray
    phi: np.ndarray


def check_necessary(model: FreewayModel, r, box: InvariantBox | None = None) -> NecessaryResult:
    r = as_inflow(model, r)
    if box is None:
        box = build_invariant_box(model, r)
    p = model.stationary
    st = spillback_adjusted_capacities(model, r, box)
    phi = nominal_flows(model, r).phi
    margins = p @ st - phi
    return NecessaryResult(bool(np.all(margins >= 0.0)), margins, st, phi)


# -- Lyapunov weights and vertex minima -------------------------------


@dataclass(frozen=True)
class LyapunovWeights:
    gamma: np.ndarray
    Gamma: np.ndarray


def lyapunov_weights(model: FreewayModel, r) -> LyapunovWeights:
    r = as_inflow(model, r)
    p = model.stationary
    avg = p @ model.modes
    phi = nominal_flows(model, r).phi
    gap = avg - phi
    if np.any(gap <= 0):
        bad = (np.flatnonzero(gap <= 0) + 1).tolist()
        raise PrerequisiteViolated(f"nominal flow not below mean capacity in cells {bad}")
    gamma = avg / gap
    K = model.K
    Gamma = np.empty(K)
    Gamma[-1] = gamma[-1]
    for k in range(K - 2, -1, -1):
        Gamma[k] = model.beta[k] * (Gamma[k + 1] + gamma[k])
    return LyapunovWeights(gamma, Gamma)


@dataclass(frozen=True)
class VertexSets:
    theta: np.ndarray  # (2^(K-1), K), first coordinate at the critical density
    theta_hat: np.ndarray  # same, first coordinate at nbot_1


def _vertex_block(box: InvariantBox, n1: float, start: int, stop: int) -> np.ndarray:
    K = box.K
    idx = np.arange(start, stop, dtype=np.int64)
    pts = np.empty((idx.size, K))
    pts[:, 0] = n1
    for k in range(1, K):
        bit = (idx >> (k - 1)) & 1
        pts[:, k] = np.where(bit == 1, box.ntop[k], box.nbot[k])
    return pts


def _check_vertex_cap(K: int) -> None:
    if K > MAX_VERTEX_CELLS:
        raise VertexBlowup(f"K={K} exceeds the vertex enumeration cap of {MAX_VERTEX_CELLS} cells")


def vertex_sets(model: FreewayModel, box: InvariantBox) -> VertexSets:
    _check_vertex_cap(model.K)
    nv = 1 << (model.K - 1)
    ncrit1 = model.cell_fmax[0] / model.cells.v
    return VertexSets(_vertex_block(box, ncrit1, 0, nv), _vertex_block(box, box.nbot[0], 0, nv))


@dataclass(frozen=True)
class VertexMinima:
    scrF: np.ndarray  # per mode, min of gamma^T f over theta
    scrF_hat: np.ndarray  # per mode, over theta_hat
    scrR: float  # Gamma^T r


def _min_weighted_flow(model, r, box, gamma, n1) -> np.ndarray:
    nv = 1 << (model.K - 1)
    out = np.full(model.m, np.inf)
    for start in range(0, nv, _VERTEX_BLOCK):
        pts = _vertex_block(box, n1, start, min(nv, start + _VERTEX_BLOCK))
        for i in range(model.m):
            out[i] = min(out[i], (flows(model, i, pts, r).f @ gamma).min())
    return out


def vertex_flow_minima(model: FreewayModel, r, box: InvariantBox,
                       weights: LyapunovWeights) -> VertexMinima:
    r = as_inflow(model, r)
    _check_vertex_cap(model.K)
    ncrit1 = model.cell_fmax[0] / model.cells.v
    return VertexMinima(
        scrF=_min_weighted_flow(model, r, box, weights.gamma, ncrit1),
        scrF_hat=_min_weighted_flow(model, r, box, weights.gamma, box.nbot[0]),
        scrR=float(weights.Gamma @ r),
    )


# -- bilinear feasibility ---------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    b_min: float = 1e-9
    b_max: float = 1e-1
    n_grid: int = 60
    refine_iters: int = 40
    a_min: float = 1e-6
    a_max: float = 1e6
    tol: float = SLACK_TOL
    log_b_tol: float = 1e-4
    method: str = "perron"  # or "lp"


def bmi_slacks(scrR: float, scrF, Lambda, a, b: float) -> np.ndarray:
    """Left-hand sides ``a_i b (R - F_i) + sum_j lambda_ij (a_j - a_i)``."""
    a = np.asarray(a, dtype=float)
    L = np.asarray(Lambda, dtype=float)
    off = L - np.diag(np.diag(L))
    return a * b * (scrR - np.asarray(scrF, dtype=float)) + off @ a - off.sum(axis=1) * a


@dataclass(frozen=True)
class BMIResult:
    feasible: bool
    a: np.ndarray | None = None
    b: float | None = None
    slacks: np.ndarray | None = None
    score: float = math.inf  # search objective at the best b (lower is better)
    reason: str = ""


def _metzler(Lambda, scrR, scrF, b):
    return Lambda + b * np.diag(scrR - scrF)


def _abscissa(Lambda, scrR, scrF, log_b):
    """Spectral abscissa of ``M(exp(log_b))``; vectorised over an array of ``log_b``."""
    lb = np.asarray(log_b, dtype=float)
    M = Lambda + np.exp(lb)[..., None, None] * np.diag(scrR - scrF)
    return np.linalg.eigvals(M).real.max(axis=-1)


def _lp_score(Lambda, scrR, scrF, log_b, cfg, want_solution=False):
    # minimise s subject to M a <= s, a_min <= a <= a_max
    m = scrF.size
    M = _metzler(Lambda, scrR, scrF, math.exp(log_b))
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A = np.hstack([M, -np.ones((m, 1))])
    bounds = [(cfg.a_min, cfg.a_max)] * m + [(None, None)]
    res = linprog(c, A_ub=A, b_ub=np.zeros(m), bounds=bounds, method="highs")
    if res.status != 0:
        return (math.inf, None) if want_solution else math.inf
    # normalise by a_max so scores are comparable to the Perron route's abscissa
    score = float(res.x[-1]) / cfg.a_max
    return (score, res.x[:m]) if want_solution else score


def bmi_feasibility(scrR: float, scrF, Lambda, cfg: SearchConfig | None = None) -> BMIResult:
    """Search for ``a > 0, b > 0`` making every BMI slack at most -1.

    For fixed ``b`` the constraint matrix ``M(b) = Lambda + b diag(R - F)`` is
    Metzler, so a positive ``a`` with ``M a <= -1`` exists iff ``M(b)`` is
    Hurwitz, and then ``a = -M^-1 1`` is the componentwise smallest one.  The
    default search therefore minimises the spectral abscissa of ``M(b)`` over
    ``b`` (a convex function) on a log grid, refines it by bounded scalar
    minimisation, and solves for ``a``.  ``method="lp"`` instead solves a
    max-min-slack linear program at each ``b``.
    """
    cfg = cfg or SearchConfig()
    L = np.asarray(Lambda, dtype=float)
    scrF = np.asarray(scrF, dtype=float)
    grid = np.linspace(math.log(cfg.b_min), math.log(cfg.b_max), cfg.n_grid)
    if cfg.method == "perron":
        score = lambda lb: float(_abscissa(L, scrR, scrF, lb))  # noqa: E731
        vals = _abscissa(L, scrR, scrF, grid)
    elif cfg.method == "lp":
        score = lambda lb: _lp_score(L, scrR, scrF, lb, cfg)  # noqa: E731
        vals = np.array([score(lb) for lb in grid])
    else:
        raise ValueError(f"unknown BMI search method {cfg.method!r}")

    j = int(np.argmin(vals))
    best_lb, best = float(grid[j]), float(vals[j])
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    if cfg.refine_iters > 0 and hi > lo:
        res = minimize_scalar(score, bounds=(lo, hi), method="bounded",
                              options={"maxiter": cfg.refine_iters, "xatol": cfg.log_b_tol})
        if res.fun < best:
            best_lb, best = float(res.x), float(res.fun)
    b = math.exp(best_lb)

    if cfg.method == "perron":
        if not best < 0:
            return BMIResult(False, score=best, reason="no b makes the mode matrix Hurwitz")
        M = _metzler(L, scrR, scrF, b)
        a = np.linalg.solve(-M, np.ones(scrF.size))
    else:
        s, a = _lp_score(L, scrR, scrF, best_lb, cfg, want_solution=True)
        worst = s * cfg.a_max
        if a is None or worst > -1.0:
            return BMIResult(False, score=best, reason="linear subproblem minimum slack above -1")
        # shrink toward the smallest certificate while staying inside the box
        shrunk = a / -worst
        if np.all(shrunk >= cfg.a_min):
            a = shrunk

    if np.any(a < cfg.a_min) or np.any(a > cfg.a_max):
        return BMIResult(False, score=best, reason="weights a fall outside the search box")
    slacks = bmi_slacks(scrR, scrF, L, a, b)
    if np.any(slacks > -1.0 + cfg.tol):
        return BMIResult(False, score=best, reason="candidate failed re-validation")
    return BMIResult(True, a=a, b=b, slacks=slacks, score=best)


# -- certificate -------------------------------------------------------


@dataclass(frozen=True)
class StabilityCertificate:
    a: np.ndarray
    b: float
    c: float
    d: float
    log_mgf_bound: float
    slacks: np.ndarray

    @property
    def mgf_bound(self) -> float:
        return math.exp(self.log_mgf_bound) if self.log_mgf_bound < 709.0 else math.inf

    def to_dict(self) -> dict:
        bound = self.mgf_bound
        return {
            "a": self.a.tolist(),
            "b": self.b,
            "c": self.c,
            "d": self.d,
            "mgf_bound": None if math.isinf(bound) else bound,
            "log_mgf_bound": self.log_mgf_bound,
            "slacks": self.slacks.tolist(),
        }


def certificate_constants(model: FreewayModel, r, box: InvariantBox,
                          weights: LyapunovWeights, a, b: float,
                          minima: VertexMinima | None = None) -> tuple[float, float, float]:
    """Return ``(c, d, log_mgf_bound)`` for a feasible ``(a, b)``.

    The bound itself, ``(d / (c min a))^(1 / (b Gamma_K))``, overflows for
    realistic ``b``; its logarithm is returned instead.
    """
    r = as_inflow(model, r)
    a = np.asarray(a, dtype=float)
    if minima is None:
        minima = vertex_flow_minima(model, r, box, weights)
    c = 1.0 / a.max()
    lhs = bmi_slacks(minima.scrR, minima.scrF_hat, model.Lambda, a, b) + a * c
    ncrit1 = model.cell_fmax[0] / model.cells.v
    expo = b * (weights.Gamma[0] * ncrit1 + weights.Gamma[1:] @ box.ntop[1:])
    log_d = math.log(np.abs(lhs).max()) + expo if np.abs(lhs).max() > 0 else -math.inf
    d = math.exp(log_d) if log_d < 709.0 else math.inf
    log_bound = (log_d - math.log(c * a.min())) / (b * weights.Gamma[-1])
    return c, d, log_bound


@dataclass
class DriftReport:
    checked: int = 0
    n_violations: int = 0
    worst: float = -math.inf  # max over samples of (LV + cV - d) / scale
    structural: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.n_violations == 0 and not self.structural


def generator_of_V(model: FreewayModel, r, weights: LyapunovWeights, a, b: float,
                   i: int, n) -> tuple[np.ndarray, np.ndarray]:
    """``(LV(i, n), V(i, n))`` for ``V = a_i exp(b Gamma^T n)`` at states ``n`` of shape ``(N, K)``."""
    a = np.asarray(a, dtype=float)
    n = np.atleast_2d(np.asarray(n, dtype=float))
    E = np.exp(b * (n @ weights.Gamma))
    G = vector_field(model, i, n, r)
    L = model.Lambda
    jump = sum(L[i, j] * (a[j] - a[i]) for j in range(model.m) if j != i)
    LV = E * (a[i] * b * (G @ weights.Gamma) + jump)
    return LV, a[i] * E


def drift_check(model: FreewayModel, r, box: InvariantBox, cert: StabilityCertificate,
                weights: LyapunovWeights | None = None, samples: int = 10_000,
                seed=0, rtol: float = 1e-9) -> DriftReport:
    """Sample the box and test ``LV + cV <= d`` in every mode."""
    r = as_inflow(model, r)
    if weights is None:
        weights = lyapunov_weights(model, r)
    rep = DriftReport()
    a, b = np.asarray(cert.a, dtype=float), float(cert.b)
    if not b > 0:
        rep.structural.append(f"b = {b:g} is not positive")
    if np.any(a <= 0):
        rep.structural.append("some a_i are not positive")
    if np.any(np.asarray(cert.slacks) > -1.0 + SLACK_TOL):
        rep.structural.append("some BMI slacks exceed -1")
    rng = rng_from(seed)
    ncrit1 = model.cell_fmax[0] / model.cells.v
    lo = box.nbot.copy()
    hi = box.ntop.copy()
    hi[0] = ncrit1 + 20.0 / (abs(b) * weights.Gamma[0]) if b != 0 else 2.0 * ncrit1
    hi[0] = max(hi[0], lo[0])
    pts = lo + (hi - lo) * rng.random((samples, model.K))
    for i in range(model.m):
        LV, V = generator_of_V(model, r, weights, a, b, i, pts)
        excess = LV + cert.c * V - cert.d
        scale = np.maximum.reduce([np.ones_like(V), np.abs(LV), cert.c * V, np.full_like(V, cert.d)])
        rel = excess / scale
        rep.checked += pts.shape[0]
        rep.n_violations += int((rel > rtol).sum())
        rep.worst = max(rep.worst, float(rel.max()))
    return rep


# -- verdict -----------------------------------------------------------

UNSTABLE = "UnstableCertified"
STABLE = "StableCertified"
AMBIGUOUS = "Ambiguous"


@dataclass
class StabilityVerdict:
    tag: str
    necessary_margins: np.ndarray
    box: InvariantBox
    certificate: StabilityCertificate | None = None
    weights: LyapunovWeights | None = None
    minima: VertexMinima | None = None
    diagnostic: str = ""

    @property
    def margin_min(self) -> float:
        return float(self.necessary_margins.min())

    def to_dict(self) -> dict:
        d = {
            "verdict": self.tag,
            "necessary_margins": self.necessary_margins.tolist(),
            "box": self.box.to_dict(),
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
        }
        if self.weights is not None:
            d["gamma"] = self.weights.gamma.tolist()
            d["Gamma"] = self.weights.Gamma.tolist()
        if self.minima is not None:
            d["scrR"] = self.minima.scrR
            d["scrF"] = self.minima.scrF.tolist()
            d["scrF_hat"] = self.minima.scrF_hat.tolist()
        if self.diagnostic:
            d["diagnostic"] = self.diagnostic
        return d


def decide(model: FreewayModel, r, cfg: SearchConfig | None = None) -> StabilityVerdict:
    r = as_inflow(model, r)
    box = build_invariant_box(model, r)
    nec = check_necessary(model, r, box)
    if not nec.satisfied:
        bad = (np.flatnonzero(nec.margins < 0) + 1).tolist()
        return StabilityVerdict(UNSTABLE, nec.margins, box,
                                diagnostic=f"necessary condition fails in cells {bad}")
    if model.K > MAX_VERTEX_CELLS:
        return StabilityVerdict(AMBIGUOUS, nec.margins, box,
                                diagnostic=f"K={model.K} exceeds the vertex enumeration cap")
    try:
        weights = lyapunov_weights(model, r)
    except PrerequisiteViolated as exc:
        return StabilityVerdict(AMBIGUOUS, nec.margins, box, diagnostic=str(exc))
    minima = vertex_flow_minima(model, r, box, weights)
    res = bmi_feasibility(minima.scrR, minima.scrF, model.Lambda, cfg)
    if not res.feasible:
        return StabilityVerdict(AMBIGUOUS, nec.margins, box, weights=weights, minima=minima,
                                diagnostic=res.reason)
    c, d, log_bound = certificate_constants(model, r, box, weights, res.a, res.b, minima)
    cert = StabilityCertificate(res.a, res.b, c, d, log_bound, res.slacks)
    return StabilityVerdict(STABLE, nec.margins, box, certificate=cert,
                            weights=weights, minima=minima)
