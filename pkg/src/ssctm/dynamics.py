"""CTM flows, the in-mode vector field, and fixed-step integrators.

The numpy functions accept density arrays of shape ``(..., K)`` so that many
states can be evaluated at once.  The integrators are numba kernels operating
on plain arrays; :func:`integrate_path` is the Python entry point used by the
simulator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .model import FreewayModel

CLAMP_TOL = 1e-6
DEFAULT_DT = 1e-3

RK4 = 0
EULER = 1
_METHODS = {"rk4": RK4, "euler": EULER}


class StepTooLarge(RuntimeError):
    """A time step moved the state out of the admissible set by more than the tolerance."""

    def __init__(self, t: float, cell: int, value: float):
        super().__init__(
            f"density of cell {cell + 1} reached {value:.6g} at t={t:.6g} hr; reduce dt"
        )
        self.t = t
        self.cell = cell
        self.value = value


@dataclass(frozen=True)
class FlowVector:
    f: np.ndarray  # f[..., k]: flow out of cell k (to k+1, or exit for the last cell)
    s: np.ndarray  # off-ramp flows (1/beta_k - 1) f_k


def sending(model: FreewayModel, i: int, k: int, n_k):
    """S_k(i, n_k) = min(v n_k, F_k^i)."""
    return np.minimum(model.cells.v * np.asarray(n_k, dtype=float), model.modes[i, k])


def receiving(model: FreewayModel, k: int, n_k):
    """R_k(n_k) = w (n_max - n_k).  Identical for every cell and mode."""
    c = model.cells
    return c.w * (c.n_max - np.asarray(n_k, dtype=float))


def flows(model: FreewayModel, i: int, n, r) -> FlowVector:
    """Inter-cell flows in mode ``i``; on-ramp inflow has priority at each merge."""
    c = model.cells
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    beta = model.beta
    S = np.minimum(c.v * n, model.modes[i])
    f = beta * S
    if model.K > 1:
        room = np.maximum(c.w * (c.n_max - n[..., 1:]) - r[1:], 0.0)
        f[..., :-1] = np.minimum(f[..., :-1], room)
    return FlowVector(f=f, s=(1.0 / beta - 1.0) * f)


def vector_field(model: FreewayModel, i: int, n, r) -> np.ndarray:
    """dn/dt in mode ``i``: G_k = f_{k-1} + r_k - f_k / beta_k, with f_0 = 0."""
    f = flows(model, i, n, r).f
    G = np.asarray(r, dtype=float) - f / model.beta
    G[..., 1:] += f[..., :-1]
    return G


# -- numba kernels ------------------------------------------------------


@numba.njit(cache=True)
def _field(F, beta, r, v, w, nmax, n, out):
    K = n.size
    prev = 0.0
    for k in range(K):
        s = min(v * n[k], F[k])
        f = beta[k] * s
        if k < K - 1:
            room = w * (nmax - n[k + 1]) - r[k + 1]
            if room < 0.0:
                room = 0.0
            if room < f:
                f = room
        out[k] = prev + r[k] - f / beta[k]
        prev = f


@numba.njit(cache=True)
def _step(F, beta, r, v, w, nmax, n, h, method, k1, k2, k3, k4, tmp, out):
    _field(F, beta, r, v, w, nmax, n, k1)
    if method == 1:
        for k in range(n.size):
            out[k] = n[k] + h * k1[k]
        return
    for k in range(n.size):
        tmp[k] = n[k] + 0.5 * h * k1[k]
    _field(F, beta, r, v, w, nmax, tmp, k2)
    for k in range(n.size):
        tmp[k] = n[k] + 0.5 * h * k2[k]
    _field(F, beta, r, v, w, nmax, tmp, k3)
    for k in range(n.size):
        tmp[k] = n[k] + h * k3[k]
    _field(F, beta, r, v, w, nmax, tmp, k4)
    for k in range(n.size):
        out[k] = n[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])


@numba.njit(cache=True)
def _project(F, beta, r, v, w, nmax, n, tol, scratch):
    """Clamp ``n`` onto the state space in place.

    Returns -1 on success, otherwise the offending cell index.  A jammed cell
    whose on-ramp demand exceeds its discharge is pushed past ``nmax`` by the
    model itself; that excursion is projected away rather than reported.
    """
    K = n.size
    bad = -1
    over = False
    for k in range(K):
        if n[k] < 0.0:
            if n[k] < -tol:
                return k
            n[k] = 0.0
        elif k > 0 and n[k] > nmax:
            if n[k] > nmax + tol:
                over = True
            n[k] = nmax
    if over:
        _field(F, beta, r, v, w, nmax, n, scratch)
        for k in range(1, K):
            if n[k] == nmax and scratch[k] <= 0.0:
                # the field does not push outward here, so the overshoot is numerical
                bad = k
                break
    return bad


@numba.njit(cache=True)
def _integrate(modes, beta, r, v, w, nmax, n0, i0, sw_times, sw_modes, dt, T,
               stride, method, tol):
    K = n0.size
    nsteps = int(np.ceil(T / dt - 1e-9))
    if nsteps < 1:
        nsteps = 1
    nrec = nsteps // stride + 1
    if nsteps % stride != 0:
        nrec += 1
    t_rec = np.empty(nrec)
    m_rec = np.empty(nrec, dtype=np.int64)
    n_rec = np.empty((nrec, K))
    k1 = np.empty(K)
    k2 = np.empty(K)
    k3 = np.empty(K)
    k4 = np.empty(K)
    tmp = np.empty(K)
    nxt = np.empty(K)
    n = n0.copy()
    mode = i0
    t = 0.0
    j = 0  # next switch index
    nsw = sw_times.size
    rec = 0
    t_rec[0] = 0.0
    m_rec[0] = mode
    n_rec[0, :] = n
    rec = 1
    for g in range(1, nsteps + 1):
        t_end = g * dt
        if g == nsteps:
            t_end = T
        # sub-steps up to each switch epoch inside this grid step
        while j < nsw and sw_times[j] <= t_end:
            h = sw_times[j] - t
            if h > 0.0:
                _step(modes[mode], beta, r, v, w, nmax, n, h, method, k1, k2, k3, k4, tmp, nxt)
                bad = _project(modes[mode], beta, r, v, w, nmax, nxt, tol, tmp)
                if bad >= 0:
                    return t_rec, m_rec, n_rec, sw_times[j], bad, nxt[bad]
                n[:] = nxt
                t = sw_times[j]
            mode = sw_modes[j]
            j += 1
        h = t_end - t
        if h > 0.0:
            _step(modes[mode], beta, r, v, w, nmax, n, h, method, k1, k2, k3, k4, tmp, nxt)
            bad = _project(modes[mode], beta, r, v, w, nmax, nxt, tol, tmp)
            if bad >= 0:
                return t_rec, m_rec, n_rec, t_end, bad, nxt[bad]
            n[:] = nxt
        t = t_end
        if g % stride == 0 or g == nsteps:
            t_rec[rec] = t
            m_rec[rec] = mode
            n_rec[rec, :] = n
            rec += 1
    return t_rec, m_rec, n_rec, T, -1, 0.0


@dataclass(frozen=True)
class PathSolution:
    t: np.ndarray
    modes: np.ndarray
    n: np.ndarray  # shape (len(t), K)


def _method_code(method: str) -> int:
    try:
        return _METHODS[method]
    except KeyError:
        raise ValueError(f"unknown integration method {method!r}") from None


def integrate_path(model: FreewayModel, r, n0, i0: int, switch_times, switch_modes,
                   dt: float, T: float, record_every: int = 1,
                   method: str = "rk4") -> PathSolution:
    """Integrate dn/dt = G(I(t), n, r) along a given mode path.

    Steps lie on the global grid ``k*dt``; switch epochs inside a grid step get
    an exact partial step.  States are recorded every ``record_every`` grid
    steps and at ``T``.
    """
    if dt <= 0 or T <= 0:
        raise ValueError("dt and T must be positive")
    c = model.cells
    t, m, n, t_bad, bad, val = _integrate(
        np.ascontiguousarray(model.modes), np.ascontiguousarray(model.beta),
        np.asarray(r, dtype=float), c.v, c.w, c.n_max,
        np.asarray(n0, dtype=float).copy(), int(i0),
        np.asarray(switch_times, dtype=float), np.asarray(switch_modes, dtype=np.int64),
        float(dt), float(T), int(record_every), _method_code(method), CLAMP_TOL,
    )
    if bad >= 0:
        raise StepTooLarge(t_bad, int(bad), float(val))
    return PathSolution(t=t, modes=m, n=n)


def integrate_fixed_mode(model: FreewayModel, i: int, n0, r, dt: float = DEFAULT_DT,
                         T: float = 1.0, method: str = "rk4") -> np.ndarray:
    """Approximate the flow map of mode ``i`` after time ``T``."""
    n0 = np.asarray(n0, dtype=float)
    if T == 0:
        return n0.copy()
    sol = integrate_path(model, r, n0, i, np.empty(0), np.empty(0, dtype=np.int64),
                         dt, T, record_every=max(1, int(np.ceil(T / dt))), method=method)
    return sol.n[-1].copy()
