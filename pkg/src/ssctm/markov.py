"""Capacity-mode Markov chain: ergodicity, steady state, path sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components


class SingularSystem(np.linalg.LinAlgError):
    """The steady-state system has no unique solution (reducible chain)."""


def rng_from(seed) -> np.random.Generator:
    """A PCG64 generator from an int seed, a ``SeedSequence`` or a generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def is_ergodic(Lambda) -> bool:
    """True iff the digraph of positive off-diagonal rates is strongly connected."""
    L = np.asarray(Lambda, dtype=float)
    m = L.shape[0]
    if m == 1:
        return True
    adj = (L > 0) & ~np.eye(m, dtype=bool)
    ncomp, _ = connected_components(adj, directed=True, connection="strong")
    return ncomp == 1


def steady_state(Lambda) -> np.ndarray:
    """Unique probability vector ``p`` with ``p @ Lambda = 0``.

    One balance equation is replaced by the normalisation row.
    """
    L = np.asarray(Lambda, dtype=float)
    m = L.shape[0]
    if not is_ergodic(L):
        raise SingularSystem("rate matrix is reducible; steady state not unique")
    A = L.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    try:
        p = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    resid = np.abs(p @ L).max() / max(1.0, np.abs(L).max())
    if resid > 1e-10 or np.any(p < -1e-12):
        raise SingularSystem(f"steady-state residual {resid:.3g} too large")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


@dataclass(frozen=True)
class ModePath:
    """Piecewise-constant mode trajectory on ``[0, horizon]``.

    ``times[j]`` is the epoch at which the chain jumps to ``modes[j]``.
    """

    initial_mode: int
    times: np.ndarray
    modes: np.ndarray
    horizon: float

    @property
    def events(self) -> list[tuple[float, int]]:
        return list(zip(self.times.tolist(), self.modes.tolist()))

    def mode_at(self, t: float) -> int:
        j = np.searchsorted(self.times, t, side="right")
        return int(self.initial_mode if j == 0 else self.modes[j - 1])

    def occupancy(self, m: int) -> np.ndarray:
        """Fraction of ``[0, horizon]`` spent in each of the ``m`` modes."""
        edges = np.concatenate([[0.0], self.times, [self.horizon]])
        seq = np.concatenate([[self.initial_mode], self.modes]).astype(int)
        occ = np.zeros(m)
        np.add.at(occ, seq, np.diff(edges))
        return occ / self.horizon


def sample_mode_path(Lambda, i0: int, horizon: float, seed) -> ModePath:
    """Exact sample of the mode chain: exponential dwell, then an embedded jump."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    L = np.asarray(Lambda, dtype=float)
    m = L.shape[0]
    rng = rng_from(seed)
    rates = L - np.diag(np.diag(L))
    nu = rates.sum(axis=1)
    times: list[float] = []
    modes: list[int] = []
    t, i = 0.0, int(i0)
    while nu[i] > 0:
        t += rng.exponential(1.0 / nu[i])
        if t >= horizon:
            break
        i = int(rng.choice(m, p=rates[i] / nu[i]))
        times.append(t)
        modes.append(i)
    return ModePath(i0, np.array(times, dtype=float), np.array(modes, dtype=np.int64), float(horizon))


def occupancy_variance(Lambda, horizon: float) -> np.ndarray:
    """Asymptotic variance of each mode's occupancy fraction over ``horizon``.

    Uses ``Var(T_i(t)/t) ~ 2 p_i Z_ii / t`` with the fundamental matrix
    ``Z = (1 p - Lambda)^-1 - 1 p``.
    """
    L = np.asarray(Lambda, dtype=float)
    p = steady_state(L)
    Pi = np.outer(np.ones_like(p), p)
    Z = np.linalg.inv(Pi - L) - Pi
    return 2.0 * p * np.diag(Z) / horizon
