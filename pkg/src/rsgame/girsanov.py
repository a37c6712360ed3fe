"""Doleans-Dade exponentials along simulated paths and reweighted expectations.

Weights are accumulated in log space,

    log zeta_{k+1} = log zeta_k + phi_k . dB_k - |phi_k|^2 dt / 2,

and exponentiated only at use.  A path whose log weight leaves
``[-LOG_LIMIT, LOG_LIMIT]`` is flagged and excluded from means.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .feedback import FeedbackControls
from .model import GameModel
from .sde import PathBundle

__all__ = [
    "LOG_LIMIT",
    "AllWeightsFlagged",
    "LpReport",
    "WeightSeries",
    "dolean_dade",
    "game_integrand",
    "probe_lp_bound",
    "reweighted_mean",
]

LOG_LIMIT = 700.0


class AllWeightsFlagged(RuntimeError):
    pass


@dataclass
class WeightSeries:
    """``log_zeta`` is ``(n, K + 1)`` with ``log_zeta[:, 0] == 0``; ``phi`` is ``(n, K, m)``."""

    log_zeta: np.ndarray
    phi: np.ndarray
    flagged: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.log_zeta.shape[0]

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())

    @property
    def zeta(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_zeta)

    @property
    def log_terminal(self) -> np.ndarray:
        return self.log_zeta[:, -1]

    @property
    def terminal(self) -> np.ndarray:
        """zeta_T with flagged paths set to NaN."""
        out = np.exp(np.clip(self.log_terminal, -LOG_LIMIT, LOG_LIMIT))
        out[self.flagged] = np.nan
        return out


def game_integrand(model: GameModel, feedback: FeedbackControls) -> Callable:
    """phi(t, x) = sigma^{-1}(t, x) f(t, x, u(t, x), v(t, x)).

    The returned callable also reports the indices it used via an optional
    ``record`` dict argument, so callers can reuse them for running costs.
    """

    def phi(t, x, record=None):
        iu, iv = feedback.indices(t, x)
        f = model.drift_at(t, x, iu, iv)
        if record is not None:
            record["iu"], record["iv"] = iu, iv
        if model.sigma.is_constant:
            return f @ model.sigma._inv.T
        return np.einsum("nij,nj->ni", model.sigma_inv(t, x), f)

    phi.feedback = feedback
    return phi


def dolean_dade(paths: PathBundle, integrand: Callable, on_step: Optional[Callable] = None) -> WeightSeries:
    """Discrete exponential of ``integrand(t_k, X_k)`` against the path increments.

    ``integrand`` may be a callable or a constant vector.  ``on_step(k, t,
    x, record)`` is invoked after each evaluation when given.
    """
    X, dB = paths.states, paths.brownian_increments
    n, K, m = dB.shape
    dt = paths.grid.dt
    times = paths.grid.times
    logz = np.zeros((K + 1, n)).T
    phis = np.empty((K, n, m)).transpose(1, 0, 2)
    const = None if callable(integrand) else np.broadcast_to(np.asarray(integrand, dtype=float), (m,))
    takes_record = const is None and len(inspect.signature(integrand).parameters) >= 3
    for k in range(K):
        record = {}
        if const is not None:
            ph = np.broadcast_to(const, (n, m))
        else:
            ph = integrand(times[k], X[:, k], record) if takes_record else integrand(times[k], X[:, k])
        ph = np.asarray(ph, dtype=float)
        phis[:, k] = ph
        logz[:, k + 1] = logz[:, k] + np.einsum("ni,ni->n", ph, dB[:, k]) - 0.5 * np.einsum("ni,ni->n", ph, ph) * dt
        if on_step is not None:
            on_step(k, times[k], X[:, k], record)
    flagged = ~np.all(np.isfinite(logz), axis=1) | (np.max(np.abs(logz), axis=1) > LOG_LIMIT)
    return WeightSeries(logz, phis, flagged)


@dataclass
class LpReport:
    p_grid: list
    estimates: list
    half_estimates: list
    stable: list
    best_p: Optional[float]
    n_paths: int

    def rows(self) -> list:
        return [
            {"p": p, "estimate": e, "half_sample": h, "stable": s}
            for p, e, h, s in zip(self.p_grid, self.estimates, self.half_estimates, self.stable)
        ]


def probe_lp_bound(weights: WeightSeries, p_grid, tolerance: float = 0.10) -> LpReport:
    """E[zeta_T^p] per p; a p is stable when halving the sample moves the estimate by < ``tolerance``."""
    lz = weights.log_terminal[~weights.flagged]
    n = len(lz)
    half = lz[: n // 2]
    est, hest, stable = [], [], []
    best = None
    for p in p_grid:
        with np.errstate(over="ignore"):
            e = float(np.mean(np.exp(p * lz))) if n else np.nan
            h = float(np.mean(np.exp(p * half))) if len(half) else np.nan
        ok = bool(np.isfinite(e) and np.isfinite(h) and e > 0 and abs(h - e) / e < tolerance)
        est.append(e)
        hest.append(h)
        stable.append(ok)
        if ok and (best is None or p > best):
            best = float(p)
    return LpReport([float(p) for p in p_grid], est, hest, stable, best, n)


def reweighted_mean(values, weights) -> tuple[float, float, int, int]:
    """Mean of ``zeta_T * values`` over unflagged paths.

    Returns ``(value, std_error, n_used, n_flagged)``.  For a plain mean the
    jackknife standard error coincides with ``std / sqrt(n)``.
    """
    v = np.asarray(values, dtype=float)
    if isinstance(weights, WeightSeries):
        w = weights.terminal
        flagged = weights.flagged.copy()
    else:
        w = np.asarray(weights, dtype=float)
        flagged = ~np.isfinite(w)
    flagged |= ~np.isfinite(v)
    keep = ~flagged
    n = int(keep.sum())
    if n == 0:
        raise AllWeightsFlagged("every path is flagged; no reweighted mean available")
    prod = w[keep] * v[keep]
    se = float(prod.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(prod.mean()), se, n, int(flagged.sum())
