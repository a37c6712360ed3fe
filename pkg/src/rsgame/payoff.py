"""Monte Carlo estimates of the risk-sensitive costs J^i = E^{u,v}[exp(int h_i + g^i)].

Two estimators share one per-path kernel:

``direct``
    Euler paths under the game drift, left-endpoint quadrature of the
    running cost.
``reweighted``
    driftless paths weighted by the Doleans-Dade exponential of
    ``sigma^{-1} f`` along the path.

Both apply ``theta`` by pre-scaling ``h`` and ``g`` (as the model does).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .feedback import FeedbackControls
from .girsanov import LOG_LIMIT, dolean_dade, game_integrand
from .model import GameModel
from .sde import TimeGrid, simulate_controlled, simulate_driftless

__all__ = [
    "FLAG_LIMIT",
    "FeedbackControls",
    "PayoffEstimate",
    "PayoffOverflowError",
    "RepresentationReport",
    "check_bsde_representation",
    "eval_payoff_direct",
    "eval_payoff_reweighted",
    "payoff_samples",
    "write_payoff_rows",
]

FLAG_LIMIT = 1e-3


class PayoffOverflowError(RuntimeError):
    pass


@dataclass
class PayoffEstimate:
    value: float
    std_error: float
    n_paths: int
    method: str
    which: int = 1
    n_flagged: int = 0
    seed: Optional[int] = None
    tag: str = ""

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be nonnegative")

    @property
    def log_value(self) -> float:
        return math.log(self.value)


@dataclass
class PathSamples:
    """Per-path log integrands ``log(zeta_T) + int h_i + g^i`` for both players."""

    log_values: np.ndarray  # (2, n)
    flagged: np.ndarray  # (2, n)
    method: str

    def values(self, which: int) -> np.ndarray:
        lv = self.log_values[which - 1]
        out = np.exp(np.clip(lv, -LOG_LIMIT, LOG_LIMIT))
        out[self.flagged[which - 1]] = np.nan
        return out


def payoff_samples(
    model: GameModel,
    feedback: FeedbackControls,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    method: str = "direct",
    increments=None,
    workers=None,
) -> PathSamples:
    if method == "direct":
        paths = simulate_controlled(model, grid, n_paths, seed, feedback, increments=increments, workers=workers)
        running = np.zeros((2, n_paths))
        times = grid.times
        for k in range(grid.n_steps):
            iu, iv = paths.controls[:, k, 0], paths.controls[:, k, 1]
            x = paths.states[:, k]
            for i in (1, 2):
                running[i - 1] += model.running_at(i, times[k], x, iu, iv) * grid.dt
        logw = np.zeros(n_paths)
    elif method == "reweighted":
        paths = simulate_driftless(model, grid, n_paths, seed, increments=increments, workers=workers)
        running = np.zeros((2, n_paths))

        def on_step(k, t, x, rec):
            for i in (1, 2):
                running[i - 1] += model.running_at(i, t, x, rec["iu"], rec["iv"]) * grid.dt

        weights = dolean_dade(paths, game_integrand(model, feedback), on_step=on_step)
        logw = weights.log_terminal
    else:
        raise ValueError(f"unknown payoff method {method!r}")
    XT = paths.states[:, -1]
    logv = np.stack([logw + running[i - 1] + model.terminal(i, XT) for i in (1, 2)])
    flagged = ~np.isfinite(logv) | (np.abs(logv) > LOG_LIMIT)
    return PathSamples(logv, flagged, method)


def _estimate(samples: PathSamples, which: int, seed, tag) -> PayoffEstimate:
    v = samples.values(which)
    flagged = samples.flagged[which - 1]
    n = len(v)
    nf = int(flagged.sum())
    if nf > FLAG_LIMIT * n:
        raise PayoffOverflowError(f"{nf} of {n} paths overflowed the exponent (limit {FLAG_LIMIT:.1%})")
    keep = v[~flagged]
    se = float(keep.std(ddof=1) / math.sqrt(len(keep))) if len(keep) > 1 else 0.0
    return PayoffEstimate(float(keep.mean()), se, len(keep), samples.method, which, nf, seed, tag)


def eval_payoff_direct(model, feedback, grid, n_paths, seed, which: int = 1, increments=None, workers=None) -> PayoffEstimate:
    s = payoff_samples(model, feedback, grid, n_paths, seed, "direct", increments, workers)
    return _estimate(s, which, seed, feedback.tag)


def eval_payoff_reweighted(model, feedback, grid, n_paths, seed, which: int = 1, increments=None, workers=None) -> PayoffEstimate:
    s = payoff_samples(model, feedback, grid, n_paths, seed, "reweighted", increments, workers)
    return _estimate(s, which, seed, feedback.tag)


def eval_payoffs(model, feedback, grid, n_paths, seed, method="direct", increments=None, workers=None):
    """Both players' estimates from one simulation."""
    s = payoff_samples(model, feedback, grid, n_paths, seed, method, increments, workers)
    return _estimate(s, 1, seed, feedback.tag), _estimate(s, 2, seed, feedback.tag)


@dataclass
class RepresentationCase:
    which: int
    bsde_value: float
    bsde_se: float
    mc_value: float
    mc_se: float
    combined_se: float
    z_score: float
    passed: bool


@dataclass
class RepresentationReport:
    cases: list
    tol_se: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cases)

    def rows(self) -> list:
        return [asdict(c) for c in self.cases]


def check_bsde_representation(
    model: GameModel,
    feedback: FeedbackControls,
    solution,
    tol_se: float = 3.0,
    n_paths: int = 40_000,
    seed: int = 1,
    method: str = "direct",
    grid: Optional[TimeGrid] = None,
) -> RepresentationReport:
    """Compare exp(Y_0^i) of a fixed-control solution with an independent J^i estimate.

    Pass a seed different from the solution's to keep the two sides
    independent; the combined SE is then the root sum of squares.
    """
    grid = grid or solution.grid
    estimates = eval_payoffs(model, feedback, grid, n_paths, seed, method)
    cases = []
    for i in (1, 2):
        b = float(np.exp(solution.y0[i - 1]))
        bse = float(solution.ybar0_se[i - 1])
        est = estimates[i - 1]
        comb = math.hypot(bse, est.std_error)
        diff = abs(b - est.value)
        # agreement to rounding counts as exact, whatever the SEs are
        exact = diff <= 1e-12 * max(1.0, b)
        z = 0.0 if exact else (diff / comb if comb > 0 else math.inf)
        ok = exact or diff <= tol_se * comb
        cases.append(RepresentationCase(i, b, bse, est.value, est.std_error, comb, z, bool(ok)))
    return RepresentationReport(cases, tol_se)


PAYOFF_FIELDS = ["model_hash", "feedback", "which", "value", "std_error", "n_paths", "seed", "method"]


def write_payoff_rows(path, estimates, model_hash: str) -> None:
    from .io import fmt

    p = Path(path)
    new = not p.exists()
    with p.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(PAYOFF_FIELDS)
        for e in estimates:
            w.writerow([model_hash, e.tag, e.which, fmt(e.value), fmt(e.std_error), e.n_paths, e.seed, e.method])
