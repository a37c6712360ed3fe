"""Statistical Nash verification by unilateral feedback deviations.

Every deviation is simulated on the same Brownian increments as the
baseline, so margins are paired differences with small variance and are
exactly zero whenever a deviation reproduces the equilibrium controls.

A passing certificate is evidence, not proof: the equilibrium inequality
ranges over all admissible adapted controls, and only a finite suite of
Markovian deviations is tested.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .feedback import FeedbackControls
from .model import GameModel
from .payoff import FLAG_LIMIT, PayoffOverflowError, payoff_samples
from .sde import TimeGrid, brownian_increments, worker_count

__all__ = [
    "Deviation",
    "DeviationResult",
    "DeviationSuite",
    "NashCertificate",
    "default_deviation_suite",
    "verify_nash",
]


@dataclass(frozen=True)
class Deviation:
    """Player ``player`` switches to ``build(equilibrium)``'s component."""

    player: int
    description: str
    build: Callable  # equilibrium FeedbackControls -> index function (t, x) -> idx


@dataclass
class DeviationSuite:
    deviations: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.deviations)

    def __iter__(self):
        return iter(self.deviations)

    def count(self, kind: str) -> int:
        return sum(d.description.startswith(kind) for d in self.deviations)


def _constant(size: int, idx: int) -> Callable:
    return lambda eq: (lambda t, x: np.full(len(np.atleast_2d(x)), idx, dtype=np.int64))


def _lagged(player: int, dt: float) -> Callable:
    def build(eq: FeedbackControls):
        comp = eq.component(player)
        return lambda t, x: comp(max(t - dt, 0.0), x)

    return build


def _random_table(
    size: int, seed: int, index: int, x0: np.ndarray, T: float, spread: float, n_time: int = 4, n_state: int = 8
) -> Callable:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0x5EED, index))))
    table = rng.integers(0, size, size=(n_time, n_state))
    lo = x0[0] - 3.0 * math.sqrt(T) * spread
    hi = x0[0] + 3.0 * math.sqrt(T) * spread
    edges = np.linspace(lo, hi, n_state + 1)[1:-1]

    def build(eq):
        def fn(t, x):
            x = np.atleast_2d(x)
            tb = min(int(t / T * n_time), n_time - 1)
            sb = np.searchsorted(edges, x[:, 0])
            return table[tb, sb]

        return fn

    return build


def default_deviation_suite(
    model: GameModel,
    seed: int,
    n_random: int = 10,
    dt: Optional[float] = None,
) -> DeviationSuite:
    """Constant controls of each grid, one-step time lags of the equilibrium
    (when ``dt`` is given) and ``n_random`` seeded random feedback tables,
    alternating between the players.

    Random tables are piecewise constant on 4 time buckets times 8 bins of
    the first state coordinate over ``x0 +- 3 sqrt(T) |sigma|``.
    """
    devs = []
    for player, grid in ((1, model.control_grid_1), (2, model.control_grid_2)):
        for idx in range(grid.size):
            pt = np.array2string(grid.points[idx], precision=4, separator=",")
            devs.append(Deviation(player, f"constant u{player}[{idx}]={pt}", _constant(grid.size, idx)))
    if dt is not None:
        for player in (1, 2):
            devs.append(Deviation(player, f"lagged equilibrium player {player} by dt={dt:g}", _lagged(player, dt)))
    spread = float(np.linalg.norm(model.sigma_at(0.0, model.x0[None])[0], 2))
    for r in range(n_random):
        player = 1 + (r % 2)
        size = model.grids[player - 1].size
        devs.append(
            Deviation(
                player,
                f"random table #{r} player {player}",
                _random_table(size, seed, r, model.x0, model.horizon_T, spread),
            )
        )
    return DeviationSuite(devs)


@dataclass
class DeviationResult:
    player: int
    description: str
    value: float
    std_error: float
    margin: float
    margin_se: float
    passed: bool


@dataclass
class NashCertificate:
    baseline: list  # [(J, se)] for players 1, 2
    deviations: list
    k: float
    n_paths: int
    seed: int
    tag: str
    note: str = (
        "evidence, not proof: only the listed Markovian deviations were tested; "
        "the equilibrium inequality ranges over all admissible controls"
    )

    @property
    def passed(self) -> bool:
        return all(d.passed for d in self.deviations)

    def passed_at(self, k: float) -> bool:
        return all(_margin_ok(d.margin, d.margin_se, k) for d in self.deviations)

    @property
    def worst(self) -> Optional[DeviationResult]:
        if not self.deviations:
            return None

        def score(d):
            return d.margin / d.margin_se if d.margin_se > 0 else (0.0 if d.margin >= 0 else -math.inf)

        return min(self.deviations, key=score)

    def to_dict(self) -> dict:
        return {
            "verdict": "PASS" if self.passed else "FAIL",
            "k": self.k,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "equilibrium": self.tag,
            "baseline": [{"player": i + 1, "J": j, "std_error": s} for i, (j, s) in enumerate(self.baseline)],
            "deviations": [asdict(d) for d in self.deviations],
            "note": self.note,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def rows(self) -> list:
        return [asdict(d) for d in self.deviations]


def _margin_ok(margin: float, se: float, k: float) -> bool:
    # tiny absolute slack so that rounding in exactly paired runs never fails
    return bool(margin >= -k * se - 1e-14)


def _paired(base: np.ndarray, dev: np.ndarray, base_flag: np.ndarray, dev_flag: np.ndarray):
    bad = base_flag | dev_flag
    n = len(base)
    if bad.sum() > FLAG_LIMIT * n:
        raise PayoffOverflowError(f"{int(bad.sum())} of {n} paths overflowed in a deviation run")
    keep = ~bad
    d = dev[keep] - base[keep]
    nk = int(keep.sum())
    v = dev[keep]
    se_v = float(v.std(ddof=1) / math.sqrt(nk)) if nk > 1 else 0.0
    se_d = float(d.std(ddof=1) / math.sqrt(nk)) if nk > 1 else 0.0
    return float(v.mean()), se_v, float(d.mean()), se_d


def verify_nash(
    model: GameModel,
    equilibrium: FeedbackControls,
    deviation_suite: DeviationSuite,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    k: float = 3.0,
    method: str = "direct",
    workers: Optional[int] = None,
) -> NashCertificate:
    """Baseline J^i(u*, v*) and J^i under each unilateral deviation, all on common noise.

    The margin of a deviation is the paired mean of ``J_dev - J_base`` per
    path, and its SE is the paired-difference SE.
    """
    dB = brownian_increments(n_paths, grid, model.dim_m, seed, workers)
    base = payoff_samples(model, equilibrium, grid, n_paths, seed, method, increments=dB)
    bvals = [base.values(i) for i in (1, 2)]
    baseline = []
    for i in (1, 2):
        v = bvals[i - 1][~base.flagged[i - 1]]
        baseline.append((float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0))

    def run(dev: Deviation) -> DeviationResult:
        fb = equilibrium.with_player(dev.player, dev.build(equilibrium), f"{equilibrium.tag}|{dev.description}")
        s = payoff_samples(model, fb, grid, n_paths, seed, method, increments=dB)
        i = dev.player
        val, se, margin, mse = _paired(bvals[i - 1], s.values(i), base.flagged[i - 1], s.flagged[i - 1])
        return DeviationResult(i, dev.description, val, se, margin, mse, _margin_ok(margin, mse, k))

    w = worker_count(workers)
    devs = list(deviation_suite)
    if w > 1 and len(devs) > 1:
        with ThreadPoolExecutor(max_workers=w) as pool:
            results = list(pool.map(run, devs))
    else:
        results = [run(d) for d in devs]
    return NashCertificate(baseline, results, k, n_paths, seed, equilibrium.tag)


def write_margin_csv(cert: NashCertificate, path) -> None:
    from .io import write_csv

    write_csv(path, cert.rows(), ["player", "description", "value", "std_error", "margin", "margin_se", "passed"])
