"""Brownian paths and Euler-Maruyama trajectories.

Noise is drawn in blocks of ``BLOCK`` paths, each block from its own
Philox stream keyed by ``(seed, block)``.  Path ``i`` therefore sees the
same increments whatever the total path count or the number of workers,
and two simulations with the same seed share their Brownian increments
(common random numbers).
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .model import BoundedDriftSpec, GameModel

__all__ = [
    "BLOCK",
    "MomentReport",
    "PathBundle",
    "SimulationError",
    "TimeGrid",
    "brownian_increments",
    "coarsen_increments",
    "dump_paths",
    "load_paths",
    "moment_diagnostics",
    "simulate_bounded_drift",
    "simulate_controlled",
    "simulate_driftless",
    "worker_count",
]

BLOCK = 1024
_MAGIC = b"RSGPATH1"


class SimulationError(RuntimeError):
    def __init__(self, msg: str, path: int, step: int):
        self.path = path
        self.step = step
        super().__init__(f"{msg} (path {path}, step {step})")


def worker_count(workers: Optional[int] = None) -> int:
    """Explicit value, else ``RSG_WORKERS``, else 1."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("RSG_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("t_start must be < t_end")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be positive")

    @classmethod
    def for_model(cls, model: GameModel, n_steps: int) -> "TimeGrid":
        return cls(0.0, model.horizon_T, n_steps)

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Slice index ``k`` with ``t_k <= t < t_{k+1}``, clipped to ``[0, n_steps - 1]``."""
        k = int(np.floor((t - self.t_start) / self.dt + 1e-9))
        return min(max(k, 0), self.n_steps - 1)

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_end, self.n_steps * factor)


@dataclass
class PathBundle:
    """Increments ``(n, K, m)`` and states ``(n, K + 1, m)`` on a time grid.

    ``controls`` holds the grid indices used at each step, ``(n, K, 2)``,
    for controlled simulations.
    """

    grid: TimeGrid
    n_paths: int
    brownian_increments: np.ndarray
    states: np.ndarray
    seed: int
    controls: Optional[np.ndarray] = None
    kind: str = "driftless"
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.states.shape[2]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1]

    def at_time(self, s: float) -> np.ndarray:
        k = int(round((s - self.grid.t_start) / self.grid.dt))
        if not (0 <= k <= self.grid.n_steps) or abs(self.grid.t_start + k * self.grid.dt - s) > 1e-9 * max(1.0, abs(s)):
            raise ValueError(f"time {s} is not a grid node")
        return self.states[:, k]


def _block_noise(seed: int, block: int, n_steps: int, m: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    return np.random.Generator(np.random.Philox(ss)).standard_normal((BLOCK, n_steps, m))


def brownian_increments(n_paths: int, grid: TimeGrid, m: int, seed: int, workers: Optional[int] = None) -> np.ndarray:
    """Increments ``(n_paths, K, m)`` with variance ``dt``; path ``i`` depends on ``(seed, i)`` only."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    K = grid.n_steps
    n_blocks = -(-n_paths // BLOCK)
    # stored time-major so that per-step slices dB[:, k] are contiguous
    out = np.empty((K, n_paths, m))
    scale = np.sqrt(grid.dt)

    def fill(b):
        lo = b * BLOCK
        hi = min(lo + BLOCK, n_paths)
        out[:, lo:hi] = _block_noise(seed, b, K, m)[: hi - lo].transpose(1, 0, 2) * scale

    w = worker_count(workers)
    if w == 1 or n_blocks == 1:
        for b in range(n_blocks):
            fill(b)
    else:
        with ThreadPoolExecutor(max_workers=w) as pool:
            list(pool.map(fill, range(n_blocks)))
    return out.transpose(1, 0, 2)


def coarsen_increments(dB: np.ndarray, factor: int = 2) -> np.ndarray:
    """Sum consecutive groups of fine increments onto a coarser grid."""
    n, K, m = dB.shape
    if K % factor:
        raise ValueError("n_steps is not divisible by factor")
    return dB.reshape(n, K // factor, factor, m).sum(axis=2)


def _increments(model, grid, n_paths, seed, increments, workers):
    if increments is None:
        return brownian_increments(n_paths, grid, model.dim_m, seed, workers)
    dB = np.asarray(increments, dtype=float)
    if dB.shape != (n_paths, grid.n_steps, model.dim_m):
        raise ValueError(f"increments have shape {dB.shape}, expected {(n_paths, grid.n_steps, model.dim_m)}")
    return dB


def _start(model: GameModel, n_paths: int, x0) -> np.ndarray:
    x = model.x0 if x0 is None else np.asarray(x0, dtype=float)
    x = np.atleast_2d(x)
    return np.broadcast_to(x, (n_paths, model.dim_m)).astype(float)


def _euler(model, grid, dB, x, drift_fn):
    n, K, m = dB.shape
    X = np.empty((K + 1, n, m)).transpose(1, 0, 2)
    X[:, 0] = x
    times = grid.times
    for k in range(K):
        t = times[k]
        xk = X[:, k]
        try:
            dx = model.sigma.apply(t, xk, dB[:, k])
        except Exception as exc:
            raise SimulationError(f"sigma evaluation failed: {exc}", 0, k) from exc
        if drift_fn is not None:
            dx = dx + drift_fn(k, t, xk) * grid.dt
        bad = ~np.all(np.isfinite(dx), axis=1)
        if bad.any():
            raise SimulationError("non-finite state increment", int(np.argmax(bad)), k)
        X[:, k + 1] = xk + dx
    return X


def simulate_driftless(
    model: GameModel,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    x0=None,
    increments=None,
    workers: Optional[int] = None,
) -> PathBundle:
    """X_{k+1} = X_k + sigma(t_k, X_k) dB_k, started at ``x0`` (default ``model.x0``) at ``grid.t_start``."""
    dB = _increments(model, grid, n_paths, seed, increments, workers)
    X = _euler(model, grid, dB, _start(model, n_paths, x0), None)
    return PathBundle(grid, n_paths, dB, X, seed, kind="driftless")


def simulate_bounded_drift(
    b: BoundedDriftSpec,
    model: GameModel,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    x0=None,
    increments=None,
    workers: Optional[int] = None,
) -> PathBundle:
    """Euler scheme for d theta = b dt + sigma dB."""
    dB = _increments(model, grid, n_paths, seed, increments, workers)
    X = _euler(model, grid, dB, _start(model, n_paths, x0), lambda k, t, x: b.evaluate(t, x))
    return PathBundle(grid, n_paths, dB, X, seed, kind="bounded-drift")


def simulate_controlled(
    model: GameModel,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    feedback,
    x0=None,
    increments=None,
    workers: Optional[int] = None,
) -> PathBundle:
    """Euler scheme under the game drift with feedback controls; records the indices used."""
    dB = _increments(model, grid, n_paths, seed, increments, workers)
    controls = np.empty((n_paths, grid.n_steps, 2), dtype=np.int64)

    def drift(k, t, x):
        iu, iv = feedback.indices(t, x)
        controls[:, k, 0] = iu
        controls[:, k, 1] = iv
        return model.drift_at(t, x, iu, iv)

    X = _euler(model, grid, dB, _start(model, n_paths, x0), drift)
    return PathBundle(grid, n_paths, dB, X, seed, controls=controls, kind="controlled", meta={"feedback": feedback.tag})


# ---------------------------------------------------------------------------
# moments


@dataclass
class MomentReport:
    q_list: list
    moments: list  # E[(sup |X|)^{2q}]
    moment_se: list
    lam: float
    l: float
    exp_moment: float
    exp_moment_se: float
    finite: bool
    n_paths: int
    note: str = "sup over continuous time replaced by the max over grid nodes"

    def rows(self) -> list:
        out = [{"quantity": f"E[sup|X|^{2 * q:g}]", "value": v, "std_error": s} for q, v, s in zip(self.q_list, self.moments, self.moment_se)]
        out.append({"quantity": f"E[exp({self.lam:g} sup|X|^{self.l:g})]", "value": self.exp_moment, "std_error": self.exp_moment_se})
        return out


def moment_diagnostics(paths: PathBundle, q_list, lam: float, l: float) -> MomentReport:
    if not 1.0 <= l < 2.0:
        raise ValueError("l must lie in [1, 2)")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    sup = np.max(np.linalg.norm(paths.states, axis=2), axis=1)
    n = len(sup)
    moments, ses = [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for q in q_list:
            v = sup ** (2.0 * q)
            moments.append(float(v.mean()))
            ses.append(float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0)
        e = np.exp(lam * sup**l)
        em = float(e.mean())
        ese = float(e.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    vals = moments + ses + [em, ese]
    return MomentReport(
        q_list=[float(q) for q in q_list],
        moments=moments,
        moment_se=ses,
        lam=float(lam),
        l=float(l),
        exp_moment=em,
        exp_moment_se=ese,
        finite=bool(np.all(np.isfinite(vals))),
        n_paths=n,
    )


# ---------------------------------------------------------------------------
# binary dump
#
# layout: 8-byte magic, int64 n_paths, n_steps, m, seed, float64 t_start,
# t_end, then increments (n, K, m) and states (n, K + 1, m) as little-endian
# row-major doubles.

_HEADER = struct.Struct("<8s4q2d")


def dump_paths(paths: PathBundle, path) -> None:
    n, K, m = paths.brownian_increments.shape
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, n, K, m, int(paths.seed), paths.grid.t_start, paths.grid.t_end))
        fh.write(np.ascontiguousarray(paths.brownian_increments, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(paths.states, dtype="<f8").tobytes())


def load_paths(path) -> PathBundle:
    raw = Path(path).read_bytes()
    magic, n, K, m, seed, t0, t1 = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path} is not a path dump")
    off = _HEADER.size
    size_dB = n * K * m
    body = np.frombuffer(raw, dtype="<f8", offset=off)
    if body.size != size_dB + n * (K + 1) * m:
        raise ValueError(f"{path} is truncated")
    dB = body[:size_dB].reshape(n, K, m).copy()
    X = body[size_dB:].reshape(n, K + 1, m).copy()
    return PathBundle(TimeGrid(t0, t1, K), n, dB, X, seed)
