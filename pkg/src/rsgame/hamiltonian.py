"""Hamiltonians of the two players and grid Nash selection (Isaacs map).

For co-states ``p, q`` the players face the static bimatrix game

    A1[i, j] = p . sigma^{-1} f(t, x, u_i, v_j) + h_1(t, x, u_i, v_j)
    A2[i, j] = q . sigma^{-1} f(t, x, u_i, v_j) + h_2(t, x, u_i, v_j)

where the row player minimises ``A1`` and the column player ``A2``.  The
Isaacs map returns the lexicographically smallest pure equilibrium.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .model import GameModel

__all__ = [
    "IsaacsMap",
    "IsaacsResult",
    "NoEquilibrium",
    "StaticGame",
    "build_isaacs_map",
    "eval_hamiltonian",
    "pure_nash_mask",
    "solve_static_nash",
]


class NoEquilibrium(RuntimeError):
    """No pure grid equilibrium exists for the static game at (t, x, p, q)."""

    def __init__(self, t=None, x=None, p=None, q=None):
        self.t = None if t is None else float(t)
        self.x = None if x is None else np.asarray(x, dtype=float).tolist()
        self.p = None if p is None else np.asarray(p, dtype=float).tolist()
        self.q = None if q is None else np.asarray(q, dtype=float).tolist()
        if t is None:
            msg = "static game has no pure Nash equilibrium"
        else:
            msg = f"no pure grid equilibrium at t={self.t:g}, x={self.x}, p={self.p}, q={self.q}"
        super().__init__(msg)


@dataclass(frozen=True)
class StaticGame:
    """Bimatrix cost game; both players minimise."""

    A1: np.ndarray
    A2: np.ndarray

    def __post_init__(self):
        A1 = np.asarray(self.A1, dtype=float)
        A2 = np.asarray(self.A2, dtype=float)
        if A1.ndim != 2 or A1.shape != A2.shape:
            raise ValueError(f"cost matrices must share a 2-d shape, got {A1.shape} and {A2.shape}")
        if not (np.all(np.isfinite(A1)) and np.all(np.isfinite(A2))):
            raise ValueError("cost matrices must be finite")
        object.__setattr__(self, "A1", A1)
        object.__setattr__(self, "A2", A2)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A1.shape

    def is_equilibrium(self, i: int, j: int) -> bool:
        return bool(self.A1[i, j] <= self.A1[:, j].min() and self.A2[i, j] <= self.A2[i, :].min())


def pure_nash_mask(A1: np.ndarray, A2: np.ndarray) -> np.ndarray:
    """Boolean mask of pure equilibria; works on stacks ``(..., n1, n2)``."""
    rows_ok = A1 <= A1.min(axis=-2, keepdims=True)
    cols_ok = A2 <= A2.min(axis=-1, keepdims=True)
    return rows_ok & cols_ok


def solve_static_nash(game: StaticGame, tie_break: str = "lexicographic") -> tuple[int, int]:
    """Lexicographically smallest pure equilibrium ``(i, j)``; raises :class:`NoEquilibrium`."""
    if tie_break != "lexicographic":
        raise ValueError(f"unsupported tie_break {tie_break!r}")
    mask = pure_nash_mask(game.A1, game.A2)
    flat = mask.ravel()
    if not flat.any():
        raise NoEquilibrium()
    i, j = divmod(int(np.argmax(flat)), mask.shape[1])
    return i, j


def eval_hamiltonian(model: GameModel, t: float, x, p, u, v, which: int) -> float:
    """H_i(t, x, p, u, v) = p . sigma^{-1}(t, x) f(t, x, u, v) + theta h_i(t, x, u, v).

    ``u`` and ``v`` are control points (not grid indices).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    U = np.atleast_2d(np.asarray(u, dtype=float))
    V = np.atleast_2d(np.asarray(v, dtype=float))
    f = model.drift_f.evaluate(t, x, U, V)[0, 0, 0]
    sinv = model.sigma_inv(t, x)[0]
    h = model.running_costs[which - 1].evaluate(t, x, U, V)[0, 0, 0]
    return float(np.dot(np.asarray(p, dtype=float), sinv @ f) + model.theta * h)


@dataclass
class IsaacsResult:
    """Pointwise equilibrium selection for a batch of ``n`` states."""

    iu: np.ndarray
    iv: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    phi: np.ndarray  # sigma^{-1} f at the selected pair, (n, m)
    h1: np.ndarray
    h2: np.ndarray
    n_equilibria: np.ndarray


@dataclass
class IsaacsMap:
    """Evaluable best-response pair ``(u*, v*)(t, x, p, q)`` over the control grids.

    Calls are pure apart from the multiplicity counters, which are guarded
    by a lock.
    """

    model: GameModel
    stats: dict = field(default_factory=lambda: {"calls": 0, "points": 0, "multiple": 0, "ambiguous_values": 0})

    def __post_init__(self):
        self._lock = threading.Lock()

    def tables(self, t: float, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(sigma^{-1} f, theta h_1, theta h_2) for all grid pairs."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        phi = self.model.normalized_drift_all(t, x)
        return phi, self.model.running_all(1, t, x), self.model.running_all(2, t, x)

    def games(self, t: float, x, p, q) -> tuple[np.ndarray, np.ndarray, tuple]:
        phi, h1, h2 = self.tables(t, x)
        A1 = np.einsum("nabm,nm->nab", phi, np.atleast_2d(p)) + h1
        A2 = np.einsum("nabm,nm->nab", phi, np.atleast_2d(q)) + h2
        return A1, A2, (phi, h1, h2)

    def __call__(self, t: float, x, p, q) -> IsaacsResult:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = np.atleast_2d(np.asarray(p, dtype=float))
        q = np.atleast_2d(np.asarray(q, dtype=float))
        n = x.shape[0]
        A1, A2, (phi, h1, h2) = self.games(t, x, p, q)
        mask = pure_nash_mask(A1, A2)
        flat = mask.reshape(n, -1)
        found = flat.any(axis=1)
        if not found.all():
            k = int(np.argmin(found))
            raise NoEquilibrium(t, x[k], p[k], q[k])
        n2 = A1.shape[2]
        pick = np.argmax(flat, axis=1)
        iu, iv = np.divmod(pick, n2)
        rows = np.arange(n)
        H1 = A1[rows, iu, iv]
        H2 = A2[rows, iu, iv]
        count = flat.sum(axis=1)
        multi = count > 1
        ambiguous = 0
        if multi.any():
            v1 = np.where(mask[multi], A1[multi], np.nan)
            v2 = np.where(mask[multi], A2[multi], np.nan)
            spread = (np.nanmax(v1, axis=(1, 2)) - np.nanmin(v1, axis=(1, 2))) + (
                np.nanmax(v2, axis=(1, 2)) - np.nanmin(v2, axis=(1, 2))
            )
            ambiguous = int(np.sum(spread > 1e-12))
        with self._lock:
            self.stats["calls"] += 1
            self.stats["points"] += n
            self.stats["multiple"] += int(multi.sum())
            self.stats["ambiguous_values"] += ambiguous
        return IsaacsResult(
            iu=iu,
            iv=iv,
            H1=H1,
            H2=H2,
            phi=phi[rows, iu, iv],
            h1=h1[rows, iu, iv],
            h2=h2[rows, iu, iv],
            n_equilibria=count,
        )

    def verify(self, t: float, x, p, q, result: IsaacsResult) -> bool:
        """Full scan of both equilibrium inequalities at the returned pair."""
        A1, A2, _ = self.games(t, x, p, q)
        rows = np.arange(A1.shape[0])
        ok1 = A1[rows, result.iu, result.iv] <= A1[rows, :, result.iv].min(axis=1)
        ok2 = A2[rows, result.iu, result.iv] <= A2[rows, result.iu, :].min(axis=1)
        return bool(np.all(ok1 & ok2))

    def count_kinks(self, t: float, x, p0, direction, q, n_points: int = 201, span: float = 1.0) -> int:
        """Number of slope changes of H_1* along ``p0 + s * direction``, ``s in [-span, span]``."""
        s = np.linspace(-span, span, n_points)
        x = np.atleast_2d(x)
        P = np.asarray(p0, dtype=float)[None] + s[:, None] * np.asarray(direction, dtype=float)[None]
        X = np.repeat(x, n_points, axis=0)
        Q = np.repeat(np.atleast_2d(q), n_points, axis=0)
        H = self(t, X, P, Q).H1
        slope = np.diff(H) / np.diff(s)
        return int(np.sum(np.abs(np.diff(slope)) > 1e-8))


def build_isaacs_map(model: GameModel) -> IsaacsMap:
    return IsaacsMap(model)
