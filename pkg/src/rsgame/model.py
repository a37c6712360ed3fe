"""Game instances: coefficient families, growth constants and assumption probing.

A :class:`GameModel` bundles the diffusion ``sigma``, the controlled drift
``f``, the running and terminal costs of both players, the finite control
grids and the growth constants.  All coefficient families are closed
enumerations so that the constants can be derived analytically; a
``callable`` escape hatch exists for every family but marks the model as
statistically validated only.

Array conventions: states are ``(n, m)``; ``*_all`` evaluations return one
entry per control pair, ``(n, n1, n2[, m])``; ``*_at`` evaluations take one
pair of grid indices per state and return ``(n[, m])``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

__all__ = [
    "BoundedDriftSpec",
    "ControlGrid",
    "CostSpec",
    "DiffusionSpec",
    "DriftSpec",
    "GameModel",
    "ModelConstants",
    "SingularDiffusionError",
    "TerminalSpec",
    "ValidationReport",
    "AssumptionCheck",
    "derive_constants",
    "validate_model",
]


class SingularDiffusionError(ValueError):
    """Raised when sigma(t, x) is not invertible at some point."""

    def __init__(self, t: float, x: np.ndarray):
        self.t = float(t)
        self.x = np.asarray(x, dtype=float)
        super().__init__(f"sigma is singular at t={self.t:g}, x={self.x.tolist()}")


def _frozen(a, ndim=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim is not None:
        while arr.ndim < ndim:
            arr = arr[None]
    arr.setflags(write=False)
    return arr


def _as_states(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    return x


def _spectral(a: np.ndarray) -> float:
    a = np.atleast_2d(a)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


# ---------------------------------------------------------------------------
# control grids


@dataclass(frozen=True)
class ControlGrid:
    """Finite discretisation of a compact control set.

    ``points[i]`` is the control with stable index ``i``.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("control grid must hold at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("control grid points must be finite")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("control grid points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def linspace(cls, lo: float, hi: float, n: int) -> "ControlGrid":
        return cls(np.linspace(lo, hi, n)[:, None])

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.size)

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.points, axis=1)))


# ---------------------------------------------------------------------------
# diffusion


@dataclass(frozen=True)
class DiffusionSpec:
    """sigma(t, x) as an m x m matrix.

    Families
    --------
    ``constant``
        ``sigma = matrix``.
    ``affine-bounded``
        ``sigma(x) = matrix @ diag(1 + kappa * clip(x, -1, 1))`` with
        ``0 <= kappa < 1``; bounded, Lipschitz and uniformly invertible.
    ``callable``
        ``fn(t, x) -> (n, m, m)``; constants must be declared.
    """

    family: str
    matrix: np.ndarray = None
    kappa: float = 0.0
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.family not in ("constant", "affine-bounded", "callable"):
            raise ValueError(f"unknown diffusion family {self.family!r}")
        if self.family == "callable":
            if self.fn is None:
                raise ValueError("callable diffusion needs fn")
            return
        mat = _frozen(self.matrix, ndim=2)
        if mat.shape[0] != mat.shape[1]:
            raise ValueError("sigma matrix must be square")
        if self.family == "affine-bounded" and not 0.0 <= self.kappa < 1.0:
            raise ValueError("affine-bounded sigma needs 0 <= kappa < 1")
        object.__setattr__(self, "matrix", mat)
        if abs(np.linalg.det(mat)) < 1e-300 or np.linalg.cond(mat) > 1e12:
            raise SingularDiffusionError(0.0, np.zeros(mat.shape[0]))
        inv = np.linalg.inv(mat)
        inv.setflags(write=False)
        object.__setattr__(self, "_inv", inv)

    @classmethod
    def identity(cls, m: int, scale: float = 1.0) -> "DiffusionSpec":
        return cls("constant", scale * np.eye(m))

    @property
    def is_constant(self) -> bool:
        return self.family == "constant"

    def sigma(self, t: float, x) -> np.ndarray:
        x = _as_states(x)
        n, m = x.shape
        if self.family == "constant":
            return np.broadcast_to(self.matrix, (n, m, m))
        if self.family == "affine-bounded":
            d = 1.0 + self.kappa * np.clip(x, -1.0, 1.0)
            return self.matrix[None, :, :] * d[:, None, :]
        out = np.asarray(self.fn(t, x), dtype=float)
        return np.broadcast_to(out, (n, m, m))

    def sigma_inv(self, t: float, x) -> np.ndarray:
        x = _as_states(x)
        n, m = x.shape
        if self.family == "constant":
            return np.broadcast_to(self._inv, (n, m, m))
        if self.family == "affine-bounded":
            d = 1.0 + self.kappa * np.clip(x, -1.0, 1.0)
            return self._inv[None, :, :] / d[:, :, None]
        s = self.sigma(t, x)
        det = np.linalg.det(s)
        bad = ~np.isfinite(det) | (np.abs(det) < 1e-300)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise SingularDiffusionError(t, x[i])
        return np.linalg.inv(s)

    def apply(self, t: float, x, dB: np.ndarray) -> np.ndarray:
        """sigma(t, x) @ dB row-wise."""
        if self.family == "constant":
            return dB @ self.matrix.T
        return np.einsum("nij,nj->ni", self.sigma(t, x), dB)


# ---------------------------------------------------------------------------
# drift


@dataclass(frozen=True)
class DriftSpec:
    """Controlled drift f(t, x, u, v).

    Families
    --------
    ``zero``
        ``f = 0``.
    ``affine``
        ``f = A x + B1 u + B2 v + c``.
    ``table``
        ``f = A x + table[i, j] + c`` for grid indices ``(i, j)``; lets the
        controls interact arbitrarily.
    ``callable``
        ``fn(t, x, u, v) -> (n, m)`` for single control points ``u, v``.
    """

    family: str
    A: np.ndarray = None
    B1: np.ndarray = None
    B2: np.ndarray = None
    c: np.ndarray = None
    table: np.ndarray = None
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.family not in ("zero", "affine", "table", "callable"):
            raise ValueError(f"unknown drift family {self.family!r}")
        if self.family == "callable" and self.fn is None:
            raise ValueError("callable drift needs fn")
        for name in ("A", "B1", "B2"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val, ndim=2))
        if self.c is not None:
            object.__setattr__(self, "c", _frozen(np.atleast_1d(self.c)))
        if self.table is not None:
            object.__setattr__(self, "table", _frozen(self.table))

    @classmethod
    def zero(cls) -> "DriftSpec":
        return cls("zero")

    def _linear(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        if self.A is not None:
            out = out + x @ self.A.T
        if self.c is not None:
            out = out + self.c
        return out

    def evaluate(self, t: float, x, U: np.ndarray, V: np.ndarray) -> np.ndarray:
        """f at every pair of control points; returns ``(n, len(U), len(V), m)``."""
        x = _as_states(x)
        n, m = x.shape
        U = np.atleast_2d(U)
        V = np.atleast_2d(V)
        nu, nv = len(U), len(V)
        if self.family == "zero":
            return np.zeros((n, nu, nv, m))
        if self.family == "callable":
            out = np.empty((n, nu, nv, m))
            for i in range(nu):
                for j in range(nv):
                    out[:, i, j] = self.fn(t, x, U[i], V[j])
            return out
        base = self._linear(x)[:, None, None, :]
        if self.family == "affine":
            cu = U @ self.B1.T if self.B1 is not None else np.zeros((nu, m))
            cv = V @ self.B2.T if self.B2 is not None else np.zeros((nv, m))
            ctrl = cu[:, None, :] + cv[None, :, :]
        else:
            ctrl = self.table
            if ctrl.shape[:2] != (nu, nv):
                raise ValueError("drift table shape does not match control grids")
        return base + ctrl[None]


# ---------------------------------------------------------------------------
# costs


def _state_part(x: np.ndarray, c0: float, a, k: float, power: float, cap: float) -> np.ndarray:
    out = np.full(x.shape[0], float(c0))
    if a is not None:
        out = out + x @ a
    if k != 0.0:
        r = np.linalg.norm(x, axis=1) ** power
        out = out + k * np.minimum(r, cap)
    return out


def _state_constant(c0, a, k, power, cap, gamma) -> float:
    """Smallest closed-form C with |s(x)| <= C (1 + |x|^gamma)."""
    total = abs(c0)
    if a is not None:
        total += float(np.linalg.norm(a))
    if k != 0.0:
        if power <= gamma:
            total += abs(k)
        elif math.isfinite(cap):
            total += abs(k) * cap
        else:
            return math.inf
    return total


@dataclass(frozen=True)
class CostSpec:
    """Running cost h(t, x, u, v).

    The state part is ``c0 + a.x + k * min(|x|^power, cap)``.

    Families
    --------
    ``constant``
        ``h = c0``.
    ``clipped-power``
        the state part alone.
    ``quadratic``
        state part plus ``u'Ru u + v'Rv v + u'W v`` (quadratic in controls).
    ``callable``
        ``fn(t, x, u, v) -> (n,)``.
    """

    family: str
    c0: float = 0.0
    a: np.ndarray = None
    k: float = 0.0
    power: float = 1.0
    cap: float = math.inf
    Ru: np.ndarray = None
    Rv: np.ndarray = None
    W: np.ndarray = None
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.family not in ("constant", "clipped-power", "quadratic", "callable"):
            raise ValueError(f"unknown running-cost family {self.family!r}")
        if self.family == "callable" and self.fn is None:
            raise ValueError("callable cost needs fn")
        if self.a is not None:
            object.__setattr__(self, "a", _frozen(np.atleast_1d(self.a)))
        for name in ("Ru", "Rv", "W"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(np.atleast_2d(val)))
        if self.power < 0:
            raise ValueError("power must be nonnegative")

    @classmethod
    def constant(cls, c0: float = 0.0) -> "CostSpec":
        return cls("constant", c0=c0)

    def _quad_form(self, M, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
        if M is None:
            return np.zeros((len(P), len(Q)))
        if M.shape == (1, 1) and (P.shape[1] != 1 or Q.shape[1] != 1):
            M = M[0, 0] * np.eye(P.shape[1], Q.shape[1])
        return P @ M @ Q.T

    def control_table(self, U, V) -> np.ndarray:
        """Control-only part on the grid, ``(len(U), len(V))``."""
        U = np.atleast_2d(U)
        V = np.atleast_2d(V)
        out = np.zeros((len(U), len(V)))
        if self.family == "quadratic":
            out += np.diag(self._quad_form(self.Ru, U, U))[:, None]
            out += np.diag(self._quad_form(self.Rv, V, V))[None, :]
            out += self._quad_form(self.W, U, V)
        return out

    def state_part(self, x) -> np.ndarray:
        x = _as_states(x)
        if self.family == "constant":
            return np.full(x.shape[0], float(self.c0))
        return _state_part(x, self.c0, self.a, self.k, self.power, self.cap)

    def evaluate(self, t: float, x, U, V) -> np.ndarray:
        x = _as_states(x)
        U = np.atleast_2d(U)
        V = np.atleast_2d(V)
        if self.family == "callable":
            out = np.empty((x.shape[0], len(U), len(V)))
            for i in range(len(U)):
                for j in range(len(V)):
                    out[:, i, j] = self.fn(t, x, U[i], V[j])
            return out
        return self.state_part(x)[:, None, None] + self.control_table(U, V)[None]

    def growth_constant(self, U, V, gamma: float) -> float:
        if self.family == "callable":
            return math.nan
        base = _state_constant(self.c0, self.a, self.k, self.power, self.cap, gamma)
        if self.family == "constant":
            base = abs(self.c0)
        return base + float(np.max(np.abs(self.control_table(U, V))))


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal cost g(x): families ``constant``, ``clipped-power``, ``callable``.

    ``clipped-power`` is ``c0 + a.x + k * min(|x|^power, cap)``, which covers
    linear terminal costs with ``k = 0``.
    """

    family: str
    c0: float = 0.0
    a: np.ndarray = None
    k: float = 0.0
    power: float = 1.0
    cap: float = math.inf
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.family not in ("constant", "clipped-power", "callable"):
            raise ValueError(f"unknown terminal-cost family {self.family!r}")
        if self.family == "callable" and self.fn is None:
            raise ValueError("callable terminal cost needs fn")
        if self.a is not None:
            object.__setattr__(self, "a", _frozen(np.atleast_1d(self.a)))

    @classmethod
    def constant(cls, c0: float = 0.0) -> "TerminalSpec":
        return cls("constant", c0=c0)

    @classmethod
    def linear(cls, a) -> "TerminalSpec":
        return cls("clipped-power", a=a)

    def evaluate(self, x) -> np.ndarray:
        x = _as_states(x)
        if self.family == "callable":
            return np.asarray(self.fn(x), dtype=float).reshape(x.shape[0])
        if self.family == "constant":
            return np.full(x.shape[0], float(self.c0))
        return _state_part(x, self.c0, self.a, self.k, self.power, self.cap)

    def growth_constant(self, gamma: float) -> float:
        if self.family == "callable":
            return math.nan
        if self.family == "constant":
            return abs(self.c0)
        return _state_constant(self.c0, self.a, self.k, self.power, self.cap, gamma)


@dataclass(frozen=True)
class BoundedDriftSpec:
    """Bounded Lipschitz drift b(t, x) of the auxiliary diffusion.

    Families: ``zero``, ``constant`` (``b = c``), ``clipped-identity``
    (``b = clip(scale * x, -bound, bound)`` coordinatewise), ``callable``.
    """

    family: str = "zero"
    c: np.ndarray = None
    scale: float = 1.0
    bound: float = 1.0
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.family not in ("zero", "constant", "clipped-identity", "callable"):
            raise ValueError(f"unknown bounded-drift family {self.family!r}")
        if self.c is not None:
            object.__setattr__(self, "c", _frozen(np.atleast_1d(self.c)))
        if self.family == "constant" and self.c is None:
            raise ValueError("constant bounded drift needs c")
        if self.family == "callable" and self.fn is None:
            raise ValueError("callable bounded drift needs fn")

    def evaluate(self, t: float, x) -> np.ndarray:
        x = _as_states(x)
        if self.family == "zero":
            return np.zeros_like(x)
        if self.family == "constant":
            return np.broadcast_to(self.c, x.shape).copy()
        if self.family == "clipped-identity":
            return np.clip(self.scale * x, -self.bound, self.bound)
        return np.asarray(self.fn(t, x), dtype=float).reshape(x.shape)

    def constants(self, m: int) -> tuple[float, float]:
        """(C_b, C_2) in closed form; NaN for callables."""
        if self.family == "zero":
            return 0.0, 0.0
        if self.family == "constant":
            return float(np.linalg.norm(self.c)), 0.0
        if self.family == "clipped-identity":
            return abs(self.bound) * math.sqrt(m), abs(self.scale)
        return math.nan, math.nan


# ---------------------------------------------------------------------------
# the game


@dataclass(frozen=True)
class ModelConstants:
    C_sigma: float
    C_f: float
    C_h: float
    C_g: float
    C_b: float = 0.0
    C_1: float = 0.0
    C_2: float = 0.0
    gamma: float = 1.5

    @property
    def ellipticity(self) -> float:
        """epsilon with eps I <= sigma sigma^T <= eps^-1 I implied by C_sigma."""
        return 1.0 / self.C_sigma**2 if self.C_sigma > 0 else math.nan


@dataclass(frozen=True)
class GameModel:
    dim_m: int
    horizon_T: float
    x0: np.ndarray
    sigma: DiffusionSpec
    drift_f: DriftSpec
    running_costs: tuple
    terminal_costs: tuple
    control_grid_1: ControlGrid
    control_grid_2: ControlGrid
    theta: float = 1.0
    constants: Optional[ModelConstants] = None
    bounded_drift: BoundedDriftSpec = field(default_factory=BoundedDriftSpec)
    name: str = "game"

    def __post_init__(self):
        if int(self.dim_m) < 1:
            raise ValueError("dim_m must be a positive integer")
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        x0 = _frozen(np.atleast_1d(self.x0))
        if x0.shape != (self.dim_m,):
            raise ValueError(f"x0 must have length {self.dim_m}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "running_costs", tuple(self.running_costs))
        object.__setattr__(self, "terminal_costs", tuple(self.terminal_costs))
        if len(self.running_costs) != 2 or len(self.terminal_costs) != 2:
            raise ValueError("exactly two players are supported")
        if self.sigma.family != "callable" and self.sigma.matrix.shape != (self.dim_m,) * 2:
            raise ValueError("sigma matrix does not match dim_m")
        if self.constants is None:
            object.__setattr__(self, "constants", derive_constants(self))

    @property
    def m(self) -> int:
        return self.dim_m

    @property
    def T(self) -> float:
        return self.horizon_T

    @property
    def grids(self) -> tuple[ControlGrid, ControlGrid]:
        return self.control_grid_1, self.control_grid_2

    @property
    def statistical_only(self) -> bool:
        specs = (self.sigma, self.drift_f, *self.running_costs, *self.terminal_costs, self.bounded_drift)
        return any(s.family == "callable" for s in specs)

    def replace(self, **changes) -> "GameModel":
        """Copy with changed fields; constants are re-derived unless given."""
        if "constants" in changes:
            return dataclasses.replace(self, **changes)
        draft = dataclasses.replace(self, **changes)
        return dataclasses.replace(draft, constants=derive_constants(draft, gamma=self.constants.gamma))

    # -- coefficient evaluation ---------------------------------------------

    def drift_all(self, t: float, x) -> np.ndarray:
        return self.drift_f.evaluate(t, x, self.control_grid_1.points, self.control_grid_2.points)

    def drift_at(self, t: float, x, iu, iv) -> np.ndarray:
        x = _as_states(x)
        f = self.drift_f
        if f.family == "zero":
            return np.zeros_like(x)
        if f.family in ("affine", "table"):
            ctrl = self._drift_ctrl()
            return f._linear(x) + ctrl[iu, iv]
        n = x.shape[0]
        return self.drift_all(t, x)[np.arange(n), iu, iv]

    def _drift_ctrl(self) -> np.ndarray:
        cache = self.__dict__.get("_drift_ctrl_cache")
        if cache is None:
            U, V = self.control_grid_1.points, self.control_grid_2.points
            full = self.drift_f.evaluate(0.0, np.zeros((1, self.dim_m)), U, V)[0]
            cache = full - self.drift_f._linear(np.zeros((1, self.dim_m)))[0]
            object.__setattr__(self, "_drift_ctrl_cache", cache)
        return cache

    def normalized_drift_all(self, t: float, x) -> np.ndarray:
        """sigma^{-1}(t, x) f(t, x, u, v) for all grid pairs, ``(n, n1, n2, m)``."""
        x = _as_states(x)
        f = self.drift_all(t, x)
        if self.sigma.is_constant:
            return f @ self.sigma._inv.T
        return np.einsum("nij,nabj->nabi", self.sigma_inv(t, x), f)

    def running_all(self, i: int, t: float, x) -> np.ndarray:
        """theta * h_i for all grid pairs, ``(n, n1, n2)``."""
        h = self.running_costs[i - 1].evaluate(t, x, self.control_grid_1.points, self.control_grid_2.points)
        return self.theta * h

    def running_at(self, i: int, t: float, x, iu, iv) -> np.ndarray:
        spec = self.running_costs[i - 1]
        x = _as_states(x)
        if spec.family == "callable":
            n = x.shape[0]
            return self.running_all(i, t, x)[np.arange(n), iu, iv]
        table = self._cost_table(i)
        return self.theta * (spec.state_part(x) + table[iu, iv])

    def _cost_table(self, i: int) -> np.ndarray:
        key = f"_cost_table_{i}"
        cache = self.__dict__.get(key)
        if cache is None:
            cache = self.running_costs[i - 1].control_table(self.control_grid_1.points, self.control_grid_2.points)
            object.__setattr__(self, key, cache)
        return cache

    def terminal(self, i: int, x) -> np.ndarray:
        """theta * g^i(x), ``(n,)``."""
        return self.theta * self.terminal_costs[i - 1].evaluate(x)

    def sigma_at(self, t: float, x) -> np.ndarray:
        return self.sigma.sigma(t, x)

    def sigma_inv(self, t: float, x) -> np.ndarray:
        return self.sigma.sigma_inv(t, x)


def derive_constants(model: GameModel, gamma: float = 1.5) -> ModelConstants:
    """Closed-form growth constants for the built-in families.

    Callable components yield NaN entries, which validation treats as
    "estimate only" and replaces by the probe maxima.
    """
    m = model.dim_m
    U, V = model.control_grid_1.points, model.control_grid_2.points
    sig = model.sigma
    if sig.family == "constant":
        C_sigma = _spectral(sig.matrix) + _spectral(sig._inv)
        C_1 = 0.0
    elif sig.family == "affine-bounded":
        C_sigma = _spectral(sig.matrix) * (1 + sig.kappa) + _spectral(sig._inv) / (1 - sig.kappa)
        C_1 = _spectral(sig.matrix) * sig.kappa
    else:
        C_sigma = C_1 = math.nan

    f = model.drift_f
    if f.family == "zero":
        C_f = 0.0
    elif f.family in ("affine", "table"):
        ctrl = f.evaluate(0.0, np.zeros((1, m)), U, V)[0]
        slope = _spectral(f.A) if f.A is not None else 0.0
        C_f = max(slope, float(np.max(np.linalg.norm(ctrl, axis=-1))))
    else:
        C_f = math.nan

    C_h = max(h.growth_constant(U, V, gamma) for h in model.running_costs)
    C_g = max(g.growth_constant(gamma) for g in model.terminal_costs)
    C_b, C_2 = model.bounded_drift.constants(m)
    return ModelConstants(C_sigma=C_sigma, C_f=C_f, C_h=C_h, C_g=C_g, C_b=C_b, C_1=C_1, C_2=C_2, gamma=gamma)


# ---------------------------------------------------------------------------
# validation


@dataclass
class AssumptionCheck:
    name: str
    description: str
    passed: bool
    worst_ratio: float = 0.0
    worst_point: Optional[list] = None
    note: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ValidationReport:
    checks: list
    n_probe: int
    seed: int
    statistical_only: bool

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "n_probe": self.n_probe,
            "seed": self.seed,
            "statistical_only": self.statistical_only,
            "checks": [c.to_dict() for c in self.checks],
        }

    def format(self) -> str:
        lines = []
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            extra = f" (worst ratio {c.worst_ratio:.4g})" if c.worst_ratio else ""
            lines.append(f"[{mark}] {c.name}: {c.description}{extra}{' ' + c.note if c.note else ''}")
        if self.statistical_only:
            lines.append("note: model uses callables; verdicts are statistical only")
        return "\n".join(lines)


def probe_points(model: GameModel, n_probe: int, seed: int, box: float = 10.0) -> tuple[np.ndarray, np.ndarray]:
    """Scrambled Halton points: times in [0, T], states in [-box, box]^m."""
    sampler = qmc.Halton(d=1 + model.dim_m, scramble=True, seed=seed)
    raw = sampler.random(n_probe)
    t = raw[:, 0] * model.horizon_T
    x = (2.0 * raw[:, 1:] - 1.0) * box
    return t, x


def _ratio_check(name, desc, values, bounds, points, tol=1e-9) -> AssumptionCheck:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bounds > 0, values / bounds, np.where(values > 0, np.inf, 0.0))
    worst = int(np.argmax(ratio)) if ratio.size else 0
    wr = float(ratio[worst]) if ratio.size else 0.0
    return AssumptionCheck(
        name=name,
        description=desc,
        passed=bool(np.all(ratio <= 1.0 + tol)),
        worst_ratio=wr,
        worst_point=np.asarray(points[worst]).tolist() if ratio.size else None,
    )


def validate_model(
    model: GameModel,
    n_probe: int = 256,
    seed: int = 0,
    box: float = 10.0,
    points: Optional[tuple[np.ndarray, np.ndarray]] = None,
    lipschitz_step: float = 1e-3,
) -> ValidationReport:
    """Probe (A1)-(A4) at quasi-random points.

    Growth violations are reported, never raised.  A singular sigma at a probe
    point raises :class:`SingularDiffusionError` naming the point.
    ``points=(t, x)`` overrides the generated probe set.
    """
    const = model.constants
    gamma = const.gamma
    if points is None:
        t_pts, x_pts = probe_points(model, n_probe, seed, box)
    else:
        t_pts, x_pts = (np.asarray(p, dtype=float) for p in points)
        x_pts = _as_states(x_pts)
    n = len(t_pts)
    tx = np.column_stack([t_pts, x_pts])
    checks = []

    # A1: sigma bounded, invertible, Lipschitz; ellipticity follows
    sig_norm = np.empty(n)
    inv_norm = np.empty(n)
    lip = np.empty(n)
    eig_lo = np.empty(n)
    eig_hi = np.empty(n)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal(x_pts.shape)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    for k in range(n):
        t, x = t_pts[k], x_pts[k : k + 1]
        s = model.sigma.sigma(t, x)[0]
        si = model.sigma.sigma_inv(t, x)[0]
        if not np.all(np.isfinite(si)):
            raise SingularDiffusionError(t, x[0])
        sig_norm[k] = _spectral(s)
        inv_norm[k] = _spectral(si)
        s2 = model.sigma.sigma(t, x + lipschitz_step * dirs[k])[0]
        lip[k] = _spectral(s2 - s) / lipschitz_step
        ev = np.linalg.eigvalsh(s @ s.T)
        eig_lo[k], eig_hi[k] = ev[0], ev[-1]

    C_sigma = const.C_sigma
    checks.append(
        _ratio_check("A1(ii)", "|sigma| + |sigma^-1| <= C_sigma", sig_norm + inv_norm, np.full(n, C_sigma), tx)
    )
    checks.append(
        _ratio_check("A1(i)", "sigma Lipschitz in x with constant C_1", lip, np.full(n, const.C_1), tx, tol=1e-6)
    )
    eps = const.ellipticity
    ell_ok = (eig_lo >= eps * (1 - 1e-9)) & (eig_hi <= (1 + 1e-9) / eps)
    checks.append(
        AssumptionCheck(
            "A1-ellipticity",
            f"eps I <= sigma sigma^T <= eps^-1 I with eps = C_sigma^-2 = {eps:.4g}",
            bool(np.all(ell_ok)),
            note="" if np.all(ell_ok) else f"{int(np.sum(~ell_ok))} probe points outside",
        )
    )

    # A2
    checks.append(
        AssumptionCheck(
            "A2(gamma)",
            "sub-quadratic exponent 1 < gamma < 2",
            bool(1.0 < gamma < 2.0),
            note=f"gamma = {gamma:g}",
        )
    )
    fmax = np.empty(n)
    hmax = np.empty(n)
    for k in range(n):
        t, x = t_pts[k], x_pts[k : k + 1]
        fmax[k] = np.max(np.linalg.norm(model.drift_all(t, x)[0], axis=-1))
        hmax[k] = max(np.max(np.abs(model.running_costs[i].evaluate(t, x, *[g.points for g in model.grids]))) for i in range(2))
    xnorm = np.linalg.norm(x_pts, axis=1)
    checks.append(_ratio_check("A2(i)", "|f| <= C_f (1 + |x|)", fmax, const.C_f * (1 + xnorm), tx))
    checks.append(_ratio_check("A2(ii)", "|h_i| <= C_h (1 + |x|^gamma)", hmax, const.C_h * (1 + xnorm**gamma), tx))
    gmax = np.max(np.abs(np.stack([model.terminal_costs[i].evaluate(x_pts) for i in range(2)])), axis=0)
    checks.append(_ratio_check("A2(iii)", "|g^i| <= C_g (1 + |x|^gamma)", gmax, const.C_g * (1 + xnorm**gamma), tx))

    # A3: pure grid equilibrium of the Hamiltonian game at random co-states
    from .hamiltonian import pure_nash_mask

    p = rng.standard_normal((n, model.dim_m)) * 2.0
    q = rng.standard_normal((n, model.dim_m)) * 2.0
    missing = 0
    first_bad = None
    for k in range(n):
        t, x = t_pts[k], x_pts[k : k + 1]
        phi = model.normalized_drift_all(t, x)[0]
        A1 = phi @ p[k] + model.running_costs[0].evaluate(t, x, *[g.points for g in model.grids])[0]
        A2 = phi @ q[k] + model.running_costs[1].evaluate(t, x, *[g.points for g in model.grids])[0]
        if not pure_nash_mask(A1, A2).any():
            missing += 1
            if first_bad is None:
                first_bad = [float(t), *x[0].tolist()]
    checks.append(
        AssumptionCheck(
            "A3(i)",
            "grid Isaacs condition: pure equilibrium of (H_1, H_2) at random (t, x, p, q)",
            missing == 0,
            worst_point=first_bad,
            note=f"{missing} of {n} probes without pure equilibrium" if missing else "",
        )
    )

    # A4
    bvals = np.empty(n)
    blip = np.empty(n)
    for k in range(n):
        t, x = t_pts[k], x_pts[k : k + 1]
        b = model.bounded_drift.evaluate(t, x)
        bvals[k] = np.linalg.norm(b)
        b2 = model.bounded_drift.evaluate(t, x + lipschitz_step * dirs[k])
        blip[k] = np.linalg.norm(b2 - b) / lipschitz_step
    checks.append(_ratio_check("A4(bound)", "|b| <= C_b", bvals, np.full(n, const.C_b), tx))
    checks.append(_ratio_check("A4(lip)", "b Lipschitz with constant C_2", blip, np.full(n, const.C_2), tx, tol=1e-6))

    return ValidationReport(checks=checks, n_probe=n, seed=seed, statistical_only=model.statistical_only)
