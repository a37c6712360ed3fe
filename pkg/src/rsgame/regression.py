"""Regression bases for least-squares conditional expectations.

Two families are provided, both in standardised coordinates
``u = (x - center) / scale``:

``poly``
    all monomials of total degree <= ``degree``.
``pwl``
    additive piecewise-linear functions: ``1, u_j`` and hinges
    ``(u_j - knot)^+`` at the inner quantiles of each coordinate.

With ``tilt=True`` (the default) positive targets are fitted in the form
``w(x) * (Phi(x) @ c)`` where ``w = exp(b0 + b . u)`` comes from a linear
least-squares fit of the log target.  The tilt absorbs exponential growth
in the tails, which keeps fitted values of ``exp``-type targets positive
there, and the residual fit is an ordinary weighted least squares.
"""

from __future__ import annotations

import functools
import itertools
import re
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["BasisFrame", "RankDeficiencyWarning", "RegressionBasis", "least_squares"]

RIDGE = 1e-8


class RankDeficiencyWarning(UserWarning):
    pass


@functools.lru_cache(maxsize=None)
def _exponents(m: int, degree: int) -> np.ndarray:
    rows = [tuple([0] * m)]
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(m), d):
            e = [0] * m
            for c in combo:
                e[c] += 1
            rows.append(tuple(e))
    return np.array(rows, dtype=np.int64)


@dataclass(frozen=True)
class RegressionBasis:
    family: str = "poly"
    degree: int = 3
    n_bins: int = 8
    tilt: bool = True

    def __post_init__(self):
        if self.family not in ("poly", "pwl"):
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.degree < 1 or self.n_bins < 1:
            raise ValueError("degree and n_bins must be positive")

    @classmethod
    def default(cls, m: int) -> "RegressionBasis":
        return cls("poly", 3) if m <= 2 else cls("pwl", n_bins=8)

    @classmethod
    def parse(cls, spec: str, tilt: bool = True) -> "RegressionBasis":
        """``deg3`` or ``pwl8``."""
        mt = re.fullmatch(r"(deg|pwl)(\d+)", spec.strip().lower())
        if not mt:
            raise ValueError(f"basis spec {spec!r} is not of the form degN or pwlN")
        k = int(mt.group(2))
        if mt.group(1) == "deg":
            return cls("poly", degree=k, tilt=tilt)
        return cls("pwl", n_bins=k, tilt=tilt)

    @property
    def label(self) -> str:
        return f"deg{self.degree}" if self.family == "poly" else f"pwl{self.n_bins}"

    def n_functions(self, m: int) -> int:
        if self.family == "poly":
            return len(_exponents(m, self.degree))
        return 1 + m * self.n_bins

    def frame(self, X: np.ndarray) -> "BasisFrame":
        """Fix standardisation (and knots) from a sample of states ``(n, m)``."""
        X = np.atleast_2d(X)
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        active = scale > 1e-12 * np.maximum(1.0, np.abs(center))
        scale = np.where(active, scale, 1.0)
        knots = None
        if self.family == "pwl":
            u = (X - center) / scale
            qs = np.linspace(0, 1, self.n_bins + 1)[1:-1]
            knots = np.quantile(u, qs, axis=0).T if len(qs) else np.zeros((X.shape[1], 0))
        return BasisFrame(self, center, scale, active, knots)


@dataclass
class BasisFrame:
    basis: RegressionBasis
    center: np.ndarray
    scale: np.ndarray
    active: np.ndarray
    knots: Optional[np.ndarray] = None  # (m, n_bins - 1) for pwl

    @property
    def m(self) -> int:
        return len(self.center)

    @property
    def n_functions(self) -> int:
        return self.basis.n_functions(self.m)

    def standardise(self, X) -> np.ndarray:
        u = (np.atleast_2d(X) - self.center) / self.scale
        return np.where(self.active, u, 0.0)

    def design(self, X) -> np.ndarray:
        u = self.standardise(X)
        n, m = u.shape
        if self.basis.family == "poly":
            E = _exponents(m, self.basis.degree)
            # integer powers by repeated products, reused across monomials
            powers = np.empty((self.basis.degree + 1, n, m))
            powers[0] = 1.0
            for d in range(1, self.basis.degree + 1):
                powers[d] = powers[d - 1] * u
            out = np.ones((n, len(E)))
            for c, e in enumerate(E[1:], start=1):
                for j in np.flatnonzero(e):
                    out[:, c] *= powers[e[j], :, j]
            return out
        cols = [np.ones(n)]
        for j in range(m):
            cols.append(u[:, j])
            for kn in self.knots[j]:
                cols.append(np.maximum(u[:, j] - kn, 0.0))
        return np.column_stack(cols)

    def usable_columns(self) -> np.ndarray:
        """Columns that do not vanish identically because of inactive coordinates."""
        m = self.m
        if self.basis.family == "poly":
            E = _exponents(m, self.basis.degree)
            return np.all((E == 0) | self.active[None, :], axis=1)
        keep = [True]
        for j in range(m):
            keep.extend([bool(self.active[j])] * self.basis.n_bins)
        return np.array(keep)

    def linear_design(self, X) -> np.ndarray:
        u = self.standardise(X)
        return np.column_stack([np.ones(len(u)), u[:, self.active]])

    def fit_tilt(self, X, target: np.ndarray, floor: float = 1e-300) -> np.ndarray:
        """Coefficients ``(1 + m,)`` of the log-linear tilt; zeros when tilting is off."""
        beta = np.zeros(1 + self.m)
        if not self.basis.tilt:
            return beta
        L = np.log(np.maximum(target, floor))
        coef, *_ = np.linalg.lstsq(self.linear_design(X), L, rcond=None)
        beta[0] = coef[0]
        beta[1:][self.active] = coef[1:]
        return beta

    def tilt_weight(self, X, beta: np.ndarray) -> np.ndarray:
        u = self.standardise(X)
        with np.errstate(over="ignore"):
            return np.exp(beta[0] + u @ beta[1:])

    def evaluate(self, X, beta: np.ndarray, coef: np.ndarray) -> np.ndarray:
        """``w(x) * Phi(x) @ coef``; ``coef`` may carry trailing target axes."""
        Phi = self.design(X)
        w = self.tilt_weight(X, beta)
        out = np.tensordot(Phi, coef, axes=(1, 0))
        return out * w.reshape((-1,) + (1,) * (out.ndim - 1))

    def to_record(self) -> dict:
        return {
            "family": self.basis.family,
            "degree": self.basis.degree,
            "n_bins": self.basis.n_bins,
            "tilt": self.basis.tilt,
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "active": self.active.tolist(),
            "knots": None if self.knots is None else np.asarray(self.knots).tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "BasisFrame":
        basis = RegressionBasis(rec["family"], int(rec["degree"]), int(rec["n_bins"]), bool(rec["tilt"]))
        knots = rec.get("knots")
        m = len(rec["center"])
        if basis.family == "pwl":
            knots = np.asarray(knots if knots is not None else np.zeros((m, 0)), dtype=float).reshape(m, basis.n_bins - 1)
        return cls(
            basis,
            np.asarray(rec["center"], dtype=float),
            np.asarray(rec["scale"], dtype=float),
            np.asarray(rec["active"], dtype=bool),
            knots,
        )


def least_squares(Phi: np.ndarray, Y: np.ndarray, ridge: float = RIDGE, cols: Optional[np.ndarray] = None) -> tuple[np.ndarray, bool]:
    """Solve ``Phi c ~ Y`` column-wise; falls back to ridge on rank deficiency.

    Returns the coefficients (zero-padded for unused columns) and whether
    the ridge fallback was taken.
    """
    p = Phi.shape[1]
    if cols is None:
        cols = np.ones(p, dtype=bool)
    A = Phi[:, cols]
    Y2 = Y if Y.ndim == 2 else Y[:, None]
    coef, _, rank, sv = np.linalg.lstsq(A, Y2, rcond=None)
    used_ridge = False
    if rank < A.shape[1]:
        warnings.warn(
            f"regression design has rank {rank} < {A.shape[1]}; using ridge lambda={ridge:g}",
            RankDeficiencyWarning,
            stacklevel=2,
        )
        G = A.T @ A
        coef = np.linalg.solve(G + ridge * max(1.0, np.trace(G) / len(G)) * np.eye(len(G)), A.T @ Y2)
        used_ridge = True
    full = np.zeros((p, Y2.shape[1]))
    full[cols] = coef
    return (full if Y.ndim == 2 else full[:, 0]), used_ridge
