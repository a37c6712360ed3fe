"""Kernel density estimates of the marginal law and Gaussian envelope checks.

The envelope of a uniformly elliptic diffusion started at ``(t0, x0)`` is

    rho_1 tau^{-m/2} exp(-Lam r) <= rho(s, x) <= rho_2 tau^{-m/2} exp(-lam r),
    tau = s - t0,  r = |x - x0|^2 / tau.

Its constants are existential, so only the existence of a reasonably tight
envelope can be tested: slopes come from a log-linear fit, intercepts are
moved until the requested share of lattice points is bracketed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import gaussian_kde

from .sde import PathBundle

__all__ = [
    "DensityEstimate",
    "EnvelopeReport",
    "RatioReport",
    "check_aronson_envelope",
    "default_lattice",
    "domination_ratio",
    "estimate_density",
    "kde_from_samples",
    "silverman_bandwidth",
]

MIN_PATHS = 1000


class TooFewPaths(ValueError):
    pass


@dataclass
class DensityEstimate:
    s: float
    t0: float
    x0: np.ndarray
    points: np.ndarray  # (M, m)
    values: np.ndarray  # (M,)
    bandwidth: np.ndarray  # per-coordinate kernel standard deviation
    n_paths: int
    axes: Optional[list] = None  # per-axis lattice coordinates when the lattice is a product grid

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @property
    def tau(self) -> float:
        return self.s - self.t0

    def mass(self) -> float:
        return lattice_integral(self, self.values)

    def std_error(self, rho: Optional[np.ndarray] = None) -> np.ndarray:
        """Pointwise KDE standard error sqrt(rho R(K) / (n h^m)), R(K) = (2 sqrt(pi))^{-m}."""
        rho = self.values if rho is None else rho
        rk = (2.0 * math.sqrt(math.pi)) ** (-self.m)
        return np.sqrt(np.maximum(rho, 0.0) * rk / (self.n_paths * float(np.prod(self.bandwidth))))


def lattice_integral(est: DensityEstimate, f: np.ndarray) -> float:
    """Trapezoid integral over a product lattice (Lebesgue measure)."""
    if est.axes is None:
        raise ValueError("integration needs a product lattice")
    shape = tuple(len(a) for a in est.axes)
    arr = np.asarray(f, dtype=float).reshape(shape)
    for ax in reversed(est.axes):
        arr = np.trapezoid(arr, ax, axis=-1) if hasattr(np, "trapezoid") else np.trapz(arr, ax, axis=-1)
    return float(arr)


def default_lattice(x0, tau: float, n_per_axis: int = 101, width: float = 5.0) -> tuple[np.ndarray, list]:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    half = width * math.sqrt(tau)
    axes = [np.linspace(c - half, c + half, n_per_axis) for c in x0]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh]), axes


def silverman_bandwidth(samples: np.ndarray) -> np.ndarray:
    """0.9 min(sd, IQR / 1.34) n^{-1/5} in one dimension; the multivariate
    rule (4 / (m + 2))^{1/(m+4)} n^{-1/(m+4)} sd_j otherwise."""
    samples = np.atleast_2d(samples)
    n, m = samples.shape
    sd = samples.std(axis=0, ddof=1)
    if m == 1:
        q75, q25 = np.percentile(samples[:, 0], [75, 25])
        spread = min(sd[0], (q75 - q25) / 1.34) if q75 > q25 else sd[0]
        return np.array([0.9 * spread * n ** (-0.2)])
    return (4.0 / (m + 2)) ** (1.0 / (m + 4)) * n ** (-1.0 / (m + 4)) * sd


def kde_from_samples(samples, s: float, t0: float, x0, lattice=None, axes=None) -> DensityEstimate:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 1 and samples.shape[1] > 1 and np.atleast_1d(x0).size == 1:
        samples = samples.T
    n, m = samples.shape
    if n < MIN_PATHS:
        raise TooFewPaths(f"density estimation needs at least {MIN_PATHS} paths, got {n}")
    tau = s - t0
    if not tau > 0:
        raise ValueError("s must exceed the start time")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if lattice is None:
        lattice, axes = default_lattice(x0, tau)
    lattice = np.atleast_2d(np.asarray(lattice, dtype=float))
    if lattice.shape[1] != m and lattice.shape[0] == m:
        lattice = lattice.T
    if m == 1:
        h = silverman_bandwidth(samples)
        kde = gaussian_kde(samples.T, bw_method=float(h[0] / samples[:, 0].std(ddof=1)))
    else:
        kde = gaussian_kde(samples.T, bw_method="silverman")
        # kernel covariance is factor^2 times the sample covariance
        h = kde.factor * samples.std(axis=0, ddof=1)
    vals = kde.evaluate(lattice.T)
    return DensityEstimate(float(s), float(t0), x0, lattice, np.maximum(vals, 0.0), h, n, axes)


def estimate_density(paths: PathBundle, s: float, lattice=None, axes=None) -> DensityEstimate:
    """Gaussian KDE of the states at grid time ``s`` (Silverman bandwidth)."""
    if not s > paths.grid.t_start:
        raise ValueError("s must exceed t_start")
    X = paths.at_time(s)
    x0 = paths.states[0, 0]
    return kde_from_samples(X, s, paths.grid.t_start, x0, lattice, axes)


# ---------------------------------------------------------------------------
# envelope


@dataclass
class EnvelopeReport:
    rho1: float
    rho2: float
    Lam: float
    lam: float
    beta: float
    lower: np.ndarray
    upper: np.ndarray
    inside: np.ndarray
    coverage: float
    valid_fit: bool
    passed: bool
    note: str = ""
    points: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def rows(self) -> list:
        out = []
        for j in range(len(self.inside)):
            row = {f"x{c}": float(self.points[j, c]) for c in range(self.points.shape[1])}
            row.update(kde=float(self.values[j]), lower=float(self.lower[j]), upper=float(self.upper[j]), inside=bool(self.inside[j]))
            out.append(row)
        return out

    def summary(self) -> dict:
        return {
            "rho1": self.rho1,
            "rho2": self.rho2,
            "Lambda": self.Lam,
            "lambda": self.lam,
            "coverage": self.coverage,
            "valid_fit": self.valid_fit,
            "verdict": "PASS" if self.passed else "FAIL",
            "note": self.note,
        }


def _bisect(pred, lo: float, hi: float, iters: int = 200, want_max: bool = True) -> float:
    """Largest (or smallest) value in [lo, hi] where the monotone ``pred`` holds."""
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if pred(mid) == want_max:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 < 1e-12:
            break
    return lo if want_max else hi


ETA_GRID = (0.05, 0.1, 0.2, 0.3, 0.5, 0.7)


def check_aronson_envelope(
    estimate: DensityEstimate,
    fit_strategy: str = "loglinear",
    coverage: float = 0.99,
    eta=None,
    k_se: float = 3.0,
    max_ratio: float = 4.0,
) -> EnvelopeReport:
    """Fit two Gaussian envelopes around the KDE.

    ``beta`` comes from least squares of ``ln rho + (m/2) ln tau`` on
    ``(1, (x - x0) / sqrt(tau), r)`` over the points where the KDE is well
    above its standard error; the linear term lets a drifted density keep
    its curvature estimate.  For each ``eta`` (default: a small grid) the
    slopes are ``Lam = beta (1 + eta)`` and ``lam = beta (1 - eta)``, and
    the intercepts are the largest ``rho_1 <= rho_2`` and smallest ``rho_2``
    for which each side holds at a share ``(1 + coverage) / 2`` of the
    lattice.  A point is on the lower side when ``rho >= lower - k_se
    SE(lower)`` and on the upper side when ``rho <= upper + k_se SE(upper)``.
    A fit is valid when ``beta > 0``, ``rho_1 > 0`` and ``rho_2 / rho_1 <=
    max_ratio``; the tightest valid fit over the ``eta`` grid is reported.
    """
    if fit_strategy != "loglinear":
        raise ValueError(f"unknown fit strategy {fit_strategy!r}")
    m, tau = estimate.m, estimate.tau
    rho = estimate.values
    d = (estimate.points - estimate.x0) / math.sqrt(tau)
    r = np.sum(d**2, axis=1)
    se = estimate.std_error()
    good = rho > 10.0 * np.maximum(se, 1e-300)
    beta = alpha = math.nan
    if good.sum() >= m + 3:
        A = np.column_stack([np.ones(good.sum()), d[good], -r[good]])
        coef, *_ = np.linalg.lstsq(A, np.log(rho[good]) + 0.5 * m * math.log(tau), rcond=None)
        alpha, beta = float(coef[0]), float(coef[-1])
    if not (math.isfinite(beta) and beta > 0):
        zeros = np.zeros_like(rho)
        return EnvelopeReport(
            math.nan, math.nan, math.nan, math.nan, float(beta), zeros, zeros,
            np.zeros(len(rho), bool), 0.0, False, False, "log-linear fit has no positive slope", estimate.points, rho,
        )
    side = 0.5 * (1.0 + coverage)
    c0 = math.exp(alpha)
    best = None
    for e in ETA_GRID if eta is None else (eta,):
        Lam, lam = beta * (1 + e), beta * (1 - e)
        shape_lo = tau ** (-m / 2) * np.exp(-Lam * r)
        shape_hi = tau ** (-m / 2) * np.exp(-lam * r)

        def lower_ok(c, shape_lo=shape_lo):
            L = c * shape_lo
            return rho >= L - k_se * estimate.std_error(L)

        def upper_ok(c, shape_hi=shape_hi):
            U = c * shape_hi
            return rho <= U + k_se * estimate.std_error(U)

        rho2 = _bisect(lambda c: upper_ok(c).mean() >= side, c0 * 1e-6, c0 * 1e12, want_max=False)
        rho1 = min(_bisect(lambda c: lower_ok(c).mean() >= side, c0 * 1e-12, c0 * 1e6, want_max=True), rho2)
        ratio = rho2 / rho1 if rho1 > 0 else math.inf
        if best is None or ratio < best[0]:
            inside = lower_ok(rho1) & upper_ok(rho2)
            best = (ratio, e, rho1, rho2, Lam, lam, rho1 * shape_lo, rho2 * shape_hi, inside)
    ratio, e, rho1, rho2, Lam, lam, lower, upper, inside = best
    cov = float(inside.mean())
    valid = bool(rho1 > 0 and rho1 <= rho2 and ratio <= max_ratio)
    note = f"eta = {e:g}"
    if not valid:
        note = f"envelope too loose: rho2 / rho1 = {ratio:.3g} (limit {max_ratio:g})"
    passed = valid and cov >= coverage and Lam > lam
    return EnvelopeReport(
        float(rho1), float(rho2), float(Lam), float(lam), float(beta), lower, upper, inside, cov, valid, bool(passed), note, estimate.points, rho
    )


# ---------------------------------------------------------------------------
# domination ratio


@dataclass
class RatioReport:
    ratio: np.ndarray  # (n_times, M), NaN where the denominator is below the floor
    lq_norm: float
    max_ratio: float
    below_floor: float
    verdict: str
    q: float
    times: list = field(default_factory=list)


def domination_ratio(
    est_num,
    est_den,
    q: float,
    delta: float,
    t1: Optional[float] = None,
    floor: float = 1e-8,
    max_below: float = 0.01,
) -> RatioReport:
    """phi = rho_num / rho_den on a shared lattice.

    ``est_num`` and ``est_den`` may be single estimates or equally long
    sequences over times ``s``.  The L^q norm integrates ``|phi|^q`` over the
    lattice (trapezoid, Lebesgue measure) and, for several times, over
    time.  Requires ``s >= t1 + delta`` where ``t1`` defaults to the start
    time of ``est_num``.
    """
    nums = list(est_num) if isinstance(est_num, (list, tuple)) else [est_num]
    dens = list(est_den) if isinstance(est_den, (list, tuple)) else [est_den]
    if len(nums) != len(dens):
        raise ValueError("numerator and denominator sequences differ in length")
    if not q >= 1:
        raise ValueError("q must be >= 1")
    ratios, spatial, below = [], [], []
    times = []
    for a, b in zip(nums, dens):
        if a.points.shape != b.points.shape or not np.allclose(a.points, b.points):
            raise ValueError("estimates must share the lattice")
        if abs(a.s - b.s) > 1e-12:
            raise ValueError("estimates must be taken at the same time")
        start = a.t0 if t1 is None else t1
        if a.s < start + delta - 1e-12:
            raise ValueError(f"s = {a.s} is earlier than t1 + delta = {start + delta}")
        ok = b.values > floor
        phi = np.full(len(ok), np.nan)
        phi[ok] = a.values[ok] / b.values[ok]
        ratios.append(phi)
        below.append(1.0 - ok.mean())
        spatial.append(lattice_integral(a, np.where(ok, np.abs(phi) ** q, 0.0)))
        times.append(a.s)
    ratio = np.vstack(ratios)
    if len(times) == 1:
        total = spatial[0]
    else:
        tt = np.array(times)
        total = float(np.trapezoid(spatial, tt) if hasattr(np, "trapezoid") else np.trapz(spatial, tt))
    frac = float(max(below))
    verdict = "INCONCLUSIVE" if frac > max_below else "OK"
    mx = float(np.nanmax(ratio)) if np.any(np.isfinite(ratio)) else math.nan
    return RatioReport(ratio, float(total ** (1.0 / q)), mx, frac, verdict, float(q), times)
