"""Coupled BSDE system after the exponential change of variables.

With ``Ybar = exp(Y)`` and ``Zbar = Ybar Z`` the generator of player ``i`` is

    G^i(t, x, y1, y2, z1, z2) = z_i . sigma^{-1} f(t, x, u*, v*) + y_i h_i(t, x, u*, v*)

with ``(u*, v*)`` the Isaacs selection at co-states ``(z1 / y1, z2 / y2)``,
that is ``G^i = y_i H_i*``.  The level-``n`` generator of the ladder clamps
the state to ``[-n, n]^m``, floors ``y`` at ``1/n`` and multiplies by a radial
cutoff which is 1 inside radius ``n`` and 0 outside ``2n``.

The backward scheme regresses on paths of the driftless diffusion:

    Zbar_k = E[Ybar_{k+1} dB_k / dt | X_k]
    Ybar_k = E[Ybar_{k+1} | X_k] + dt G(t_k, X_k, Ybar_k^-, Zbar_k)

where ``Ybar_k^-`` is the previous Picard sweep (the conditional mean on the
first sweep).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .feedback import FeedbackControls
from .hamiltonian import IsaacsMap
from .model import GameModel
from .regression import BasisFrame, RankDeficiencyWarning, RegressionBasis, least_squares
from .sde import PathBundle, TimeGrid

__all__ = [
    "EPS_POS",
    "BsdeSolution",
    "ConvergenceReport",
    "EnvelopeCheck",
    "SliceTable",
    "TransformedGenerator",
    "build_generator_ladder",
    "exact_generator",
    "extract_feedback",
    "fixed_control_generator",
    "growth_envelope",
    "ladder_convergence",
    "solve_backward",
]

log = logging.getLogger(__name__)

EPS_POS = 1e-12
ENVELOPE_MARGIN = 1.5
LOW_CONFIDENCE_FRACTION = 0.01


def ramp(r: np.ndarray) -> np.ndarray:
    """1 on [0, 1], linear down to 0 on [1, 2], 0 beyond."""
    return np.clip(2.0 - r, 0.0, 1.0)


@dataclass
class TransformedGenerator:
    """Generator pair ``(G^1, G^2)`` in the exponential variables.

    ``n`` is the ladder level (``None`` means no clipping).  With
    ``feedback`` set the controls are frozen to the feedback and the
    generator is the linear ``z_i . sigma^{-1} f + (y_i)^+ h_i``.
    """

    model: GameModel
    isaacs: Optional[IsaacsMap]
    n: Optional[int] = None
    feedback: Optional[FeedbackControls] = None

    def __post_init__(self):
        if self.n is not None and self.n < 1:
            raise ValueError("ladder level must be >= 1")
        if self.feedback is None and self.isaacs is None:
            raise ValueError("generator needs an Isaacs map or a fixed feedback")

    @property
    def kind(self) -> str:
        if self.feedback is not None:
            return f"fixed:{self.feedback.tag}"
        return "exact" if self.n is None else f"ladder:{self.n}"

    def evaluate(self, t: float, x, y1, y2, z1, z2):
        """Returns ``(G1, G2, iu, iv)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y1 = np.asarray(y1, dtype=float).reshape(-1)
        y2 = np.asarray(y2, dtype=float).reshape(-1)
        z1 = np.atleast_2d(np.asarray(z1, dtype=float))
        z2 = np.atleast_2d(np.asarray(z2, dtype=float))
        model = self.model
        if self.feedback is not None:
            iu, iv = self.feedback.indices(t, x)
            f = model.drift_at(t, x, iu, iv)
            if model.sigma.is_constant:
                phi = f @ model.sigma._inv.T
            else:
                phi = np.einsum("nij,nj->ni", model.sigma_inv(t, x), f)
            h1 = model.running_at(1, t, x, iu, iv)
            h2 = model.running_at(2, t, x, iu, iv)
            G1 = np.einsum("ni,ni->n", z1, phi) + np.maximum(y1, 0.0) * h1
            G2 = np.einsum("ni,ni->n", z2, phi) + np.maximum(y2, 0.0) * h2
            return G1, G2, iu, iv
        if self.n is None:
            xh = x
            yh1 = np.maximum(y1, EPS_POS)
            yh2 = np.maximum(y2, EPS_POS)
            cut = 1.0
        else:
            n = float(self.n)
            xh = np.clip(x, -n, n)
            yh1 = np.maximum(y1, 1.0 / n)
            yh2 = np.maximum(y2, 1.0 / n)
            r = np.sqrt(y1**2 + y2**2 + np.sum(z1**2, axis=1) + np.sum(z2**2, axis=1)) / n
            cut = ramp(r)
        res = self.isaacs(t, xh, z1 / yh1[:, None], z2 / yh2[:, None])
        # y_hat * H* equals z . phi + y_hat h at the selected pair
        return yh1 * res.H1 * cut, yh2 * res.H2 * cut, res.iu, res.iv

    def __call__(self, t, x, y1, y2, z1, z2):
        G1, G2, _, _ = self.evaluate(t, x, y1, y2, z1, z2)
        return G1, G2


def build_generator_ladder(model: GameModel, isaacs: IsaacsMap, n: int) -> TransformedGenerator:
    return TransformedGenerator(model, isaacs, int(n))


def exact_generator(model: GameModel, isaacs: IsaacsMap) -> TransformedGenerator:
    return TransformedGenerator(model, isaacs, None)


def fixed_control_generator(model: GameModel, feedback: FeedbackControls) -> TransformedGenerator:
    return TransformedGenerator(model, None, None, feedback)


# ---------------------------------------------------------------------------
# solution


@dataclass
class SliceTable:
    """Regression functions of slice ``k``.

    ``Ybar(t_k, x) = w_i(x) Phi(x) @ coef_y[i]`` and likewise for ``Zbar``,
    with ``w_i = exp(beta[i, 0] + beta[i, 1:] . u)``.
    """

    k: int
    t: float
    frame: BasisFrame
    beta: np.ndarray  # (2, 1 + m)
    coef_y: np.ndarray  # (2, p)
    coef_z: np.ndarray  # (2, p, m)

    def ybar(self, x, i: int) -> np.ndarray:
        return self.frame.evaluate(x, self.beta[i - 1], self.coef_y[i - 1])

    def zbar(self, x, i: int) -> np.ndarray:
        return self.frame.evaluate(x, self.beta[i - 1], self.coef_z[i - 1])

    def z(self, x, i: int) -> np.ndarray:
        """Z = Zbar / Ybar from the fitted functions (Ybar floored at EPS_POS)."""
        return self.zbar(x, i) / np.maximum(self.ybar(x, i), EPS_POS)[:, None]


@dataclass
class BsdeSolution:
    model: GameModel
    grid: TimeGrid
    states: np.ndarray  # (n, K + 1, m) reference paths
    Ybar: np.ndarray  # (2, n, K + 1)
    Zbar: np.ndarray  # (2, n, K, m)
    tables: list
    y0: np.ndarray  # (2,) Y_0 = ln Ybar_0
    y0_se: np.ndarray  # (2,) delta-method standard error of Y_0
    ybar0_se: np.ndarray
    floor_hits: int
    martingale: np.ndarray  # (K, 2, 2): per slice, player, (mean, se)
    generator: str
    ladder_n: Optional[int]
    picard_iters: int
    basis: RegressionBasis
    seed: int
    ridge_slices: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.grid.n_steps

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def Y(self) -> np.ndarray:
        return np.log(self.Ybar)

    @property
    def Z(self) -> np.ndarray:
        return self.Zbar / self.Ybar[:, :, :-1, None]

    @property
    def floor_fraction(self) -> float:
        return self.floor_hits / float(2 * self.n_paths * self.K)

    @property
    def low_confidence(self) -> bool:
        return self.floor_fraction > LOW_CONFIDENCE_FRACTION

    @property
    def flags(self) -> list:
        return ["LOW_CONFIDENCE"] if self.low_confidence else []

    def martingale_ok(self, k_se: float = 3.0) -> np.ndarray:
        """Per slice and player: |mean residual| <= k_se * SE."""
        mean, se = self.martingale[..., 0], self.martingale[..., 1]
        return np.abs(mean) <= k_se * se + 1e-12

    def summary(self) -> dict:
        return {
            "Y0": self.y0.tolist(),
            "Y0_se": self.y0_se.tolist(),
            "J": np.exp(self.y0).tolist(),
            "J_se": self.ybar0_se.tolist(),
            "floor_fraction": self.floor_fraction,
            "flags": self.flags,
            "generator": self.generator,
            "n_paths": self.n_paths,
            "n_steps": self.K,
        }


def solve_backward(
    model: GameModel,
    isaacs: Optional[IsaacsMap],
    paths: PathBundle,
    basis: Optional[RegressionBasis] = None,
    ladder_n: Optional[int] = None,
    picard_iters: int = 2,
    generator: Optional[TransformedGenerator] = None,
) -> BsdeSolution:
    """Least-squares Monte Carlo backward recursion on driftless reference paths.

    Either pass ``generator`` explicitly (e.g. a fixed-control generator)
    or an Isaacs map plus ``ladder_n`` (``None`` for the unclipped
    generator).
    """
    if picard_iters < 1:
        raise ValueError("picard_iters must be >= 1")
    if paths.kind != "driftless":
        raise ValueError("the backward scheme regresses on driftless reference paths")
    if basis is None:
        basis = RegressionBasis.default(model.dim_m)
    if generator is None:
        generator = TransformedGenerator(model, isaacs, ladder_n)
    X, dB = paths.states, paths.brownian_increments
    n, K, m = dB.shape
    dt = paths.grid.dt
    times = paths.grid.times

    # time-major buffers viewed as (player, path, step)
    Ybar = np.empty((K + 1, 2, n)).transpose(1, 2, 0)
    Zbar = np.empty((K, 2, n, m)).transpose(1, 2, 0, 3)
    for i in (1, 2):
        g = model.terminal(i, X[:, K])
        with np.errstate(over="ignore"):
            Ybar[i - 1, :, K] = np.exp(g)
    if not np.all(np.isfinite(Ybar[:, :, K])):
        raise ValueError("terminal data exp(g(X_T)) is not finite on every path")

    tables: list = [None] * K
    martingale = np.zeros((K, 2, 2))
    accum = Ybar[:, :, K].copy()
    floor_hits = 0
    ridge_slices = []

    for k in range(K - 1, -1, -1):
        t = times[k]
        x = X[:, k]
        frame = basis.frame(x)
        Phi = frame.design(x)
        cols = frame.usable_columns()
        p = Phi.shape[1]
        nxt = Ybar[:, :, k + 1]
        betas = np.stack([frame.fit_tilt(x, nxt[i]) for i in range(2)])
        w = np.stack([frame.tilt_weight(x, betas[i]) for i in range(2)])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RankDeficiencyWarning)
            coef_e, ridge = least_squares(Phi, np.column_stack([nxt[i] / w[i] for i in range(2)]), cols=cols)
            E = np.stack([w[i] * (Phi @ coef_e[:, i]) for i in range(2)])
            # Z from the centred target: same conditional mean, and a
            # constant Ybar_{k+1} gives exactly zero instead of sampling noise
            ztargets = [(nxt[i] - E[i]) * dB[:, k, j] / dt / w[i] for i in range(2) for j in range(m)]
            coef_z, ridge_z = least_squares(Phi, np.column_stack(ztargets), cols=cols)
        if ridge or ridge_z:
            ridge_slices.append(k)
            for c in caught:
                log.warning("slice %d: %s", k, c.message)
            warnings.warn(f"slice {k}: rank-deficient regression, ridge fallback used", RankDeficiencyWarning, stacklevel=2)
        fitted_z = Phi @ coef_z
        Z = np.empty((2, n, m))
        cz = np.empty((2, p, m))
        for i in range(2):
            Z[i] = w[i][:, None] * fitted_z[:, i * m : (i + 1) * m]
            cz[i] = coef_z[:, i * m : (i + 1) * m]
        ypre = E
        for _ in range(picard_iters):
            G1, G2 = generator(t, x, ypre[0], ypre[1], Z[0], Z[1])
            ypre = np.stack([E[0] + dt * G1, E[1] + dt * G2])
        Yk = ypre
        hits = Yk < EPS_POS
        floor_hits += int(hits.sum())
        Yk = np.maximum(Yk, EPS_POS)
        Ybar[:, :, k] = Yk
        Zbar[:, :, k] = Z
        G = np.stack([G1, G2])
        accum = accum + dt * G
        for i in range(2):
            # both parts have mean zero; their sample means fluctuate separately
            fit_res = nxt[i] - E[i]
            mart = np.einsum("ni,ni->n", Z[i], dB[:, k])
            martingale[k, i, 0] = fit_res.mean() - mart.mean()
            if n > 1:
                martingale[k, i, 1] = math.sqrt((fit_res.var(ddof=1) + mart.var(ddof=1)) / n)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            cy, _ = least_squares(Phi, np.column_stack([Yk[i] / w[i] for i in range(2)]), cols=cols)
        tables[k] = SliceTable(k, float(t), frame, betas, cy.T.copy(), cz)

    ybar0 = Ybar[:, :, 0].mean(axis=1)
    ybar0_se = accum.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(2)
    y0 = np.log(ybar0)
    return BsdeSolution(
        model=model,
        grid=paths.grid,
        states=X,
        Ybar=Ybar,
        Zbar=Zbar,
        tables=tables,
        y0=y0,
        y0_se=ybar0_se / ybar0,
        ybar0_se=ybar0_se,
        floor_hits=floor_hits,
        martingale=martingale,
        generator=generator.kind,
        ladder_n=generator.n if generator.feedback is None else None,
        picard_iters=picard_iters,
        basis=basis,
        seed=paths.seed,
        ridge_slices=sorted(ridge_slices),
    )


# ---------------------------------------------------------------------------
# invariant checks


@dataclass
class EnvelopeCheck:
    C: float
    gamma: float
    worst_ratio: float
    fraction_inside: float
    worst_node: Optional[tuple]
    passed: bool
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "gamma": self.gamma,
            "worst_ratio": self.worst_ratio,
            "fraction_inside": self.fraction_inside,
            "worst_node": self.worst_node,
            "passed": self.passed,
            "note": self.note,
        }


def envelope_constant(model: GameModel, margin: float = ENVELOPE_MARGIN) -> float:
    c = model.constants
    return margin * abs(model.theta) * max(c.C_g, model.horizon_T * c.C_h)


def growth_envelope(solution: BsdeSolution, margin: float = ENVELOPE_MARGIN, atol: float = 1e-9) -> EnvelopeCheck:
    """|ln Ybar| <= C (1 + |x|^gamma) at every node, C = margin * |theta| * max(C_g, T C_h)."""
    model = solution.model
    gamma = model.constants.gamma
    C = envelope_constant(model, margin)
    if not math.isfinite(C):
        return EnvelopeCheck(C, gamma, math.nan, 0.0, None, False, "growth constants unknown")
    xn = np.linalg.norm(solution.states, axis=2)  # (n, K + 1)
    bound = C * (1.0 + xn**gamma)
    lnY = np.abs(np.log(solution.Ybar))  # (2, n, K + 1)
    excess = lnY - bound[None] - atol
    inside = excess <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound[None] > 0, lnY / bound[None], np.where(lnY > atol, np.inf, 0.0))
    idx = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    return EnvelopeCheck(
        C=C,
        gamma=gamma,
        worst_ratio=float(ratio[idx]),
        fraction_inside=float(inside.mean()),
        worst_node=(int(idx[0]) + 1, int(idx[1]), int(idx[2])),
        passed=bool(inside.all()),
    )


def positivity_ok(solution: BsdeSolution) -> bool:
    return bool(np.all(solution.Ybar >= EPS_POS)) and not solution.low_confidence


def generator_growth_bound(model: GameModel, x, y1, z1) -> np.ndarray:
    """C_f C_sigma (1 + |x|) |z1| + C_h (1 + |x|^gamma) (y1)^+ with theta-scaled C_h."""
    c = model.constants
    xn = np.linalg.norm(np.atleast_2d(x), axis=1)
    zn = np.linalg.norm(np.atleast_2d(z1), axis=1)
    return c.C_f * c.C_sigma * (1 + xn) * zn + abs(model.theta) * c.C_h * (1 + xn**c.gamma) * np.maximum(y1, 0.0)


# ---------------------------------------------------------------------------
# ladder


@dataclass
class ConvergenceReport:
    n_list: list
    y0: list
    y_diffs: list  # max over nodes |Ybar^{n_{j+1}} - Ybar^{n_j}|
    z_diffs: list  # sum_k dt mean |Zbar^{n_{j+1}} - Zbar^{n_j}|^2
    passed: Optional[bool]
    note: str = ""

    def rows(self) -> list:
        return [
            {"n_from": a, "n_to": b, "y_max_diff": dy, "z_l2_diff": dz}
            for a, b, dy, dz in zip(self.n_list[:-1], self.n_list[1:], self.y_diffs, self.z_diffs)
        ]


def ladder_convergence(
    model: GameModel,
    isaacs: IsaacsMap,
    paths: PathBundle,
    basis: Optional[RegressionBasis] = None,
    n_list: Sequence[int] = (4, 16, 64),
    picard_iters: int = 2,
    keep_last: bool = True,
    tol: float = 1e-12,
):
    """Solve at every ladder level and measure successive differences.

    PASS when both difference sequences are nonincreasing over the last two
    gaps.  With fewer than three levels no verdict is given.  Returns the
    report and (when ``keep_last``) the solution at the finest level.
    """
    n_list = [int(v) for v in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly increasing")
    prev = None
    y0, dys, dzs = [], [], []
    dt = paths.grid.dt
    for n in n_list:
        sol = solve_backward(model, isaacs, paths, basis, n, picard_iters)
        y0.append(sol.y0.tolist())
        if prev is not None:
            dys.append(float(np.max(np.abs(sol.Ybar - prev.Ybar))))
            dz = np.sum((sol.Zbar - prev.Zbar) ** 2, axis=-1)  # (2, n, K)
            dzs.append(float(dt * dz.mean(axis=1).sum(axis=1).max()))
        prev = sol
    if len(n_list) < 3:
        report = ConvergenceReport(n_list, y0, dys, dzs, None, "fewer than three ladder levels: Cauchy check skipped")
    else:
        ok = dys[-1] <= dys[-2] + tol and dzs[-1] <= dzs[-2] + tol
        report = ConvergenceReport(n_list, y0, dys, dzs, bool(ok))
    return (report, prev) if keep_last else report


# ---------------------------------------------------------------------------
# feedback


def _slice_costates(tables: list, grid: TimeGrid, t: float, x):
    tab = tables[grid.index_of(t)]
    return tab.z(x, 1), tab.z(x, 2)


def extract_feedback(
    solution: BsdeSolution,
    isaacs: IsaacsMap,
    perturb: Optional[str] = None,
    player: int = 1,
) -> FeedbackControls:
    """Feedback ``(t, x) -> (u*, v*)(t, x, Z^1(t, x), Z^2(t, x))`` from the fitted slices.

    ``perturb="worst"`` replaces ``player``'s choice by the grid point that
    maximises its Hamiltonian against the other's equilibrium control,
    which gives a deliberately bad strategy for testing the verifier.
    """
    return feedback_from_tables(solution.tables, solution.grid, isaacs, perturb, player)


def feedback_from_tables(tables, grid: TimeGrid, isaacs: IsaacsMap, perturb: Optional[str] = None, player: int = 1):
    model = isaacs.model
    sizes = (model.control_grid_1.size, model.control_grid_2.size)
    if perturb not in (None, "worst"):
        raise ValueError(f"unknown perturbation {perturb!r}")

    def fn(t, x):
        x = np.atleast_2d(x)
        p, q = _slice_costates(tables, grid, t, x)
        res = isaacs(t, x, p, q)
        if perturb is None:
            return res.iu, res.iv
        A1, A2, _ = isaacs.games(t, x, p, q)
        rows = np.arange(x.shape[0])
        if player == 1:
            return np.argmax(A1[rows, :, res.iv], axis=1), res.iv
        return res.iu, np.argmax(A2[rows, res.iu, :], axis=1)

    tag = "from-BSDE" if perturb is None else f"from-BSDE:{perturb}:player{player}"
    return FeedbackControls(fn, sizes, tag)
