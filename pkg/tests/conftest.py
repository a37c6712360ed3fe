"""Shared model factories for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from rsgame.model import (
    BoundedDriftSpec,
    ControlGrid,
    CostSpec,
    DiffusionSpec,
    DriftSpec,
    GameModel,
    TerminalSpec,
)

SINGLE = ControlGrid(np.array([[0.0]]))


def make_model(
    m: int = 1,
    T: float = 1.0,
    x0=None,
    sigma: DiffusionSpec = None,
    drift: DriftSpec = None,
    costs=(None, None),
    terminals=(None, None),
    grid1: ControlGrid = SINGLE,
    grid2: ControlGrid = SINGLE,
    theta: float = 1.0,
    bounded: BoundedDriftSpec = None,
    name: str = "test",
) -> GameModel:
    return GameModel(
        dim_m=m,
        horizon_T=T,
        x0=np.zeros(m) if x0 is None else np.asarray(x0, dtype=float),
        sigma=sigma or DiffusionSpec.identity(m),
        drift_f=drift or DriftSpec.zero(),
        running_costs=tuple(c or CostSpec.constant(0.0) for c in costs),
        terminal_costs=tuple(g or TerminalSpec.constant(0.0) for g in terminals),
        control_grid_1=grid1,
        control_grid_2=grid2,
        theta=theta,
        bounded_drift=bounded or BoundedDriftSpec(),
        name=name,
    )


def zero_model(m: int = 1) -> GameModel:
    return make_model(m=m, name="zero")


def linear_terminal_model(a: float = 0.5, x0: float = 0.0) -> GameModel:
    """f = h = 0, sigma = 1, g^1 = a x, g^2 = -a x: Y_0^i = +-a x0 + a^2 T / 2."""
    return make_model(
        x0=[x0],
        terminals=(TerminalSpec.linear([a]), TerminalSpec.linear([-a])),
        name="linear-terminal",
    )


ONE_PLAYER_GRID = ControlGrid(np.array([[-1.0], [-0.5], [0.0], [0.5], [1.0]]))
ONE_PLAYER_R = 1.0
ONE_PLAYER_A = 0.8


def one_player_model() -> GameModel:
    """dX = u dt + dW, h_1 = u^2, g^1 = 0.8 x, player 2 passive.

    ln J^1 for constant u is ``u^2 T + a (x0 + u T) + a^2 T / 2``, minimised
    on the grid by u = -0.5; the worst grid control is u = 1.
    """
    return make_model(
        drift=DriftSpec("affine", B1=np.array([[1.0]])),
        costs=(CostSpec("quadratic", Ru=np.array([[ONE_PLAYER_R]])), None),
        terminals=(TerminalSpec.linear([ONE_PLAYER_A]), None),
        grid1=ONE_PLAYER_GRID,
        name="one-player",
    )


def one_player_log_cost(u: float, T: float = 1.0, x0: float = 0.0) -> float:
    a = ONE_PLAYER_A
    return ONE_PLAYER_R * u * u * T + a * (x0 + u * T) + a * a * T / 2


def random_affine_model(seed: int, m: int = 1) -> GameModel:
    """Small random affine game with 3-point control grids per player."""
    rng = np.random.default_rng(seed)
    sig = np.diag(rng.uniform(0.8, 1.2, m))
    drift = DriftSpec(
        "affine",
        A=rng.uniform(-0.2, 0.2, (m, m)),
        B1=rng.uniform(-0.5, 0.5, (m, m)),
        B2=rng.uniform(-0.5, 0.5, (m, m)),
        c=rng.uniform(-0.2, 0.2, m),
    )
    costs = tuple(
        CostSpec(
            "quadratic",
            c0=float(rng.uniform(-0.1, 0.1)),
            a=rng.uniform(-0.1, 0.1, m),
            Ru=np.eye(m) * rng.uniform(0.05, 0.2),
            Rv=np.eye(m) * rng.uniform(0.05, 0.2),
        )
        for _ in range(2)
    )
    terms = tuple(TerminalSpec.linear(rng.uniform(-0.4, 0.4, m)) for _ in range(2))
    grid = ControlGrid(np.linspace(-1.0, 1.0, 3)[:, None] * np.ones((1, m)))
    return make_model(
        m=m,
        x0=rng.uniform(-0.5, 0.5, m),
        sigma=DiffusionSpec("constant", sig),
        drift=drift,
        costs=costs,
        terminals=terms,
        grid1=grid,
        grid2=grid,
        name=f"random-affine-{seed}",
    )


@pytest.fixture
def zero():
    return zero_model()


@pytest.fixture
def one_player():
    return one_player_model()


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
