import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_model
from rsgame.hamiltonian import (
    NoEquilibrium,
    StaticGame,
    build_isaacs_map,
    eval_hamiltonian,
    solve_static_nash,
)
from rsgame.model import ControlGrid, CostSpec, DiffusionSpec, DriftSpec


def brute_force_nash(A1, A2):
    """All pure equilibria by independent double loops, in lexicographic order."""
    n1, n2 = A1.shape
    found = []
    for i, j in itertools.product(range(n1), range(n2)):
        if all(A1[i, j] <= A1[k, j] for k in range(n1)) and all(A2[i, j] <= A2[i, k] for k in range(n2)):
            found.append((i, j))
    return found


def test_zero_matrices_pick_origin():
    assert solve_static_nash(StaticGame(np.zeros((3, 4)), np.zeros((3, 4)))) == (0, 0)


def test_two_by_two_hand_example():
    game = StaticGame(np.array([[0, 1], [2, 3]]), np.array([[0, 2], [1, 3]]))
    assert solve_static_nash(game) == (0, 0)
    assert brute_force_nash(game.A1, game.A2) == [(0, 0)]


def test_anti_coordination_has_no_pure_equilibrium():
    # matching pennies in cost form
    A1 = np.array([[0.0, 1.0], [1.0, 0.0]])
    A2 = -A1
    assert brute_force_nash(A1, A2) == []
    with pytest.raises(NoEquilibrium):
        solve_static_nash(StaticGame(A1, A2))


def test_static_game_validates_shapes_and_finiteness():
    with pytest.raises(ValueError):
        StaticGame(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        StaticGame(np.array([[np.inf]]), np.zeros((1, 1)))


game_sizes = st.tuples(st.integers(1, 12), st.integers(1, 12))


@settings(max_examples=200, deadline=None)
@given(game_sizes.flatmap(lambda s: st.tuples(
    arrays(np.int64, s, elements=st.integers(-3, 3)), arrays(np.int64, s, elements=st.integers(-3, 3))
)))
def test_agrees_with_enumeration(mats):
    A1, A2 = (m.astype(float) for m in mats)
    eqs = brute_force_nash(A1, A2)
    if not eqs:
        with pytest.raises(NoEquilibrium):
            solve_static_nash(StaticGame(A1, A2))
    else:
        i, j = solve_static_nash(StaticGame(A1, A2))
        assert (i, j) == eqs[0]
        assert StaticGame(A1, A2).is_equilibrium(i, j)


def test_hamiltonian_trivial_cases():
    model = make_model(costs=(CostSpec.constant(0.7), None), grid1=ControlGrid.linspace(-1, 1, 3))
    for p in ([0.0], [3.0], [-2.0]):
        assert eval_hamiltonian(model, 0.2, [1.0], p, [1.0], [0.0], 1) == pytest.approx(0.7)
    drifted = make_model(
        drift=DriftSpec("affine", A=np.array([[1.0]]), B1=np.array([[2.0]])),
        costs=(CostSpec("quadratic", a=[0.5], Ru=np.array([[1.0]])), None),
        grid1=ControlGrid.linspace(-1, 1, 3),
    )
    # p = 0 leaves only the running cost
    assert eval_hamiltonian(drifted, 0.0, [2.0], [0.0], [1.0], [0.0], 1) == pytest.approx(0.5 * 2.0 + 1.0)


def test_hamiltonian_hand_arithmetic():
    model = make_model(
        sigma=DiffusionSpec("constant", np.array([[2.0]])),
        drift=DriftSpec("affine", B1=np.array([[1.0]]), B2=np.array([[1.0]])),
        costs=(CostSpec("quadratic", Ru=np.array([[1.0]])), None),
        grid1=ControlGrid.linspace(0, 0.5, 2),
        grid2=ControlGrid.linspace(0, 0.5, 2),
    )
    assert eval_hamiltonian(model, 0.0, [0.0], [1.0], [0.5], [0.5], 1) == pytest.approx(0.75)


def test_isaacs_map_decouples_without_drift():
    grid = ControlGrid(np.array([[-1.0], [0.2], [1.0]]))
    model = make_model(
        costs=(CostSpec("quadratic", Ru=np.array([[1.0]])), CostSpec("quadratic", Rv=np.array([[1.0]]))),
        grid1=grid,
        grid2=grid,
    )
    isaacs = build_isaacs_map(model)
    rng = np.random.default_rng(0)
    res = isaacs(0.3, rng.normal(size=(50, 1)), rng.normal(size=(50, 1)) * 5, rng.normal(size=(50, 1)) * 5)
    assert np.all(res.iu == 1) and np.all(res.iv == 1)


def test_separable_game_matches_own_argmins():
    g1 = ControlGrid.linspace(-1, 1, 5)
    g2 = ControlGrid.linspace(-1, 1, 4)
    model = make_model(
        drift=DriftSpec("affine", B1=np.array([[1.0]]), B2=np.array([[-0.5]])),
        costs=(CostSpec("quadratic", Ru=np.array([[0.7]])), CostSpec("quadratic", Rv=np.array([[0.3]]))),
        grid1=g1,
        grid2=g2,
    )
    isaacs = build_isaacs_map(model)
    rng = np.random.default_rng(1)
    for _ in range(30):
        p, q = rng.normal(size=2) * 2
        res = isaacs(0.0, [[0.0]], [[p]], [[q]])
        u = g1.points[:, 0]
        v = g2.points[:, 0]
        iu = int(np.argmin(p * u + 0.7 * u * u))
        iv = int(np.argmin(q * (-0.5) * v + 0.3 * v * v))
        A1, A2, _ = isaacs.games(0.0, [[0.0]], [[p]], [[q]])
        assert (res.iu[0], res.iv[0]) == brute_force_nash(A1[0], A2[0])[0]
        assert res.iu[0] == iu and res.iv[0] == iv


def test_scaling_p_checked_by_enumeration():
    grid = ControlGrid.linspace(-1, 1, 3)
    model = make_model(drift=DriftSpec("affine", B1=np.array([[1.0]]), B2=np.array([[1.0]])), grid1=grid, grid2=grid)
    isaacs = build_isaacs_map(model)
    for scale in (1.0, 3.0):
        p = np.array([[0.4 * scale]])
        q = np.array([[-0.9 * scale]])
        res = isaacs(0.0, [[0.0]], p, q)
        A1, A2, _ = isaacs.games(0.0, [[0.0]], p, q)
        assert (res.iu[0], res.iv[0]) == brute_force_nash(A1[0], A2[0])[0]


def test_isaacs_result_satisfies_inequalities_and_counts_multiplicity():
    grid = ControlGrid.linspace(-1, 1, 3)
    model = make_model(grid1=grid, grid2=grid)  # all zero: every pair is an equilibrium
    isaacs = build_isaacs_map(model)
    x = np.zeros((10, 1))
    res = isaacs(0.0, x, x, x)
    assert isaacs.verify(0.0, x, x, x, res)
    assert np.all(res.n_equilibria == 9)
    assert isaacs.stats["multiple"] == 10
    assert isaacs.stats["ambiguous_values"] == 0


def test_no_equilibrium_reports_the_point():
    table = np.zeros((2, 2, 1))
    table[0, 1] = table[1, 0] = 1.0
    model = make_model(
        drift=DriftSpec("table", table=table),
        grid1=ControlGrid.linspace(0, 1, 2),
        grid2=ControlGrid.linspace(0, 1, 2),
    )
    isaacs = build_isaacs_map(model)
    # H_1 = p f, H_2 = q f with p = 1, q = -1: matching pennies
    with pytest.raises(NoEquilibrium) as info:
        isaacs(0.5, [[0.0], [2.0]], [[0.0], [1.0]], [[0.0], [-1.0]])
    assert info.value.x == [2.0] and info.value.p == [1.0] and info.value.q == [-1.0]


def test_kinks_of_minimised_hamiltonian_are_finite():
    grid = ControlGrid.linspace(-1, 1, 5)
    model = make_model(
        drift=DriftSpec("affine", B1=np.array([[1.0]])),
        costs=(CostSpec("quadratic", Ru=np.array([[1.0]])), None),
        grid1=grid,
    )
    isaacs = build_isaacs_map(model)
    kinks = isaacs.count_kinks(0.0, [0.0], [0.0], [1.0], [0.0], n_points=401, span=4.0)
    # the lower envelope of 5 lines has at most 4 breakpoints
    assert 1 <= kinks <= 2 * 4
