import csv
import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    ONE_PLAYER_GRID,
    linear_terminal_model,
    make_model,
    one_player_log_cost,
    one_player_model,
    random_affine_model,
    zero_model,
)
from rsgame.bsde import fixed_control_generator, solve_backward
from rsgame.feedback import FeedbackControls
from rsgame.model import CostSpec, TerminalSpec
from rsgame.payoff import (
    PayoffEstimate,
    PayoffOverflowError,
    check_bsde_representation,
    eval_payoff_direct,
    eval_payoff_reweighted,
    eval_payoffs,
    payoff_samples,
    write_payoff_rows,
)
from rsgame.sde import TimeGrid, brownian_increments, simulate_driftless


@pytest.mark.parametrize("method", ["direct", "reweighted"])
@pytest.mark.parametrize("iu", range(5))
def test_one_player_constant_controls_match_closed_form(method, iu):
    model = one_player_model()
    grid = TimeGrid.for_model(model, 10)
    fb = FeedbackControls.constant(model, iu, 0)
    est = (eval_payoff_direct if method == "direct" else eval_payoff_reweighted)(model, fb, grid, 40_000, 5)
    exact = math.exp(one_player_log_cost(ONE_PLAYER_GRID.points[iu, 0]))
    assert abs(est.value - exact) <= 3 * est.std_error
    assert est.n_paths == 40_000 and est.n_flagged == 0


@pytest.mark.parametrize("method", ["direct", "reweighted"])
def test_zero_model_costs_are_exactly_one(method):
    model = zero_model()
    grid = TimeGrid.for_model(model, 5)
    j1, j2 = eval_payoffs(model, FeedbackControls.constant(model, 0, 0), grid, 1000, 0, method)
    assert j1.value == 1.0 and j2.value == 1.0
    assert j1.std_error == 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.2, 3.0))
def test_constant_running_cost_gives_exp_cT(c, T):
    model = make_model(T=T, costs=(CostSpec.constant(c), None))
    grid = TimeGrid.for_model(model, 7)
    est = eval_payoff_direct(model, FeedbackControls.constant(model, 0, 0), grid, 200, 1)
    assert est.value == pytest.approx(math.exp(c * T), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(0.0, 1.0))
def test_larger_costs_give_larger_payoffs_pathwise(seed, bump):
    # h' = h + bump >= h on every path, so J' >= J sample by sample
    model = random_affine_model(seed % 5)
    grid = TimeGrid.for_model(model, 8)
    dB = brownian_increments(500, grid, model.dim_m, seed)
    fb = FeedbackControls.constant(model, 1, 2)
    base = payoff_samples(model, fb, grid, 500, seed, increments=dB)
    c1 = model.running_costs[0]
    bumped_cost = dataclasses.replace(c1, c0=c1.c0 + bump)
    bumped = model.replace(running_costs=(bumped_cost, model.running_costs[1]))
    more = payoff_samples(bumped, fb, grid, 500, seed, increments=dB)
    assert np.all(more.values(1) >= base.values(1) * (1 - 1e-12))
    np.testing.assert_array_equal(more.values(2), base.values(2))


def test_direct_and_reweighted_agree_on_affine_model():
    model = random_affine_model(11)
    grid = TimeGrid.for_model(model, 50)
    fb = FeedbackControls.constant(model, 0, 2)
    d = eval_payoffs(model, fb, grid, 40_000, 3, "direct")
    r = eval_payoffs(model, fb, grid, 40_000, 4, "reweighted")
    for a, b in zip(d, r):
        assert abs(a.value - b.value) <= 3 * math.hypot(a.std_error, b.std_error)


def test_theta_prescales_running_and_terminal_costs():
    base = make_model(costs=(CostSpec.constant(0.3), None), terminals=(TerminalSpec.linear([0.2]), None))
    scaled = base.replace(theta=2.0)
    doubled = make_model(costs=(CostSpec.constant(0.6), None), terminals=(TerminalSpec.linear([0.4]), None))
    grid = TimeGrid.for_model(base, 5)
    fb = FeedbackControls.constant(base, 0, 0)
    a = eval_payoff_direct(scaled, fb, grid, 2000, 9)
    b = eval_payoff_direct(doubled, fb, grid, 2000, 9)
    assert a.value == pytest.approx(b.value, rel=1e-13)


def test_overflowing_exponent_raises():
    model = make_model(terminals=(TerminalSpec.linear([2000.0]), None))
    grid = TimeGrid.for_model(model, 2)
    with pytest.raises(PayoffOverflowError):
        eval_payoff_direct(model, FeedbackControls.constant(model, 0, 0), grid, 2000, 0)


def test_estimates_are_deterministic_across_workers():
    model = random_affine_model(3)
    grid = TimeGrid.for_model(model, 10)
    fb = FeedbackControls.constant(model, 2, 0)
    a = eval_payoff_direct(model, fb, grid, 3000, 8, workers=1)
    b = eval_payoff_direct(model, fb, grid, 3000, 8, workers=8)
    assert a.value == b.value and a.std_error == b.std_error


def test_unknown_method_and_negative_se_rejected():
    model = zero_model()
    grid = TimeGrid.for_model(model, 2)
    with pytest.raises(ValueError):
        payoff_samples(model, FeedbackControls.constant(model, 0, 0), grid, 10, 0, "bogus")
    with pytest.raises(ValueError):
        PayoffEstimate(1.0, -0.1, 10, "direct")


def _fixed_solution(model, fb, n_paths, K, seed):
    grid = TimeGrid.for_model(model, K)
    paths = simulate_driftless(model, grid, n_paths, seed)
    return solve_backward(model, None, paths, generator=fixed_control_generator(model, fb))


def test_representation_holds_for_fixed_control():
    model = one_player_model()
    fb = FeedbackControls.constant(model, 1, 0)
    sol = _fixed_solution(model, fb, 40_000, 25, 0)
    rep = check_bsde_representation(model, fb, sol, n_paths=40_000, seed=1)
    assert rep.passed, rep.rows()
    assert rep.cases[1].z_score == 0.0  # player 2 has J = 1 on both sides


def test_representation_exact_agreement_passes_without_se():
    model = zero_model()
    fb = FeedbackControls.constant(model, 0, 0)
    sol = _fixed_solution(model, fb, 500, 4, 0)
    rep = check_bsde_representation(model, fb, sol, n_paths=500, seed=1)
    assert rep.passed
    assert all(c.z_score == 0.0 and c.combined_se == 0.0 for c in rep.cases)


def test_representation_detects_wrong_solution():
    model = linear_terminal_model(0.5)
    fb = FeedbackControls.constant(model, 0, 0)
    wrong = _fixed_solution(linear_terminal_model(0.9), fb, 20_000, 10, 0)
    rep = check_bsde_representation(model, fb, wrong, n_paths=20_000, seed=1)
    assert not rep.passed


def test_payoff_rows_append_with_single_header(tmp_path):
    model = zero_model()
    grid = TimeGrid.for_model(model, 2)
    ests = eval_payoffs(model, FeedbackControls.constant(model, 0, 0), grid, 10, 0)
    out = tmp_path / "payoffs.csv"
    write_payoff_rows(out, ests, "abc")
    write_payoff_rows(out, ests, "abc")
    rows = list(csv.reader(out.open()))
    assert rows[0][0] == "model_hash"
    assert len(rows) == 5
    assert rows[1][:3] == ["abc", "constant(0,0)", "1"]
