import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ONE_PLAYER_GRID, one_player_model, random_affine_model, zero_model
from rsgame.bsde import extract_feedback, solve_backward
from rsgame.feedback import FeedbackControls
from rsgame.hamiltonian import build_isaacs_map
from rsgame.nash import Deviation, DeviationSuite, default_deviation_suite, verify_nash, write_margin_csv
from rsgame.sde import TimeGrid, simulate_driftless


@pytest.fixture(scope="module")
def one_player_setup():
    model = one_player_model()
    grid = TimeGrid.for_model(model, 25)
    paths = simulate_driftless(model, grid, 40_000, 0)
    isaacs = build_isaacs_map(model)
    sol = solve_backward(model, isaacs, paths, ladder_n=64)
    return model, grid, sol, isaacs


def test_suite_composition():
    model = random_affine_model(1)
    suite = default_deviation_suite(model, seed=3, dt=0.1)
    assert suite.count("constant") == 3 + 3
    assert suite.count("lagged") == 2
    assert suite.count("random table") == 10
    assert len(suite) == 18
    assert {d.player for d in suite} == {1, 2}
    assert len(default_deviation_suite(model, seed=3)) == 16


def test_random_tables_are_seeded():
    model = random_affine_model(1)
    eq = FeedbackControls.constant(model, 0, 0)
    x = np.linspace(-3, 3, 50)[:, None]
    a = [d.build(eq)(0.4, x) for d in default_deviation_suite(model, seed=3) if d.description.startswith("random")]
    b = [d.build(eq)(0.4, x) for d in default_deviation_suite(model, seed=3) if d.description.startswith("random")]
    c = [d.build(eq)(0.4, x) for d in default_deviation_suite(model, seed=4) if d.description.startswith("random")]
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    assert not all(np.array_equal(p, q) for p, q in zip(a, c))


def test_bsde_feedback_passes_certificate(one_player_setup):
    model, grid, sol, isaacs = one_player_setup
    eq = extract_feedback(sol, isaacs)
    cert = verify_nash(model, eq, default_deviation_suite(model, 7, dt=grid.dt), grid, 20_000, 1)
    assert cert.passed, [d for d in cert.deviations if not d.passed]
    assert "evidence, not proof" in cert.note
    # player 2 has one control: every one of its deviations is the equilibrium itself
    for d in cert.deviations:
        if d.player == 2:
            assert d.margin == 0.0 and d.margin_se == 0.0


def test_worst_control_is_detected(one_player_setup):
    model, grid, sol, isaacs = one_player_setup
    bad = extract_feedback(sol, isaacs, perturb="worst", player=1)
    cert = verify_nash(model, bad, default_deviation_suite(model, 7, dt=grid.dt), grid, 20_000, 1)
    assert not cert.passed
    worst = cert.worst
    assert worst.player == 1 and worst.margin < -3 * worst.margin_se
    assert cert.to_dict()["verdict"] == "FAIL"


def test_best_constant_against_constant_deviations():
    model = one_player_model()
    grid = TimeGrid.for_model(model, 10)
    best = int(np.argmin([u * u + 0.8 * u for u in ONE_PLAYER_GRID.points[:, 0]]))
    eq = FeedbackControls.constant(model, best, 0)
    suite = DeviationSuite([d for d in default_deviation_suite(model, 0, n_random=0)])
    cert = verify_nash(model, eq, suite, grid, 20_000, 2)
    assert cert.passed
    same = [d for d in cert.deviations if d.description.startswith(f"constant u1[{best}]")]
    assert same[0].margin == 0.0  # reproduces the equilibrium on common noise
    others = [d for d in cert.deviations if d.player == 1 and d is not same[0]]
    assert all(d.margin > 0 for d in others)


def test_certificate_is_identical_across_workers():
    model = random_affine_model(2)
    grid = TimeGrid.for_model(model, 10)
    eq = FeedbackControls.constant(model, 1, 1)
    suite = default_deviation_suite(model, 5, dt=grid.dt)
    a = verify_nash(model, eq, suite, grid, 2000, 4, workers=1)
    b = verify_nash(model, eq, suite, grid, 2000, 4, workers=8)
    assert a.to_dict() == b.to_dict()


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_passing_is_monotone_in_k(k1, k2):
    model = zero_model()
    cert = verify_nash(
        model,
        FeedbackControls.constant(model, 0, 0),
        default_deviation_suite(model, 0),
        TimeGrid.for_model(model, 2),
        200,
        0,
    )
    lo, hi = sorted((k1, k2))
    if cert.passed_at(lo):
        assert cert.passed_at(hi)


def test_custom_deviation_and_output_files(tmp_path):
    model = zero_model()
    always0 = Deviation(1, "custom zero", lambda eq: (lambda t, x: np.zeros(len(x), dtype=np.int64)))
    cert = verify_nash(
        model, FeedbackControls.constant(model, 0, 0), DeviationSuite([always0]), TimeGrid.for_model(model, 2), 100, 0
    )
    assert cert.passed and cert.deviations[0].margin == 0.0
    write_margin_csv(cert, tmp_path / "margins.csv")
    rows = list(csv.DictReader((tmp_path / "margins.csv").open()))
    assert rows[0]["description"] == "custom zero"
    cert.write_json(tmp_path / "certificate.json")
    data = json.loads((tmp_path / "certificate.json").read_text())
    assert data["verdict"] == "PASS" and data["baseline"][0]["J"] == 1.0
