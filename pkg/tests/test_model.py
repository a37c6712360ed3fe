import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_model, zero_model
from rsgame.model import (
    ControlGrid,
    CostSpec,
    DiffusionSpec,
    DriftSpec,
    ModelConstants,
    SingularDiffusionError,
    TerminalSpec,
    validate_model,
)


def test_zero_identity_model_passes_everything():
    rep = validate_model(zero_model(), n_probe=128, seed=0)
    assert rep.passed, rep.format()
    assert not rep.statistical_only


def test_quadratic_drift_fails_linear_growth():
    quad = DriftSpec("callable", fn=lambda t, x, u, v: x * np.linalg.norm(x, axis=1, keepdims=True))
    model = make_model(drift=quad)
    model = model.replace(constants=dataclasses.replace(model.constants, C_f=2.0))
    rep = validate_model(model, n_probe=128, seed=0)
    assert not rep["A2(i)"].passed
    assert rep["A2(i)"].worst_ratio > 1
    # the violation sits at large |x|
    assert np.linalg.norm(rep["A2(i)"].worst_point[1:]) > 2
    assert rep.statistical_only


def test_affine_drift_constant_too_small_then_raised():
    model = make_model(drift=DriftSpec("affine", A=np.array([[2.0]])))
    assert math.isclose(model.constants.C_f, 2.0)
    low = model.replace(constants=dataclasses.replace(model.constants, C_f=1.5))
    assert not validate_model(low, n_probe=64, seed=1)["A2(i)"].passed
    high = model.replace(constants=dataclasses.replace(model.constants, C_f=2.5))
    assert validate_model(high, n_probe=64, seed=1)["A2(i)"].passed


def test_gamma_outside_range_is_reported_not_raised():
    model = zero_model()
    bad = model.replace(constants=dataclasses.replace(model.constants, gamma=2.5))
    rep = validate_model(bad, n_probe=16, seed=0)
    assert not rep.passed
    assert [c.name for c in rep.failures] == ["A2(gamma)"]


def test_singular_sigma_names_the_point():
    with pytest.raises(SingularDiffusionError):
        DiffusionSpec("constant", np.zeros((1, 1)))

    def sig(t, x):
        # singular wherever x > 5
        s = np.where(x[:, 0] > 5.0, 0.0, 1.0)
        return s[:, None, None] * np.ones((1, 1, 1))

    model = make_model(sigma=DiffusionSpec("callable", fn=sig))
    model = model.replace(constants=ModelConstants(C_sigma=2.0, C_f=0.0, C_h=0.0, C_g=0.0))
    with pytest.raises(SingularDiffusionError) as info:
        validate_model(model, n_probe=64, seed=0)
    assert info.value.x[0] > 5.0


def test_validation_is_deterministic_given_seed():
    model = make_model(drift=DriftSpec("affine", A=np.array([[0.3]]), c=[0.1]))
    a = validate_model(model, n_probe=64, seed=7).to_dict()
    b = validate_model(model, n_probe=64, seed=7).to_dict()
    assert a == b


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**16), st.floats(0.5, 3.0))
def test_passing_on_points_passes_on_any_subset(seed, slope):
    model = make_model(
        drift=DriftSpec("affine", A=np.array([[slope]])),
        costs=(CostSpec("clipped-power", k=1.0, power=1.2), None),
    )
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 1, 40)
    x = rng.uniform(-10, 10, (40, 1))
    full = validate_model(model, points=(t, x), seed=seed)
    sub = rng.choice(40, 15, replace=False)
    part = validate_model(model, points=(t[sub], x[sub]), seed=seed)
    for c in full.checks:
        if c.passed:
            assert part[c.name].passed, c.name


def test_theta_defaults_to_one_and_prescales_costs():
    model = make_model(costs=(CostSpec.constant(0.5), None), terminals=(TerminalSpec.linear([1.0]), None))
    assert model.theta == 1.0
    x = np.array([[2.0]])
    scaled = model.replace(theta=-2.0)
    assert scaled.running_all(1, 0.0, x)[0, 0, 0] == pytest.approx(-1.0)
    assert scaled.terminal(1, x)[0] == pytest.approx(-4.0)


def test_control_grid_invariants():
    g = ControlGrid(np.array([[0.0], [1.0], [2.0]]))
    assert list(g.indices) == [0, 1, 2]
    with pytest.raises(ValueError):
        ControlGrid(np.array([[0.0], [0.0]]))
    with pytest.raises(ValueError):
        ControlGrid(np.zeros((0, 1)))


def test_derived_constants_for_closed_families():
    model = make_model(
        sigma=DiffusionSpec("constant", np.array([[2.0]])),
        drift=DriftSpec("affine", A=np.array([[0.5]]), B1=np.array([[1.0]])),
        costs=(CostSpec("clipped-power", c0=0.2, k=1.0, power=1.0), None),
        terminals=(TerminalSpec.linear([0.3]), None),
        grid1=ControlGrid.linspace(-1, 1, 3),
    )
    c = model.constants
    assert c.C_sigma == pytest.approx(2.5)
    assert c.C_f == pytest.approx(1.0)
    assert c.C_h == pytest.approx(1.2)
    assert c.C_g == pytest.approx(0.3)
    assert validate_model(model, n_probe=128, seed=3).passed


def test_affine_bounded_sigma_is_valid():
    model = make_model(sigma=DiffusionSpec("affine-bounded", np.eye(1), kappa=0.4))
    rep = validate_model(model, n_probe=128, seed=0)
    assert rep.passed, rep.format()


def test_model_is_immutable():
    model = zero_model()
    with pytest.raises(dataclasses.FrozenInstanceError):
        model.theta = 2.0
    with pytest.raises(ValueError):
        model.x0[0] = 1.0
