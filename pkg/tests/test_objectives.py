import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbolab import objectives
from cbolab.errors import InvalidParameterError, UnsupportedObjectiveError

C0_RASTRIGIN_D1 = 396.78417604357434  # 2 + 40 pi^2


def test_rastrigin_values_at_and_off_minimum():
    f = objectives.rastrigin(1)
    assert f.eval(np.array([[0.0]]))[0] == pytest.approx(1.0, abs=0.0)
    assert f.f_min == 1.0
    # cos term vanishes at half-integers: f(0.5) = 0.25 + 10 + 10 + 1
    assert f.eval(np.array([[0.5]]))[0] == pytest.approx(21.25, rel=1e-15)


def test_rastrigin_dimension_normalization():
    f1 = objectives.rastrigin(1)
    f4 = objectives.rastrigin(4)
    x4 = np.full((1, 4), 0.3)
    x1 = np.array([[0.3]])
    # the 1/d average makes the same per-coordinate offset give the same value
    assert f4.eval(x4)[0] == pytest.approx(f1.eval(x1)[0], rel=1e-14)
    assert f4.hessian_c0 == pytest.approx(C0_RASTRIGIN_D1 / 4.0, rel=1e-15)


def test_rastrigin_shifted_minimizer():
    f = objectives.rastrigin(2, b=1.5, c=2.0)
    assert np.allclose(f.argmin, [1.5, 1.5])
    assert f.eval(np.asarray(f.argmin)[None, :])[0] == pytest.approx(2.0, abs=1e-13)
    assert f.f_min == 2.0


def test_rastrigin_gradient_matches_finite_differences():
    f = objectives.rastrigin(3)
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=(5, 3))
    g = f.grad(x)
    eps = 1e-6
    for k in range(3):
        shift = np.zeros(3)
        shift[k] = eps
        fd = (f.eval(x + shift) - f.eval(x - shift)) / (2 * eps)
        assert np.allclose(g[:, k], fd, atol=1e-5)


def test_rastrigin_requires_positive_offset():
    with pytest.raises(InvalidParameterError):
        objectives.rastrigin(2, c=0.0)


def test_quadratic_basics():
    f = objectives.shifted_quadratic(2, center=[1.0, -1.0], scale=2.0, offset=0.5)
    assert f.eval(np.array([[1.0, -1.0]]))[0] == pytest.approx(0.5, abs=0.0)
    assert f.eval(np.array([[2.0, -1.0]]))[0] == pytest.approx(2.5, rel=1e-15)
    assert f.hessian_c0 == 4.0
    assert f.hessian_c1 == 0.0
    assert np.allclose(f.grad(np.array([[2.0, -1.0]])), [[4.0, 0.0]])


def test_quadratic_scalar_center_broadcasts():
    f = objectives.shifted_quadratic(3, center=0.5)
    assert np.allclose(f.argmin, [0.5, 0.5, 0.5])


def test_omega_is_gibbs_weight():
    f = objectives.shifted_quadratic(1, center=0.0)
    x = np.array([[0.0], [1.0]])
    w = f.omega(x, 2.0)
    assert w[0] == pytest.approx(math.exp(-2.0), rel=1e-15)
    assert w[1] == pytest.approx(math.exp(-4.0), rel=1e-15)


def test_by_name_round_trip():
    f = objectives.by_name("rastrigin", {"d": 2, "b": 0.5, "c": 3.0})
    assert f.dim == 2
    assert f.f_min == 3.0
    g = objectives.by_name("shifted_quadratic", {"d": 1, "center": 0.0, "scale": 1.0, "offset": 1.0})
    assert g.f_min == 1.0


def test_by_name_unknown():
    with pytest.raises(UnsupportedObjectiveError):
        objectives.by_name("ackley", {"d": 2})


def test_objectives_pickle_for_worker_processes():
    for f in (objectives.rastrigin(2), objectives.shifted_quadratic(2, center=0.0)):
        g = pickle.loads(pickle.dumps(f))
        x = np.array([[0.3, -0.7]])
        assert g.eval(x)[0] == f.eval(x)[0]


@settings(max_examples=50, deadline=None)
@given(st.floats(-4.0, 4.0), st.floats(-4.0, 4.0))
def test_rastrigin_lower_bound_holds(x0, x1):
    f = objectives.rastrigin(2)
    val = f.eval(np.array([[x0, x1]]))[0]
    assert val >= f.f_lower_bound - 1e-12
    assert val >= f.f_min - 1e-12


# ---------------------------------------------------------------------------
# assumption checking


def test_check_assumptions_quadratic_exact():
    f = objectives.shifted_quadratic(2, center=0.0)
    rep = objectives.check_assumptions(f, alpha=1.0, box=(-2.0, 2.0), n_grid=9)
    assert rep.hessian_ok
    # c0*I - H == 0 for the quadratic, up to finite-difference noise
    assert abs(rep.worst_eigenvalue) < 1e-5
    assert rep.alpha_ge_c1
    assert rep.lipschitz_estimate > 0


def test_check_assumptions_rastrigin():
    f = objectives.rastrigin(1)
    rep = objectives.check_assumptions(f, alpha=5.0, box=(-1.0, 1.0), n_grid=41)
    assert rep.hessian_ok
    assert rep.alpha_ge_c1  # c1 = 0


def test_check_assumptions_rejects_understated_curvature():
    base = objectives.shifted_quadratic(1, center=0.0, scale=1.0)
    lying = objectives.ObjectiveSpec(
        name="understated",
        dim=1,
        eval=base.eval,
        f_min=base.f_min,
        f_lower_bound=base.f_lower_bound,
        grad=base.grad,
        hess=base.hess,
        hessian_c0=1.0,  # true curvature is 2
        hessian_c1=0.0,
    )
    rep = objectives.check_assumptions(lying, alpha=1.0, box=(-1.0, 1.0), n_grid=9)
    assert not rep.hessian_ok
    assert rep.worst_eigenvalue < -0.5


def test_check_assumptions_flags_small_alpha():
    base = objectives.shifted_quadratic(1, center=0.0)
    spec = objectives.ObjectiveSpec(
        name="needs_sharp_alpha",
        dim=1,
        eval=base.eval,
        f_min=base.f_min,
        f_lower_bound=base.f_lower_bound,
        grad=base.grad,
        hess=base.hess,
        hessian_c0=2.0,
        hessian_c1=3.0,
    )
    rep = objectives.check_assumptions(spec, alpha=1.0, box=(-1.0, 1.0), n_grid=9)
    assert not rep.alpha_ge_c1


def test_objective_spec_validation():
    with pytest.raises(InvalidParameterError):
        objectives.ObjectiveSpec(name="bad", dim=1, eval=lambda x: x[:, 0], f_min=0.0, f_lower_bound=0.0)
    with pytest.raises(InvalidParameterError):
        objectives.ObjectiveSpec(name="bad", dim=1, eval=lambda x: x[:, 0], f_min=1.0, f_lower_bound=2.0)
