import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbolab import objectives, theory
from cbolab.errors import InvalidParameterError, ThresholdNotMetError, UnsupportedObjectiveError

CONST = theory.RegularizerSchedule(kind="constant", eta=1.0)
FLOOR = theory.RegularizerSchedule(kind="exp_floor", eta=1.0, f_lo=1.0)

# independently computed reference values (high-precision quadrature /
# root-finding, frozen)
L_OMEGA_RASTRIGIN_A5 = 0.18157987800782613  # alpha * sup |f'| e^{-alpha f}, d=1, B=0, C=1
L_OMEGA_QUAD_A1 = 0.31555369865639015  # sqrt(2) e^{-3/2}
L_OMEGA_QUAD_A2 = 0.16416999724779759  # e^{-5/2}
C0_RASTRIGIN_D1 = 396.78417604357434
WP_E_OMEGA_A = 1.9161691893408089e-4
WP_E_OMEGA_B = 6.6826634878830149e-3
WP_RHS_A = 0.4216352530198939
WP_RHS_B = 1.1443562670863847e-3
WP_EPS_B = 0.8287574603806809


# ---------------------------------------------------------------------------
# regularizer schedule and weight-ratio constant


def test_constant_schedule_is_flat():
    h = theory.RegularizerSchedule(kind="constant", eta=0.25)
    assert h.h(1.0) == 0.25
    assert h.h(500.0) == 0.25
    assert h.log_h(500.0) == math.log(0.25)


def test_exp_floor_schedule_decays_at_rate_f_lo():
    h = theory.RegularizerSchedule(kind="exp_floor", eta=2.0, f_lo=0.5)
    assert h.log_h(10.0) == pytest.approx(math.log(2.0) - 5.0, abs=1e-15)
    assert h.h(4.0) == pytest.approx(2.0 * math.exp(-2.0), rel=1e-15)


def test_exp_floor_log_stays_finite_where_h_underflows():
    h = theory.RegularizerSchedule(kind="exp_floor", eta=1.0, f_lo=1.0)
    assert h.h(2000.0) == 0.0  # underflow in the direct form
    assert h.log_h(2000.0) == -2000.0


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_schedule_rejects_bad_eta(bad):
    with pytest.raises(InvalidParameterError):
        theory.RegularizerSchedule(kind="constant", eta=bad)


def test_schedule_rejects_unknown_kind():
    with pytest.raises(InvalidParameterError):
        theory.RegularizerSchedule(kind="linear", eta=1.0)


def test_lambda_alpha_constant_kind():
    # 1 + e^{-alpha f_min} / eta
    got = theory.lambda_alpha(2.0, CONST, 3.0)
    assert got == pytest.approx(1.0 + math.exp(-6.0), rel=1e-15)


def test_lambda_alpha_matched_floor_is_exactly_two():
    # f_lo = f_min makes the ratio alpha-independent
    for alpha in (0.5, 2.0, 20.0, 300.0):
        assert theory.lambda_alpha(1.0, FLOOR, alpha) == 2.0


def test_lambda_alpha_survives_sharp_alpha():
    # both exponentials underflow separately; the log-domain form cannot
    got = theory.lambda_alpha(3.0, theory.RegularizerSchedule(kind="exp_floor", eta=0.5, f_lo=1.0), 800.0)
    assert got == pytest.approx(1.0 + math.exp(-800.0 * 2.0) / 0.5, rel=1e-15)
    assert got >= 1.0


def test_lambda_alpha_requires_positive_f_min():
    with pytest.raises(InvalidParameterError):
        theory.lambda_alpha(0.0, CONST, 1.0)
    with pytest.raises(InvalidParameterError):
        theory.lambda_alpha(-2.0, CONST, 1.0)


# ---------------------------------------------------------------------------
# contraction thresholds


def test_particle_threshold_hand_values():
    assert theory.particle_threshold(2.0, 0.5, 4.0) == pytest.approx(1.0, rel=1e-15)
    assert theory.particle_threshold(3.0, 1.0, 8.0) == pytest.approx(8.0, rel=1e-14)


def test_meanfield_minus_particle_is_exact():
    for p, sigma, la in [(2.0, 0.3, 2.0), (3.5, 1.2, 7.0), (6.0, 0.05, 1.5)]:
        part = theory.particle_threshold(p, sigma, la)
        assert theory.meanfield_threshold(p, sigma, la) == part + (p - 1.0) * sigma * sigma


def test_meanfield_threshold_matches_product_form():
    for p, sigma, la in [(2.0, 0.3, 2.0), (4.0, 0.7, 3.0)]:
        expanded = (p - 1.0) * (1.0 + la ** (2.0 / p)) * sigma * sigma
        assert theory.meanfield_threshold(p, sigma, la) == pytest.approx(expanded, rel=1e-15)


def test_threshold_rejects_bad_parameters():
    with pytest.raises(InvalidParameterError):
        theory.particle_threshold(1.5, 1.0, 2.0)  # p must be >= 2
    with pytest.raises(InvalidParameterError):
        theory.particle_threshold(2.0, -0.1, 2.0)
    with pytest.raises(InvalidParameterError):
        theory.particle_threshold(2.0, 1.0, 0.9)  # ratio constant is >= 1


def test_concentration_constants_hand_values():
    # Lambda=2, p=2, sigma=0.5: lambda_2 = 0.5
    assert theory.particle_concentration_constant(2.0, 0.5, 2.0) == pytest.approx(
        2.0 * 2.0 ** 0.0 * 0.5 + 2.0 * 0.25, rel=1e-15
    )
    bar_lam2 = theory.meanfield_threshold(2.0, 0.5, 2.0)
    assert theory.coupling_concentration_constant(2.0, 0.5, 2.0) == pytest.approx(
        2.0 * bar_lam2 + 4.0 * 0.25, rel=1e-15
    )


def test_chaos_threshold_frozen_value():
    # Lambda=2, p=2, q=4, sigma=0.5; branch values fixed by quadrature-free
    # arithmetic done independently at high precision
    got = theory.chaos_threshold(2.0, 4.0, 0.5, 2.0)
    assert got == pytest.approx(6.3311124512547619, rel=1e-14)


def test_chaos_threshold_acceptance_anchor():
    got = theory.chaos_threshold(2.0, 3.0, 0.3, 2.0)
    assert got == pytest.approx(1.9169644724526929, rel=1e-14)


@settings(max_examples=150, deadline=None)
@given(
    p=st.floats(2.0, 6.0),
    q=st.floats(2.01, 8.0),
    sigma=st.floats(0.0, 2.0),
    la=st.floats(1.0, 10.0),
)
def test_chaos_threshold_equals_constants_route(p, q, sigma, la):
    # the implementation asserts the two expansions agree internally; here we
    # rebuild the constants route from the public pieces
    got = theory.chaos_threshold(p, q, sigma, la)
    b1 = theory.meanfield_threshold(p * q, sigma, la) + theory.coupling_concentration_constant(p, sigma, la)
    b2 = theory.particle_threshold(p * q, sigma, la) + theory.particle_concentration_constant(p, sigma, la)
    want = max(b1, b2)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_kappa_max_frozen_value():
    assert theory.kappa_max(2.0, 3.0, 1.0, 1.0, 20.0) == pytest.approx(20.0, rel=1e-14)


def test_kappa_max_unmet_reports_deficit():
    with pytest.raises(ThresholdNotMetError) as exc:
        theory.kappa_max(2.0, 3.0, 1.0, 1.0, 4.0)
    assert exc.value.deficit > 0


@settings(max_examples=150, deadline=None)
@given(
    p=st.floats(2.0, 5.0),
    q=st.floats(2.01, 6.0),
    sigma=st.floats(0.01, 1.5),
    la=st.floats(1.0, 8.0),
    margin=st.floats(0.01, 10.0),
)
def test_kappa_max_positive_above_chaos_threshold(p, q, sigma, la, margin):
    lam = theory.chaos_threshold(p, q, sigma, la) + margin
    kappa = theory.kappa_max(p, q, sigma, la, lam)
    assert kappa > 0
    # never better than the straight pq-contraction branch
    b2 = max(
        theory.particle_concentration_constant(p, sigma, la),
        theory.particle_threshold(p * q, sigma, la),
    )
    assert kappa <= p * (lam - b2) + 1e-12


def test_noise_threshold_variants():
    la, sigma, p, d = 2.0, 0.3, 2.0, 3
    base = theory.particle_threshold(p, sigma, la)
    assert theory.noise_threshold("baseline_scalar", d, p, sigma, la) == base
    assert theory.noise_threshold("anisotropic_hadamard", d, p, sigma, la) == base
    assert theory.noise_threshold("common_direction", d, p, sigma, la) == pytest.approx(d * base, rel=1e-15)
    iso = base + (d - 1) * la ** (2.0 / p) * sigma * sigma
    assert theory.noise_threshold("isotropic", d, p, sigma, la) == pytest.approx(iso, rel=1e-15)


def test_noise_threshold_dimension_one_collapses():
    la, sigma, p = 3.0, 0.7, 2.5
    vals = {
        kind: theory.noise_threshold(kind, 1, p, sigma, la)
        for kind in ("baseline_scalar", "anisotropic_hadamard", "common_direction", "isotropic")
    }
    assert len(set(pytest.approx(v, rel=1e-15) == vals["baseline_scalar"] for v in vals.values())) == 1


def test_noise_threshold_unknown_kind():
    with pytest.raises(InvalidParameterError):
        theory.noise_threshold("rotational", 2, 2.0, 0.3, 2.0)


def test_threshold_report_round_trip():
    rep = theory.threshold_report(p=2.0, q=3.0, sigma=0.3, alpha=5.0, f_min=1.0, h=FLOOR, lam=2.9169644724526929)
    assert rep.lambda_alpha == 2.0
    assert rep.kappa_max == pytest.approx(3.8, abs=1e-12)
    assert not rep.violations()
    d = rep.to_dict()
    assert d["satisfied"]["chaos"] is True
    import json

    json.dumps(d)  # must be serializable as-is


def test_threshold_report_below_threshold():
    rep = theory.threshold_report(p=2.0, q=3.0, sigma=0.3, alpha=5.0, f_min=1.0, h=FLOOR, lam=0.1)
    assert rep.kappa_max is None
    assert rep.violations()


# ---------------------------------------------------------------------------
# well-prepared initial data and the energy floor


def _wp_kwargs():
    return dict(
        lam=1.0,
        sigma=0.2,
        alpha=5.0,
        f_min=1.0,
        h=FLOOR,
        L_omega=L_OMEGA_RASTRIGIN_A5,
        c0=C0_RASTRIGIN_D1,
    )


def test_wellprepared_rhs_frozen_cases():
    assert theory.wellprepared_rhs(1.0 / 3.0, **_wp_kwargs()) == pytest.approx(WP_RHS_A, rel=1e-12)
    assert theory.wellprepared_rhs(1e-4 / 12.0, **_wp_kwargs()) == pytest.approx(WP_RHS_B, rel=1e-12)


def test_wellprepared_margin_wide_init_is_not_prepared():
    assert theory.wellprepared_margin(WP_E_OMEGA_A, 1.0 / 3.0, **_wp_kwargs()) is None


def test_wellprepared_margin_narrow_init_frozen_value():
    eps = theory.wellprepared_margin(WP_E_OMEGA_B, 1e-4 / 12.0, **_wp_kwargs())
    assert eps == pytest.approx(WP_EPS_B, rel=1e-12)


def test_wellprepared_margin_zero_variance_is_fully_prepared():
    assert theory.wellprepared_margin(0.5, 0.0, **_wp_kwargs()) == 1.0


def test_wellprepared_requires_contraction():
    kw = _wp_kwargs()
    kw["lam"] = 0.05
    with pytest.raises(ThresholdNotMetError):
        theory.wellprepared_rhs(0.1, **kw)


def test_energy_floor_limits_and_monotonicity():
    kw = _wp_kwargs()
    e_in = WP_E_OMEGA_B
    var = 1e-4 / 12.0
    t = np.linspace(0.0, 80.0, 400)
    floor = theory.weighted_energy_floor(t, e_in, var, **kw)
    assert floor.shape == t.shape
    assert floor[0] == pytest.approx(e_in, rel=1e-15)
    assert np.all(np.diff(floor) <= 1e-15)
    assert floor[-1] == pytest.approx(e_in - WP_RHS_B, rel=1e-9)


def test_energy_floor_scalar_time():
    kw = _wp_kwargs()
    val = theory.weighted_energy_floor(0.0, 0.5, 0.1, **kw)
    assert float(val) == pytest.approx(0.5, rel=1e-15)


# ---------------------------------------------------------------------------
# weight-Lipschitz estimation


def test_lipschitz_estimate_quadratic_frozen():
    f = objectives.shifted_quadratic(1, center=0.0)
    got = theory.lipschitz_estimate(f, 1.0, [(-2.0, 2.0)], n_grid=100001)
    assert got == pytest.approx(L_OMEGA_QUAD_A1, rel=1e-6)
    got2 = theory.lipschitz_estimate(f, 2.0, [(-2.0, 2.0)], n_grid=100001)
    assert got2 == pytest.approx(L_OMEGA_QUAD_A2, rel=1e-6)


def test_lipschitz_estimate_quadratic_2d_matches_radial_peak():
    f = objectives.shifted_quadratic(2, center=0.0)
    got = theory.lipschitz_estimate(f, 1.0, [(-2.0, 2.0), (-2.0, 2.0)], n_grid=801)
    assert got == pytest.approx(L_OMEGA_QUAD_A1, rel=1e-3)


def test_lipschitz_estimate_rastrigin_frozen():
    f = objectives.rastrigin(1)
    got = theory.lipschitz_estimate(f, 5.0, [(-1.0, 1.0)], n_grid=200001)
    assert got == pytest.approx(L_OMEGA_RASTRIGIN_A5, rel=1e-6)


def test_lipschitz_estimate_scalar_box_broadcasts():
    f = objectives.shifted_quadratic(2, center=0.0)
    a = theory.lipschitz_estimate(f, 1.0, (-2.0, 2.0), n_grid=101)
    b = theory.lipschitz_estimate(f, 1.0, [(-2.0, 2.0), (-2.0, 2.0)], n_grid=101)
    assert a == b


def test_lipschitz_estimate_needs_gradient():
    f = objectives.rastrigin(1)
    stripped = objectives.ObjectiveSpec(
        name="nograd", dim=1, eval=f.eval, f_min=f.f_min, f_lower_bound=f.f_lower_bound
    )
    with pytest.raises(UnsupportedObjectiveError):
        theory.lipschitz_estimate(stripped, 1.0, [(-1.0, 1.0)], n_grid=11)
