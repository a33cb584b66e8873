import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impedlab.errors import (
    ArgumentOutOfRange,
    BallTouchesObstacle,
    DegenerateMasses,
    InsufficientData,
    RadiusInsideObstacle,
)
from impedlab.quantlab import (
    alpha_modulus,
    check_lower_bound,
    check_reverse_holder_ap,
    check_surface_doubling,
    check_three_spheres,
    check_volume_doubling,
    fit_stability,
    psi0,
    psi0_radius,
    psi0_residual,
    stability_modulus,
)
from impedlab.scatter import boundary_trace, eval_field, sphere_series

NORTH = (0.0, 0.0, 1.0)
EPS = np.array([1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8])


def ones(p):
    return np.ones(len(p), dtype=complex)


def scaled_total(sol, c):
    return lambda p: c * eval_field(sol, p)


def scaled_trace(sol, c):
    return lambda p: c * boundary_trace(sol, p / np.linalg.norm(p, axis=1, keepdims=True))[0]


# --- moduli ------------------------------------------------------------------
def test_alpha_limit_at_one():
    a, _ = stability_modulus(1.0 - 1e-15)
    assert abs(a - 0.5) < 1e-12


def test_alpha_exact_third():
    a, _ = stability_modulus(math.exp(-(math.e**2 - math.e)))
    assert abs(a - 1.0 / 3.0) < 1e-12


def test_eta_increasing_on_grid():
    t = np.array([1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 0.1, 0.2, 0.3, 0.4, 0.5])
    a, eta = stability_modulus(t, 1.0, 0.7)
    assert np.all(np.diff(eta) > 0)
    assert np.all(np.diff(a) > 0)


@given(st.floats(1e-300, 1.0 - 1e-12, exclude_min=True))
def test_alpha_range(t):
    a = float(alpha_modulus(t))
    assert 0.0 < a <= 0.5


@given(st.floats(1e-200, 0.99), st.floats(1e-6, 0.009))
def test_alpha_monotone(t, dt):
    if t + dt < 1.0:
        assert alpha_modulus(t) <= alpha_modulus(t + dt)


@pytest.mark.parametrize("t, C, th", [(0.0, 1, 1), (1.0, 1, 1), (1.5, 1, 1), (0.5, 0, 1),
                                      (0.5, 1, -1)])
def test_modulus_rejects(t, C, th):
    with pytest.raises(ArgumentOutOfRange):
        stability_modulus(t, C, th)


# --- stability fit -----------------------------------------------------------
def synthetic(C, theta):
    return C * (alpha_modulus(EPS) * np.log(1.0 / EPS)) ** (-theta)


@pytest.mark.parametrize("C, theta", [(1.0, 0.5), (2.0, 1.0)])
def test_fit_recovers_synthetic(C, theta):
    fit = fit_stability(zip(EPS, synthetic(C, theta)))
    assert abs(fit.C - C) < 1e-6
    assert abs(fit.theta - theta) < 1e-6
    assert fit.residual < 1e-10
    assert not fit.non_decaying


def test_fit_flags_constant_data():
    assert fit_stability(zip(EPS, np.full(len(EPS), 0.3))).non_decaying


def test_fit_needs_four_records():
    with pytest.raises(InsufficientData):
        fit_stability([(0.1, 1.0), (0.01, 0.5), (0.001, 0.3)])


def test_fit_needs_distinct_levels():
    with pytest.raises(InsufficientData):
        fit_stability([(0.1, 1.0), (0.1, 0.5), (0.01, 0.3), (0.001, 0.2)])


def test_fit_power_law_data_prefers_power_law():
    err = 3.0 * EPS**0.5
    fit = fit_stability(zip(EPS, err))
    assert fit.power_exponent == pytest.approx(0.5, abs=1e-12)
    assert fit.power_gain > 2.0


def test_fit_order_independent():
    a = fit_stability(zip(EPS, synthetic(1.5, 0.8)))
    b = fit_stability(zip(EPS[::-1], synthetic(1.5, 0.8)[::-1]))
    assert a.theta == pytest.approx(b.theta, abs=1e-14)


# --- lower bound -------------------------------------------------------------
def test_lower_bound_incident_only(wave):
    rep = check_lower_bound(wave.incident, [2.0, 4.0, 8.0])
    assert np.allclose(rep.min_abs, 1.0, atol=1e-14)
    assert rep.R0_hat == 2.0


def test_lower_bound_oracle(oracle):
    rep = check_lower_bound(oracle, [2, 4, 8, 16, 32, 64, 128])
    assert math.isfinite(rep.R0_hat)
    assert np.all(rep.min_abs >= 0)
    assert np.all(np.diff(rep.min_abs) > 0)
    assert rep.min_abs[-1] > 0.99


def test_lower_bound_reports_failure():
    rep = check_lower_bound(lambda p: np.full(len(p), 0.1), [1.0, 2.0])
    assert rep.R0_hat == math.inf


def test_lower_bound_inside_obstacle(oracle):
    with pytest.raises(RadiusInsideObstacle):
        check_lower_bound(oracle, [1.5, 4.0])


# --- doubling ----------------------------------------------------------------
def test_volume_doubling_constant_field(unit_sphere):
    rep = check_volume_doubling(ones, [NORTH], [0.01], [1.5, 2.0, 3.0], surface=unit_sphere)
    assert rep.K == pytest.approx(3.0, abs=0.1)
    assert np.all(rep.ratios >= 1.0)


def test_volume_doubling_oracle(oracle):
    rep = check_volume_doubling(oracle, [NORTH], [0.05, 0.1], [2.0])
    assert np.all(rep.ratios >= 1.0)
    assert np.all(np.isfinite(rep.ratios))


def test_volume_doubling_scale_invariant(oracle, unit_sphere):
    a = check_volume_doubling(oracle, [NORTH], [0.05], [1.5, 2.0], n_volume=2048)
    b = check_volume_doubling(scaled_total(oracle, 3.7j), [NORTH], [0.05], [1.5, 2.0],
                              surface=unit_sphere, n_volume=2048)
    assert np.allclose(a.ratios, b.ratios, rtol=1e-10, atol=0)
    assert a.K == pytest.approx(b.K, rel=1e-10)


def test_volume_doubling_rejects_beta(unit_sphere):
    with pytest.raises(ArgumentOutOfRange):
        check_volume_doubling(ones, [NORTH], [0.05], [1.0], surface=unit_sphere)


def test_surface_doubling_constant_field(unit_sphere):
    rep = check_surface_doubling(ones, [NORTH], [0.01], surface=unit_sphere)
    assert rep.ratios[0] == pytest.approx(4.0, rel=1e-4)


def test_surface_doubling_oracle(oracle):
    rep = check_surface_doubling(oracle, [NORTH], [0.05, 0.1, 0.2])
    assert np.all(rep.ratios >= 1.0)
    assert rep.C == max(rep.ratios) < 10.0


def test_surface_doubling_scale_invariant(oracle, unit_sphere):
    a = check_surface_doubling(oracle, [NORTH, (1.0, 0.0, 0.0)], [0.1])
    b = check_surface_doubling(scaled_trace(oracle, 3.7j), [NORTH, (1.0, 0.0, 0.0)], [0.1],
                               surface=unit_sphere)
    assert np.allclose(a.ratios, b.ratios, rtol=1e-10, atol=0)


# --- three spheres -----------------------------------------------------------
def test_three_spheres_constant_field():
    rep = check_three_spheres(lambda p: np.full(len(p), 2.0 - 1.0j), [(0.0, 0.0, 5.0)], 0.3,
                              2.0, 4.0)
    assert abs(rep.defect[0]) < 1e-12
    assert rep.tau_hat[0] == pytest.approx(rep.tau_geometric, abs=1e-12)


def test_three_spheres_oracle_difference(oracle, wave, unit_sphere):
    other = sphere_series(wave, 1.0, 1.1)

    def U(p):
        return eval_field(oracle, p) - eval_field(other, p)

    rep = check_three_spheres(U, [(0.0, 0.0, 2.0)], 0.2, 2.0, 4.0, surface=unit_sphere)
    assert 0.0 < rep.tau_hat[0] < 1.0
    scaled = check_three_spheres(lambda p: 3.7j * U(p), [(0.0, 0.0, 2.0)], 0.2, 2.0, 4.0,
                                 surface=unit_sphere)
    assert scaled.tau_hat[0] == pytest.approx(rep.tau_hat[0], rel=1e-10)
    assert scaled.defect[0] == pytest.approx(rep.defect[0], rel=1e-8, abs=1e-12)


def test_three_spheres_preconditions(unit_sphere):
    with pytest.raises(ArgumentOutOfRange):
        check_three_spheres(ones, [(0.0, 0.0, 3.0)], 0.1, 2.0, 2.0)
    with pytest.raises(BallTouchesObstacle):
        check_three_spheres(ones, [(0.0, 0.0, 1.5)], 0.2, 2.0, 4.0, surface=unit_sphere)
    with pytest.raises(DegenerateMasses):
        check_three_spheres(lambda p: np.zeros(len(p)), [(0.0, 0.0, 3.0)], 0.1, 2.0, 3.0)


# --- A_p ---------------------------------------------------------------------
@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_ap_constant_field(unit_sphere, p):
    rep = check_reverse_holder_ap(lambda x: np.full(len(x), 0.7j), [NORTH], [0.1], p=p,
                                  surface=unit_sphere)
    e = rep.entries[0]
    assert e[5] == pytest.approx(1.0, abs=1e-12)
    assert e[6] == pytest.approx(1.0, abs=1e-12)


def test_ap_oracle(oracle, unit_sphere):
    rep = check_reverse_holder_ap(oracle, [NORTH], [0.1], p=(1.5, 2.0, 3.0))
    assert np.all(np.isfinite(rep.products))
    assert rep.smallest_p == 1.5
    scaled = check_reverse_holder_ap(scaled_trace(oracle, 3.7j), [NORTH], [0.1],
                                     p=(1.5, 2.0, 3.0), surface=unit_sphere)
    assert np.allclose(scaled.products, rep.products, rtol=1e-10, atol=0)


def test_ap_masks_zeros(unit_sphere):
    def f(p):
        v = np.ones(len(p), complex)
        v[::3] = 0.0
        return v

    rep = check_reverse_holder_ap(f, [NORTH], [0.1], p=2.0, surface=unit_sphere)
    assert 0.3 < rep.entries[0][7] < 0.4
    assert np.isfinite(rep.entries[0][5])


def test_ap_rejects_p(unit_sphere):
    with pytest.raises(ArgumentOutOfRange):
        check_reverse_holder_ap(ones, [NORTH], [0.1], p=1.0, surface=unit_sphere)


# --- explicit half-space solutions -------------------------------------------
@pytest.mark.parametrize("k, lam", [(1.0, 2.0), (2.0, 1.0), (1.0, 1.0), (0.3, 5.0)])
def test_psi0_residuals(k, lam):
    r = psi0_residual(k, lam, n_points=1000)
    assert r.pde_residual < 1e-12 and r.bc_residual < 1e-12
    assert r.pde_residual_fd < 1e-6 and r.bc_residual_fd < 1e-6


def test_psi0_equality_case_modulus():
    pts = np.random.default_rng(1).uniform(-0.5, 0.0, size=(200, 3))
    assert np.allclose(np.abs(psi0(1.0, 1.0, pts)), 8.0, atol=1e-14)


@pytest.mark.parametrize("k, lam", [(1.0, 2.0), (2.0, 1.0), (1.0, 1.0)])
def test_psi0_lower_bound_on_half_ball(k, lam):
    R = psi0_radius(k, lam)
    ax = np.linspace(-R, R, 41)
    y1, y2, y3 = np.meshgrid(ax, ax, np.linspace(-R, 0.0, 21), indexing="ij")
    pts = np.column_stack([y1.ravel(), y2.ravel(), y3.ravel()])
    pts = pts[np.linalg.norm(pts, axis=1) <= R]
    assert np.min(np.abs(psi0(k, lam, pts))) >= 2.0


def test_psi0_case_mismatch():
    with pytest.raises(ArgumentOutOfRange):
        psi0_residual(1.0, 2.0, case="k>lambda")


def test_psi0_rejects_bad_input():
    with pytest.raises(ArgumentOutOfRange):
        psi0_residual(1.0, 0.0)
    with pytest.raises(ArgumentOutOfRange):
        psi0_residual(1.0, 2.0, points=np.array([[0.0, 0.0, 0.1]]))
