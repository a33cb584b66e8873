import math

import numpy as np
import pytest
import scipy.special as ss
from hypothesis import given
from hypothesis import strategies as st

from impedlab.errors import (
    ArgumentOutOfRange,
    GridMismatch,
    PointInsideObstacle,
    ResolutionTooCoarse,
    SingularSystem,
    TruncationInsufficient,
)
from impedlab.geometry import CoatingPartition, build_impedance, build_quadrature, build_surface
from impedlab.scatter import (
    FarFieldPattern,
    WaveConfig,
    boundary_residuals,
    boundary_trace,
    eval_far_field,
    eval_field,
    l2_sphere_norm,
    relative_far_field_error,
    solve_direct_bie,
    sphere_series,
)
from impedlab.specfun import SphereGrid, sph_harm, unit_vectors

LAM1 = {"model": "constant", "value": 1.0}


def random_sphere_dirs(n, seed):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture(scope="module")
def grid():
    return SphereGrid.gauss(24, 48)


@pytest.fixture(scope="module")
def bie_full(unit_sphere, wave):
    mesh = build_quadrature(unit_sphere, CoatingPartition(), (16, 32))
    return solve_direct_bie(mesh, wave, build_impedance(LAM1))


# --- wave --------------------------------------------------------------------
def test_wave_normalises_direction():
    w = WaveConfig(2.0, (0.0, 3.0, 4.0))
    assert np.allclose(w.omega, [0.0, 0.6, 0.8])


@pytest.mark.parametrize("k, d", [(0.0, (0, 0, 1)), (-1.0, (0, 0, 1)), (1.0, (0, 0, 0))])
def test_wave_rejects(k, d):
    with pytest.raises(ArgumentOutOfRange):
        WaveConfig(k, d)


# --- series oracle -----------------------------------------------------------
def test_series_coefficients_match_reference(oracle, reference):
    ref = reference["sphere_k1_a1_lam1"]
    c = np.array(ref["c_re"]) + 1j * np.array(ref["c_im"])
    n = min(len(c), len(oracle.series_coeffs))
    assert np.max(np.abs(oracle.series_coeffs[:n] - c[:n])) < 1e-14


def test_series_sound_hard_limit(wave):
    sol = sphere_series(wave, 1.0, 0.0)
    n = np.arange(len(sol.series_coeffs))
    jp = ss.spherical_jn(n, 1.0, derivative=True)
    hp = jp + 1j * ss.spherical_yn(n, 1.0, derivative=True)
    assert np.allclose(sol.series_coeffs, -jp / hp, rtol=1e-12, atol=1e-300)


def test_series_boundary_residual(oracle):
    dirs = random_sphere_dirs(1000, 11)
    u, dnu = boundary_trace(oracle, dirs)
    assert np.max(np.abs(dnu + 1j * u)) < 1e-10


@pytest.mark.parametrize("k", [0.5, 1.0, 3.0])
@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_series_passivity(k, a, lam):
    c = sphere_series(WaveConfig(k, (0, 0, 1)), a, lam).series_coeffs
    assert np.all(np.abs(1.0 + 2.0 * c) <= 1.0 + 1e-12)


def test_series_truncation_failure():
    with pytest.raises(TruncationInsufficient):
        sphere_series(WaveConfig(60.0, (0, 0, 1)), 1.0, 1.0)


def test_far_field_forward_value(oracle, reference):
    fwd = eval_far_field(oracle, np.array([[0.0, 0.0, 1.0]]))[0]
    back = eval_far_field(oracle, np.array([[0.0, 0.0, -1.0]]))[0]
    ref = reference["sphere_k1_a1_lam1"]
    assert abs(fwd - complex(*ref["far_forward"])) < 1e-13
    assert abs(back - complex(*ref["far_backward"])) < 1e-13


def test_far_field_is_large_radius_limit(oracle):
    dirs = random_sphere_dirs(20, 4)
    r = 1e4
    approx = r * np.exp(-1j * r) * eval_field(oracle, r * dirs, want="scattered")
    assert np.max(np.abs(approx - eval_far_field(oracle, dirs))) < 1e-4


def test_scattered_field_decay(oracle):
    r = 1e6
    us = eval_field(oracle, r * random_sphere_dirs(10, 2), want="scattered")
    assert np.all(np.abs(us) * r < 2.0)


def test_total_is_scattered_plus_incident(oracle, wave):
    pts = 2.5 * random_sphere_dirs(30, 3)
    tot = eval_field(oracle, pts)
    sc = eval_field(oracle, pts, want="scattered")
    assert np.array_equal(tot, sc + wave.incident(pts))


def test_optical_theorem_absorbing(oracle, grid):
    ff = eval_far_field(oracle, grid)
    fwd = eval_far_field(oracle, np.array([[0.0, 0.0, 1.0]]))[0]
    # extinction strictly exceeds scattering for an absorbing obstacle
    assert 4.0 * math.pi / oracle.k * fwd.imag > l2_sphere_norm(ff) ** 2 + 1e-3


def test_eval_inside_rejected(oracle):
    with pytest.raises(PointInsideObstacle):
        eval_field(oracle, np.array([[0.0, 0.0, 0.5]]))


def test_series_reciprocity(oracle):
    x, w = random_sphere_dirs(2, 8)
    a = sphere_series(WaveConfig(1.0, w), 1.0, 1.0)
    b = sphere_series(WaveConfig(1.0, -x), 1.0, 1.0)
    assert abs(eval_far_field(a, x[None])[0] - eval_far_field(b, -w[None])[0]) < 1e-14


# --- boundary integral solver ------------------------------------------------
def test_bie_matches_series(bie_full, oracle, grid):
    assert relative_far_field_error(bie_full, oracle, grid) < 1e-3


def test_bie_near_field_matches_series(bie_full, oracle):
    pts = 3.0 * random_sphere_dirs(100, 5)
    assert np.max(np.abs(eval_field(bie_full, pts) - eval_field(oracle, pts))) < 1e-3


def test_bie_traces_match_series(unit_sphere, wave, bie_full):
    ref = sphere_series(wave, 1.0, 1.0, mesh=bie_full.mesh)
    assert np.max(np.abs(bie_full.u - ref.u)) < 1e-6
    assert np.max(np.abs(bie_full.dnu - ref.dnu)) < 1e-6


def test_large_impedance_approaches_sound_soft(unit_sphere, wave, grid):
    mesh = build_quadrature(unit_sphere, CoatingPartition(), (16, 32))
    sol = solve_direct_bie(mesh, wave, build_impedance({"model": "constant", "value": 1e6}))
    soft = sphere_series(wave, 1.0, np.inf)
    assert relative_far_field_error(sol, soft, grid) < 1e-2


def test_bie_reciprocity_on_nonspherical_obstacle():
    s = build_surface({"kind": "harmonic", "base": 1.0, "coeffs": [[2, 0, 0.2], [3, 1, 0.1]]})
    mesh = build_quadrature(s, CoatingPartition(), (16, 32))
    imp = build_impedance(LAM1)
    x, w = unit_vectors(1.0, 0.3), unit_vectors(2.2, 4.0)
    a = solve_direct_bie(mesh, WaveConfig(1.0, w), imp)
    b = solve_direct_bie(mesh, WaveConfig(1.0, -x), imp)
    fa = eval_far_field(a, x[None])[0]
    fb = eval_far_field(b, -w[None])[0]
    assert abs(fa - fb) < 1e-6 * abs(fa)


def test_polar_cap_residuals(unit_sphere, wave):
    part = CoatingPartition("polar_cap", math.pi / 2)
    mesh = build_quadrature(unit_sphere, part, (40, 80), grading=2.0)
    imp = build_impedance(LAM1)
    sol = solve_direct_bie(mesh, wave, imp)
    res = boundary_residuals(sol, imp, n_points=256, interface_band=0.2)
    assert res["impedance_residual_max"] < 1e-2
    assert res["dirichlet_residual_max"] < 1e-2
    assert np.max(np.abs(sol.u[mesh.on_dirichlet])) < 1e-12  # collocated Dirichlet rows


def test_mixed_residuals_shrink_under_refinement(unit_sphere, wave):
    part = CoatingPartition("polar_cap", math.pi / 2)
    imp = build_impedance(LAM1)
    worst = []
    for res in ((16, 32), (24, 48)):
        mesh = build_quadrature(unit_sphere, part, res, grading=2.0)
        r = boundary_residuals(solve_direct_bie(mesh, wave, imp), imp, n_points=128)
        worst.append(max(r["impedance_residual_max"], r["dirichlet_residual_max"]))
    assert worst[1] < worst[0]


def test_interior_resonance_detected(unit_sphere):
    # j_0(pi) = 0: the single-layer operator is singular on the unit sphere
    mesh = build_quadrature(unit_sphere, CoatingPartition(), (16, 32))
    with pytest.raises(SingularSystem) as info:
        solve_direct_bie(mesh, WaveConfig(math.pi, (0, 0, 1)), build_impedance(LAM1),
                         method="galerkin")
    assert info.value.condition > 1e12


def test_residual_threshold_enforced(unit_sphere, wave):
    mesh = build_quadrature(unit_sphere, CoatingPartition("polar_cap", 1.0), (8, 16))
    with pytest.raises(ResolutionTooCoarse):
        solve_direct_bie(mesh, wave, build_impedance(LAM1), residual_threshold=1e-8)


def test_unknown_method(unit_sphere, wave):
    mesh = build_quadrature(unit_sphere, CoatingPartition(), (8, 16))
    with pytest.raises(ArgumentOutOfRange):
        solve_direct_bie(mesh, wave, build_impedance(LAM1), method="fmm")


# --- far-field patterns ------------------------------------------------------
def test_norm_of_constant(grid):
    p = FarFieldPattern(grid, np.full(grid.size, 2.0 - 1.0j), 1.0)
    assert l2_sphere_norm(p) == pytest.approx(math.sqrt(5.0) * math.sqrt(4 * math.pi), rel=1e-13)


def test_norm_of_y31(grid):
    p = FarFieldPattern(grid, sph_harm(3, 1, grid.theta, grid.phi), 1.0)
    assert abs(l2_sphere_norm(p) - 1.0) < 1e-10


def test_norm_of_difference(oracle, grid):
    p = eval_far_field(oracle, grid)
    assert l2_sphere_norm(p, p) == 0.0


def test_grid_mismatch(oracle, grid):
    a = eval_far_field(oracle, grid)
    b = eval_far_field(oracle, SphereGrid.gauss(16, 32))
    with pytest.raises(GridMismatch):
        a - b


def test_pattern_sh_roundtrip(oracle, grid):
    p = eval_far_field(oracle, grid)
    back = grid.synthesis(p.sh_coeffs)
    assert np.max(np.abs(back - p.values)) < 1e-12


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_pattern_linear_ops(a, b):
    g = SphereGrid.gauss(8, 16)
    v = np.exp(1j * g.theta)
    p = FarFieldPattern(g, v, 1.0)
    q = p.scaled(a) + p.scaled(b)
    assert np.allclose(q.values, (a + b) * v, atol=1e-12)
