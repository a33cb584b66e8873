"""Direct scattering by a partially coated obstacle.

Boundary value problem for the total field ``u = u^s + exp(ik x.omega)``::

    Delta u + k^2 u = 0        outside D
    u = 0                      on Gamma_D
    du/dnu + i lambda u = 0    on Gamma_I

with the scattered part radiating. Two solvers are provided:

* :func:`solve_direct_bie` -- single-layer ansatz ``u^s = S mu`` discretised
  with a fully discrete Galerkin scheme. The density is expanded in
  spherical harmonics on the parameter sphere; weakly singular integrals
  are computed in a rotated polar frame centred on the target point, where
  ``sin(theta') / |x - y|`` is smooth and a Gauss rule in ``theta'``
  converges spectrally.
* :func:`sphere_series` -- exact separation-of-variables solution for a
  fully coated sphere with constant impedance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .errors import (
    ArgumentOutOfRange,
    GridMismatch,
    PointInsideObstacle,
    ResolutionTooCoarse,
    SingularSystem,
    TruncationInsufficient,
)
from .specfun import (
    N_MAX_DEFAULT,
    SphereGrid,
    angles_of,
    legendre_all,
    n_coeffs,
    sh_orders,
    sph_harm_table,
    spherical_bessel_all,
    unit_vectors,
)

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
EVAL_CHUNK = 2048


@dataclass(frozen=True)
class WaveConfig:
    """Wavenumber ``k > 0`` and unit incident direction ``omega``."""

    k: float
    direction: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.k > 0.0:
            raise ArgumentOutOfRange("wavenumber must be positive")
        d = np.asarray(self.direction, dtype=float)
        nrm = np.linalg.norm(d)
        if nrm == 0.0:
            raise ArgumentOutOfRange("incident direction must be non-zero")
        object.__setattr__(self, "direction", tuple(float(v) for v in d / nrm))

    @property
    def omega(self):
        return np.asarray(self.direction)

    def incident(self, points):
        return np.exp(1j * self.k * (np.asarray(points) @ self.omega))

    def incident_normal_derivative(self, points, normals):
        return 1j * self.k * (np.asarray(normals) @ self.omega) * self.incident(points)


@dataclass(frozen=True, eq=False)
class FarFieldPattern:
    """Far-field samples on a quadrature grid of the unit sphere."""

    grid: SphereGrid
    values: np.ndarray
    k: float
    noise_level: float = 0.0

    @cached_property
    def sh_coeffs(self):
        return self.grid.analysis(self.values)

    def __sub__(self, other):
        if not self.grid.same_as(other.grid):
            raise GridMismatch("far-field patterns live on different grids")
        return FarFieldPattern(self.grid, self.values - other.values, self.k)

    def __add__(self, other):
        if not self.grid.same_as(other.grid):
            raise GridMismatch("far-field patterns live on different grids")
        return FarFieldPattern(self.grid, self.values + other.values, self.k)

    def scaled(self, factor):
        return FarFieldPattern(self.grid, factor * self.values, self.k, self.noise_level)


@dataclass(frozen=True, eq=False)
class ScatterSolution:
    """Boundary traces plus whatever is needed to evaluate the field off the boundary.

    ``u`` and ``dnu`` are total-field traces at the mesh nodes (``None``
    for a series solution built without a mesh). ``kind`` is ``"bie"`` or
    ``"series"``.
    """

    kind: str
    wave: WaveConfig
    surface: object
    mesh: object = None
    u: np.ndarray = None
    dnu: np.ndarray = None
    impedance: np.ndarray = None
    density: np.ndarray = None
    density_coeffs: np.ndarray = None
    series_coeffs: np.ndarray = None
    radius: float = None
    lam: float = None
    condition: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def k(self):
        return self.wave.k


# ---------------------------------------------------------------------------
# Singular integrals
# ---------------------------------------------------------------------------
def _rotated_rule(n_theta, n_phi):
    """Gauss-Legendre in ``theta'`` on ``[0, pi]`` (with ``sin theta'``) times trapezoid."""
    t, w = np.polynomial.legendre.leggauss(n_theta)
    th = 0.5 * np.pi * (t + 1.0)
    wt = 0.5 * np.pi * w * np.sin(th)
    ph = 2.0 * np.pi * np.arange(n_phi) / n_phi
    TH, PH = np.meshgrid(th, ph, indexing="ij")
    W = np.repeat(wt, n_phi) * (2.0 * np.pi / n_phi)
    return unit_vectors(TH.ravel(), PH.ravel()), W


def layer_operators(surface, L, target_dirs, rule=(32, 64), k=1.0, want_double=True):
    """Single-layer and normal-derivative rows acting on harmonic coefficients.

    For boundary targets ``x = r(p) p`` returns ``S`` and ``K'`` with shape
    ``(len(p), (L+1)^2)`` so that ``(S @ a)[i] = int phi(x_i, y) mu(y) ds(y)``
    and ``(K' @ a)[i] = int d phi(x_i, y)/d nu(x_i) mu(y) ds(y)`` for
    ``mu = sum a_nm Y_n^m``.
    """
    target_dirs = np.atleast_2d(np.asarray(target_dirs, dtype=float))
    tth, tph = angles_of(target_dirs)
    xs, nus, _ = surface.frame_on(tth, tph)
    base_q, W = _rotated_rule(*rule)
    m_of = sh_orders(L)
    S = np.empty((len(tth), n_coeffs(L)), dtype=complex)
    K = np.empty_like(S) if want_double else None

    keys = np.round(tth, 14)
    for th_val in np.unique(keys):
        idx = np.nonzero(keys == th_val)[0]
        c, s = np.cos(th_val), np.sin(th_val)
        ry = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        b = base_q @ ry.T
        bth, bph = angles_of(b)
        Y = sph_harm_table(L, bth, bph)
        qth = np.broadcast_to(bth, (len(idx), len(bth)))
        qph = bph[None, :] + tph[idx, None]
        ys, _, jac = surface.frame_on(qth, qph)
        d = xs[idx, None, :] - ys
        r = np.sqrt(np.sum(d * d, axis=-1))
        g = np.exp(1j * k * r) / (4.0 * np.pi * r) * (jac * W)
        phase = np.exp(1j * np.outer(tph[idx], m_of))
        S[idx] = (g @ Y) * phase
        if want_double:
            cos_x = np.sum(d * nus[idx, None, :], axis=-1) / r
            K[idx] = ((g * (1j * k - 1.0 / r) * cos_x) @ Y) * phase
    return S, K


# ---------------------------------------------------------------------------
# Nodal Nystrom operators with a floating partition of unity
# ---------------------------------------------------------------------------
def _pou(u):
    """Smooth cutoff equal to 1 at 0 and 0 at 1, flat to all orders at both ends."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    out = np.zeros_like(u)
    out[u == 0.0] = 1.0
    mid = (u > 0.0) & (u < 1.0)
    um = u[mid]
    out[mid] = np.exp(2.0 * np.exp(-1.0 / um) / (um - 1.0))
    return out


def _trig_weights(phi, n):
    """Trigonometric interpolation weights on ``n`` equispaced nodes (``n`` even)."""
    x = np.asarray(phi)[..., None] - 2.0 * np.pi * np.arange(n) / n
    x = np.mod(x + np.pi, 2.0 * np.pi) - np.pi
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.sin(0.5 * n * x) / (n * np.tan(0.5 * x))
    if n % 2:
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.sin(0.5 * n * x) / (n * np.sin(0.5 * x))
    return np.where(np.abs(x) < 1e-14, 1.0, w)


def _theta_weights(mesh, theta, order):
    """Local Lagrange weights in ``theta`` using nodes on the same side of the interface.

    Returns a dense ``(len(theta), n_theta_nodes)`` matrix with ``order``
    non-zeros per row.
    """
    nodes = mesh.grid.theta_nodes
    nt = len(nodes)
    cap = mesh.partition.cap_angle if mesh.partition.has_dirichlet else -1.0
    split = int(np.searchsorted(nodes, cap)) if cap > 0 else 0
    W = np.zeros((len(theta), nt))
    for side_lo, side_hi, sel in ((0, split, theta < cap), (split, nt, theta >= cap)):
        if side_hi <= side_lo or not np.any(sel):
            continue
        p = min(order, side_hi - side_lo)
        th = theta[sel]
        pos = np.searchsorted(nodes[side_lo:side_hi], th) + side_lo
        start = np.clip(pos - p // 2, side_lo, side_hi - p)
        idx = start[:, None] + np.arange(p)
        xs = nodes[idx]
        lw = np.ones_like(xs)
        for a in range(p):
            for b in range(p):
                if a != b:
                    lw[:, a] *= (th - xs[:, b]) / (xs[:, a] - xs[:, b])
        rows = np.nonzero(sel)[0]
        W[rows[:, None], idx] = lw
    return W


def interpolation_matrix(mesh, directions, order=6):
    """Rows mapping nodal values to values at arbitrary directions (local in theta, trigonometric in phi)."""
    th, ph = angles_of(np.atleast_2d(directions))
    Wt = _theta_weights(mesh, th, order)
    Wp = _trig_weights(ph, mesh.grid.n_phi)
    return (Wt[:, :, None] * Wp[:, None, :]).reshape(len(th), -1)


def nystrom_operators(mesh, target_dirs, k, cutoff, near_rule=(16, 32), order=6, want_double=True):
    """Single-layer and ``K'`` rows acting on nodal density values.

    The kernel is split with a smooth cutoff in the angle ``t`` between
    parameter directions: the part ``chi(t / cutoff)`` near the target is
    integrated with a rotated polar rule and interpolated density, the
    remainder with the mesh quadrature.
    """
    target_dirs = np.atleast_2d(np.asarray(target_dirs, dtype=float))
    surface = mesh.surface
    tth, tph = angles_of(target_dirs)
    xs, nus, _ = surface.frame_on(tth, tph)
    M, N = len(tth), mesh.size
    nt, nphi = mesh.grid.shape

    # far part on mesh nodes
    cos_t = np.clip(target_dirs @ mesh.grid.directions.T, -1.0, 1.0)
    far = 1.0 - _pou(np.arccos(cos_t) / cutoff)
    S = np.zeros((M, N), dtype=complex)
    K = np.zeros((M, N), dtype=complex) if want_double else None
    y, w = mesh.nodes, mesh.weights
    for s in range(0, M, 512):
        sl = slice(s, s + 512)
        d = xs[sl, None, :] - y[None, :, :]
        r = np.sqrt(np.sum(d * d, axis=-1))
        live = far[sl] > 0.0
        r_safe = np.where(live, r, 1.0)
        g = np.where(live, np.exp(1j * k * r_safe) / (4.0 * np.pi * r_safe) * far[sl] * w, 0.0)
        S[sl] = g
        if want_double:
            cos_x = np.sum(d * nus[sl, None, :], axis=-1) / r_safe
            K[sl] = g * (1j * k - 1.0 / r_safe) * cos_x

    # near part on a rotated polar cap
    t, wt = np.polynomial.legendre.leggauss(near_rule[0])
    a = 0.5 * cutoff * (t + 1.0)
    wa = 0.5 * cutoff * wt * np.sin(a) * _pou(a / cutoff)
    b = 2.0 * np.pi * np.arange(near_rule[1]) / near_rule[1]
    A, B = np.meshgrid(a, b, indexing="ij")
    local = unit_vectors(A.ravel(), B.ravel())
    wq = np.repeat(wa, near_rule[1]) * (2.0 * np.pi / near_rule[1])
    for i in range(M):
        c, s_ = np.cos(tth[i]), np.sin(tth[i])
        cp, sp = np.cos(tph[i]), np.sin(tph[i])
        R = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]]) @ np.array(
            [[c, 0.0, s_], [0.0, 1.0, 0.0], [-s_, 0.0, c]])
        q = local @ R.T
        qth, qph = angles_of(q)
        yq, _, jac = surface.frame_on(qth, qph)
        d = xs[i] - yq
        r = np.sqrt(np.sum(d * d, axis=-1))
        g = np.exp(1j * k * r) / (4.0 * np.pi * r) * jac * wq
        Wt = _theta_weights(mesh, qth, order)
        Wp = _trig_weights(qph, nphi)
        S[i] += ((Wt * g[:, None]).T @ Wp).ravel()
        if want_double:
            gk = g * (1j * k - 1.0 / r) * (d @ nus[i]) / r
            K[i] += ((Wt * gk[:, None]).T @ Wp).ravel()
    return S, K


def _default_cutoff(mesh):
    return 4.0 * 2.0 * np.pi / mesh.grid.n_phi


# ---------------------------------------------------------------------------
# BIE solver
# ---------------------------------------------------------------------------
def _impedance_at(impedance, mesh_or_dirs, surface=None):
    if callable(getattr(impedance, "values_at", None)):
        return impedance.values_at(mesh_or_dirs)
    return np.broadcast_to(np.asarray(impedance, dtype=float), (len(mesh_or_dirs),)).copy()


def _rule_for(mesh, rule):
    if rule is not None:
        return rule
    n_theta, n_phi = mesh.grid.shape
    return (n_theta + 8, n_phi + 16)


def solve_direct_bie(mesh, wave, impedance, method="auto", rule=None, cutoff=None,
                     check_points=64, residual_threshold=None, interface_band=0.2):
    """Solve the mixed problem on ``mesh`` with the single-layer ansatz ``u^s = S mu``.

    Equations imposed at the mesh nodes::

        S mu                           = -u_inc                        on Gamma_D
        (-1/2 + K') mu + i lambda S mu = -d_nu u_inc - i lambda u_inc   on Gamma_I

    ``method="galerkin"`` expands ``mu`` in spherical harmonics of degree
    ``<= L`` and projects the nodal equations onto them (spectral for
    smooth data). ``method="nystrom"`` keeps nodal unknowns on the graded
    mesh, which tolerates the edge singularity at the coating interface.
    ``"auto"`` picks Galerkin for fully coated obstacles, Nystrom otherwise.

    Parameters
    ----------
    impedance : ImpedanceField or float
        Anything with ``values_at(directions)``, or a constant.
    rule : (int, int), optional
        Galerkin: size of the rotated singular rule (mesh size plus a margin by default).
    cutoff : float, optional
        Nystrom: angular radius of the near-field cap.
    check_points : int
        Number of off-node boundary points where the boundary conditions are re-evaluated.
    residual_threshold : float, optional
        Raise :class:`ResolutionTooCoarse` when the checkpoint impedance
        residual away from the interface band exceeds it.
    """
    if method == "auto":
        method = "nystrom" if mesh.partition.has_dirichlet else "galerkin"
    if method not in ("galerkin", "nystrom"):
        raise ArgumentOutOfRange(f"unknown BIE method {method!r}")
    surface = mesh.surface
    grid = mesh.grid
    dirs = grid.directions
    lam = _impedance_at(impedance, dirs)
    x, nu = mesh.nodes, mesh.normals
    u_inc = wave.incident(x)
    dn_inc = wave.incident_normal_derivative(x, nu)
    dir_rows = mesh.on_dirichlet
    rhs = -dn_inc - 1j * lam * u_inc
    rhs[dir_rows] = -u_inc[dir_rows]

    if method == "galerkin":
        L = grid.degree
        rule = _rule_for(mesh, rule)
        S, K = layer_operators(surface, L, dirs, rule=rule, k=wave.k)
        Id = grid.harmonics(L)
        T = grid.projector(L)
        diag = {"method": method, "rule": tuple(rule), "degree": L}
    else:
        cutoff = _default_cutoff(mesh) if cutoff is None else cutoff
        S, K = nystrom_operators(mesh, dirs, wave.k, cutoff)
        Id = np.eye(mesh.size)
        T = None
        diag = {"method": method, "cutoff": float(cutoff)}
    A = -0.5 * Id + K + 1j * lam[:, None] * S
    A[dir_rows] = S[dir_rows]
    G, g = (T @ A, T @ rhs) if T is not None else (A, rhs)

    lu, piv = sla.lu_factor(G)
    rcond, _ = sla.lapack.zgecon(lu, np.linalg.norm(G, 1), norm="1")
    condition = 1.0 / rcond if rcond > 0 else np.inf
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularSystem(
            f"system condition estimate {condition:.3e} exceeds {CONDITION_LIMIT:.0e} "
            f"(k={wave.k} may be close to an interior resonance)",
            condition=condition,
        )
    sol_vec = sla.lu_solve((lu, piv), g)
    mu = Id @ sol_vec
    sol = ScatterSolution(
        kind="bie",
        wave=wave,
        surface=surface,
        mesh=mesh,
        u=S @ sol_vec + u_inc,
        dnu=(-0.5 * Id + K) @ sol_vec + dn_inc,
        impedance=lam,
        density=mu,
        density_coeffs=sol_vec if method == "galerkin" else None,
        condition=float(condition),
        diagnostics=diag,
    )
    if check_points:
        res = boundary_residuals(sol, impedance, n_points=check_points, interface_band=interface_band)
        sol.diagnostics.update(res)
        if residual_threshold is not None and res["impedance_residual_max"] > residual_threshold:
            raise ResolutionTooCoarse(
                f"checkpoint impedance residual {res['impedance_residual_max']:.3e} "
                f"exceeds {residual_threshold:.3e}"
            )
    logger.info("BIE solve (%s): %d nodes, cond %.3e", method, mesh.size, condition)
    return sol


def checkpoint_directions(n, seed=12345):
    """Deterministic quasi-uniform directions that avoid the mesh nodes."""
    i = np.arange(n) + 0.5
    golden = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - 2.0 * i / n
    rr = np.sqrt(1.0 - z * z)
    rng = np.random.default_rng(seed)
    a = golden * i + rng.uniform(0.0, 2.0 * np.pi)
    return np.stack([rr * np.cos(a), rr * np.sin(a), z], axis=-1)


def boundary_trace(sol, directions):
    """Total-field traces ``(u, du/dnu)`` at boundary points in the given directions."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    th, ph = angles_of(directions)
    if sol.kind == "series":
        return _series_trace(sol, directions)
    x, nu, _ = sol.surface.frame_on(th, ph)
    if sol.diagnostics["method"] == "galerkin":
        L = sol.diagnostics["degree"]
        S, K = layer_operators(sol.surface, L, directions, rule=sol.diagnostics["rule"], k=sol.k)
        Ip = sph_harm_table(L, th, ph)
        a = sol.density_coeffs
    else:
        S, K = nystrom_operators(sol.mesh, directions, sol.k, sol.diagnostics["cutoff"])
        Ip = interpolation_matrix(sol.mesh, directions)
        a = sol.density
    u = S @ a + sol.wave.incident(x)
    dnu = (-0.5 * Ip + K) @ a + sol.wave.incident_normal_derivative(x, nu)
    return u, dnu


def boundary_residuals(sol, impedance, n_points=64, interface_band=0.2):
    """Boundary-condition residuals at off-node checkpoints.

    Impedance residual ``|du/dnu + i lambda u|`` is scaled by ``k``;
    checkpoints within ``interface_band`` (arc length) of ``Gamma_D`` are
    excluded from the impedance statistic, those inside ``Gamma_D`` enter
    the Dirichlet statistic ``|u|``.
    """
    dirs = checkpoint_directions(n_points)
    u, dnu = boundary_trace(sol, dirs)
    th, ph = angles_of(dirs)
    part = sol.mesh.partition if sol.mesh is not None else None
    if part is not None and part.has_dirichlet:
        on_d = part.on_dirichlet(th)
        dist = part.dirichlet_distance(sol.surface, th, ph)
        lam = _impedance_at(impedance, dirs)
        imp_mask = (~on_d) & (dist > interface_band)
        # distance into Gamma_D, measured along the polar angle
        dir_mask = on_d & ((part.cap_angle - th) * sol.surface.r_min > interface_band)
    else:
        lam = _impedance_at(impedance, dirs)
        imp_mask = np.ones(len(dirs), dtype=bool)
        dir_mask = np.zeros(len(dirs), dtype=bool)
    imp = np.abs(dnu + 1j * lam * u) / sol.k
    out = {
        "checkpoints": int(n_points),
        "impedance_residual_max": float(imp[imp_mask].max()) if imp_mask.any() else 0.0,
        "dirichlet_residual_max": float(np.abs(u[dir_mask]).max()) if dir_mask.any() else 0.0,
    }
    return out


# ---------------------------------------------------------------------------
# Sphere series
# ---------------------------------------------------------------------------
def _series_c(k, a, lam, nmax):
    j, jp, h, hp = spherical_bessel_all(nmax, np.array(k * a))
    if lam is None or np.isinf(lam):
        return -j / h
    return -(k * jp + 1j * lam * j) / (k * hp + 1j * lam * h)


def series_coefficients(k, a, lam, n_max=N_MAX_DEFAULT, tol=1e-14):
    """Coefficients ``c_n`` with the truncation chosen so the tail falls below ``tol``.

    ``lam = inf`` gives the sound-soft limit ``-j_n / h_n``; ``lam = 0`` the
    sound-hard one ``-j_n' / h_n'``.
    """
    c = _series_c(k, a, lam, n_max)
    _, _, h, _ = spherical_bessel_all(n_max, np.array(k * a))
    n = np.arange(n_max + 1)
    size = (2 * n + 1) * np.maximum(np.abs(c), np.abs(c * h))
    small = size < tol
    # first n from which every remaining coefficient is below tol (checked over a run of 3)
    for N in range(n_max - 2):
        if small[N + 1: N + 4].all():
            return c[: N + 1]
    raise TruncationInsufficient(f"series tail not below {tol:g} by n_max={n_max}")


def sphere_series(wave, a, lam, N=None, mesh=None, n_max=N_MAX_DEFAULT):
    """Exact solution for a fully coated sphere of radius ``a`` and constant impedance.

    ``u^s = sum (2n+1) i^n c_n h_n(kr) P_n(cos gamma)`` with ``gamma`` the
    angle to the incident direction.
    """
    from .geometry import StarSurface

    if lam is not None and lam < 0:
        raise ArgumentOutOfRange("impedance must be non-negative")
    c = series_coefficients(wave.k, a, lam, n_max=n_max) if N is None else _series_c(wave.k, a, lam, N)
    surface = mesh.surface if mesh is not None else StarSurface(base=float(a))
    sol = ScatterSolution(
        kind="series",
        wave=wave,
        surface=surface,
        mesh=mesh,
        series_coeffs=c,
        radius=float(a),
        lam=lam,
        condition=1.0,
    )
    if mesh is not None:
        if not mesh.surface.is_sphere or abs(mesh.surface.base - a) > 1e-14:
            raise ArgumentOutOfRange("series solution requires a spherical mesh of radius a")
        u, dnu = _series_trace(sol, mesh.grid.directions)
        object.__setattr__(sol, "u", u)
        object.__setattr__(sol, "dnu", dnu)
        object.__setattr__(sol, "impedance", np.full(mesh.size, lam if lam is not None else np.inf))
    return sol


def _series_radial(sol, kr, derivative=False):
    N = len(sol.series_coeffs) - 1
    j, jp, h, hp = spherical_bessel_all(N, kr)
    n = np.arange(N + 1).reshape((-1,) + (1,) * np.ndim(kr))
    c = sol.series_coeffs.reshape(n.shape)
    pref = (2 * n + 1) * (1j ** n)
    if derivative:
        return pref * jp, pref * c * hp
    return pref * j, pref * c * h


def _series_trace(sol, directions):
    a, k = sol.radius, sol.k
    cosg = np.clip(directions @ sol.wave.omega / np.linalg.norm(directions, axis=-1), -1.0, 1.0)
    N = len(sol.series_coeffs) - 1
    P = legendre_all(N, cosg)
    inc, sca = _series_radial(sol, np.array(k * a))
    dinc, dsca = _series_radial(sol, np.array(k * a), derivative=True)
    u = np.tensordot((inc + sca).ravel(), P, axes=(0, 0))
    dnu = k * np.tensordot((dinc + dsca).ravel(), P, axes=(0, 0))
    return u, dnu


# ---------------------------------------------------------------------------
# Field evaluation
# ---------------------------------------------------------------------------
def eval_field(sol, points, want="total"):
    """Scattered or total field at points strictly outside the obstacle."""
    points = np.asarray(points, dtype=float)
    shape = points.shape[:-1]
    pts = points.reshape(-1, 3)
    if not np.all(sol.surface.outside(pts)):
        raise PointInsideObstacle("evaluation point not strictly outside the obstacle")
    if want not in ("total", "scattered"):
        raise ArgumentOutOfRange(f"unknown field selector {want!r}")
    if sol.kind == "series":
        us = _series_scattered(sol, pts)
    else:
        us = np.empty(len(pts), dtype=complex)
        w = sol.mesh.weights * sol.density
        y = sol.mesh.nodes
        for s in range(0, len(pts), EVAL_CHUNK):
            p = pts[s: s + EVAL_CHUNK]
            d = np.sqrt(np.sum((p[:, None, :] - y[None, :, :]) ** 2, axis=-1))
            us[s: s + EVAL_CHUNK] = (np.exp(1j * sol.k * d) / (4.0 * np.pi * d)) @ w
    if want == "total":
        us = us + sol.wave.incident(pts)
    return us.reshape(shape)


def _series_scattered(sol, pts):
    rr = np.linalg.norm(pts, axis=-1)
    cosg = np.clip(pts @ sol.wave.omega / rr, -1.0, 1.0)
    N = len(sol.series_coeffs) - 1
    out = np.empty(len(pts), dtype=complex)
    for s in range(0, len(pts), EVAL_CHUNK):
        sl = slice(s, s + EVAL_CHUNK)
        _, h = _series_radial(sol, sol.k * rr[sl])
        P = legendre_all(N, cosg[sl])
        out[sl] = np.sum(h * P, axis=0)
    return out


def far_field_values(sol, directions):
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if sol.kind == "series":
        N = len(sol.series_coeffs) - 1
        n = np.arange(N + 1)
        cosg = np.clip(directions @ sol.wave.omega, -1.0, 1.0)
        P = legendre_all(N, cosg)
        return ((2 * n + 1) * sol.series_coeffs) @ P / (1j * sol.k)
    w = sol.mesh.weights * sol.density
    phase = np.exp(-1j * sol.k * (directions @ sol.mesh.nodes.T))
    return phase @ w / (4.0 * np.pi)


def eval_far_field(sol, directions):
    """Far-field pattern of the scattered wave on a :class:`SphereGrid`."""
    if isinstance(directions, SphereGrid):
        return FarFieldPattern(directions, far_field_values(sol, directions.directions), sol.k)
    return far_field_values(sol, directions)


def l2_sphere_norm(pattern, other=None):
    """Quadrature ``L^2(S^2)`` norm of a pattern, or of ``pattern - other``."""
    if other is not None:
        pattern = pattern - other
    return float(np.sqrt(pattern.grid.integrate(np.abs(pattern.values) ** 2)))


def relative_far_field_error(sol, reference, grid):
    """Relative ``L^2(S^2)`` distance of two far fields sampled on ``grid``."""
    a = eval_far_field(sol, grid)
    b = eval_far_field(reference, grid)
    return l2_sphere_norm(a, b) / l2_sphere_norm(b)
