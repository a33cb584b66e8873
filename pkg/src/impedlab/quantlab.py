"""Numerical probes of quantitative unique-continuation and stability estimates.

Every checker accepts either a :class:`ScatterSolution` (the total field is
evaluated) or a plain callable ``points -> complex values``.  Ratios are
homogeneous of degree zero in the field, so multiplying it by a nonzero
constant leaves every reported number unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArgumentOutOfRange,
    BallTouchesObstacle,
    DegenerateMasses,
    EmptyPatch,
    InsufficientData,
    RadiusInsideObstacle,
)
from .geometry import ball_samples, distance_to_surface, local_patch
from .inverse import fibonacci_directions
from .scatter import ScatterSolution, boundary_trace, eval_field

__all__ = [
    "alpha_modulus",
    "stability_modulus",
    "StabilityFit",
    "fit_stability",
    "LowerBoundReport",
    "check_lower_bound",
    "DoublingReport",
    "check_volume_doubling",
    "check_surface_doubling",
    "ThreeSpheresReport",
    "check_three_spheres",
    "ApReport",
    "check_reverse_holder_ap",
    "Psi0Report",
    "psi0",
    "psi0_radius",
    "psi0_residual",
]


# ---------------------------------------------------------------------------
# Moduli
# ---------------------------------------------------------------------------
def alpha_modulus(t):
    t = np.asarray(t, dtype=float)
    return 1.0 / (1.0 + np.log(np.log(1.0 / t) + math.e))


def stability_modulus(t, C=1.0, theta=1.0):
    """Return ``(alpha(t), eta(t))`` with ``eta = C (alpha(t) log(1/t))**(-theta)``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(~(t_arr > 0.0)) or np.any(~(t_arr < 1.0)):
        raise ArgumentOutOfRange("t must lie in (0, 1)")
    if not (C > 0.0 and theta > 0.0):
        raise ArgumentOutOfRange("C and theta must be positive")
    a = alpha_modulus(t_arr)
    eta = C * (a * np.log(1.0 / t_arr)) ** (-theta)
    if np.ndim(t) == 0:
        return float(a), float(eta)
    return a, eta


@dataclass(frozen=True)
class StabilityFit:
    """Least-squares fit of ``log err = log C - theta * log(alpha(eps) log(1/eps))``.

    ``power_exponent``/``power_residual`` describe the competing fit
    ``log err = a + p log eps`` on the same data.
    """

    eps: np.ndarray
    err: np.ndarray
    C: float
    theta: float
    residual: float
    non_decaying: bool
    power_exponent: float
    power_residual: float

    @property
    def power_gain(self):
        """How many times smaller the power-law residual is than the log-law one."""
        if self.power_residual == 0.0:
            return math.inf if self.residual > 0.0 else 1.0
        return self.residual / self.power_residual

    def summary(self):
        return {
            "C": self.C,
            "theta": self.theta,
            "residual": self.residual,
            "non_decaying": self.non_decaying,
            "power_exponent": self.power_exponent,
            "power_residual": self.power_residual,
            "power_gain": self.power_gain,
        }


def _line_fit(x, y):
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef, float(np.linalg.norm(A @ coef - y))


def fit_stability(records):
    """Fit the logarithmic stability law to ``(eps, err)`` pairs."""
    recs = [(float(e), float(r)) for e, r in records]
    if len(recs) < 4:
        raise InsufficientData(f"need at least 4 records, got {len(recs)}")
    eps = np.array([e for e, _ in recs])
    err = np.array([r for _, r in recs])
    if np.any(~((eps > 0.0) & (eps < 1.0))):
        raise ArgumentOutOfRange("noise levels must lie in (0, 1)")
    if len(np.unique(eps)) != len(eps):
        raise InsufficientData("noise levels must be distinct")
    if np.any(~(err > 0.0)) or not np.all(np.isfinite(err)):
        raise ArgumentOutOfRange("errors must be positive and finite")
    order = np.argsort(eps)
    eps, err = eps[order], err[order]
    x = np.log(alpha_modulus(eps) * np.log(1.0 / eps))
    (logC, slope), res = _line_fit(x, np.log(err))
    (_, p), pres = _line_fit(np.log(eps), np.log(err))
    theta = -float(slope)
    # err should grow with eps; anything flat or reversed is flagged
    non_decaying = bool(theta <= 1e-9 or not err[-1] > err[0])
    return StabilityFit(eps, err, float(math.exp(logC)), theta, res, non_decaying,
                        float(p), pres)


# ---------------------------------------------------------------------------
# Field access
# ---------------------------------------------------------------------------
def _as_field(u):
    if isinstance(u, ScatterSolution):
        return lambda pts: eval_field(u, pts, "total")
    if callable(u):
        return lambda pts: np.asarray(u(np.atleast_2d(pts)), dtype=complex)
    raise TypeError("field must be a ScatterSolution or a callable")


def _as_trace(u):
    """Field restricted to boundary samples, called with ``(points, directions)``."""
    if isinstance(u, ScatterSolution):
        return lambda pts, dirs: boundary_trace(u, dirs)[0]
    f = _as_field(u)
    return lambda pts, dirs: f(pts)


def _surface_of(u, surface):
    if surface is not None:
        return surface
    if isinstance(u, ScatterSolution):
        return u.surface
    return None


def _partition_of(u, partition):
    if partition is not None:
        return partition
    if isinstance(u, ScatterSolution) and u.mesh is not None:
        return u.mesh.partition
    return None


def _boundary_center(surface, x0):
    """Snap a point or direction onto the surface along its ray."""
    q = np.asarray(x0, dtype=float)
    q = q / np.linalg.norm(q)
    return float(surface.radius_at(q[None, :])[0]) * q


# ---------------------------------------------------------------------------
# Lower bound far from the obstacle
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LowerBoundReport:
    radii: np.ndarray
    min_abs: np.ndarray
    R0_hat: float

    def rows(self):
        return [("radius", "min_abs_u")] + [(r, m) for r, m in zip(self.radii, self.min_abs)]


def check_lower_bound(u, radii, n_samples=512, surface=None):
    """Minimum of ``|u|`` on spheres ``|x| = R``; ``R0_hat`` is inf if the last radius fails."""
    f = _as_field(u)
    surf = _surface_of(u, surface)
    radii = np.sort(np.asarray(radii, dtype=float))
    # radius equal to the diameter is accepted (the sphere |x| = diam clears D)
    if surf is not None and np.any(radii < surf.diameter * (1.0 - 1e-9)):
        raise RadiusInsideObstacle(f"radii must be at least diam(D) = {surf.diameter:.6g}")
    dirs = fibonacci_directions(n_samples)
    mins = np.array([np.min(np.abs(f(R * dirs))) for R in radii])
    good = mins > 0.5
    R0 = math.inf
    for i in range(len(radii) - 1, -1, -1):
        if not good[i]:
            break
        R0 = float(radii[i])
    return LowerBoundReport(radii, mins, R0)


# ---------------------------------------------------------------------------
# Doubling
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DoublingReport:
    """Doubling ratios keyed by ``(center index, rho, beta)``.

    ``K`` and ``C`` come from fitting ``log ratio = log C + K log beta`` over
    all rows (the surface variant sets ``K = nan`` and ``C = max ratio``).
    """

    kind: str
    centers: np.ndarray
    entries: list = field(default_factory=list)
    K: float = math.nan
    C: float = math.nan

    @property
    def ratios(self):
        return np.array([e[3] for e in self.entries])

    def rows(self):
        head = ("center", "rho", "beta", "ratio", "inner_mass", "outer_mass")
        return [head] + [tuple(e) for e in self.entries]


def _volume_mass(f, patch):
    return float(np.sum(patch.volume_weights * np.abs(f(patch.volume_points)) ** 2))


def _surface_mass(tr, patch):
    vals = tr(patch.surface_points, patch.surface_directions)
    return float(np.sum(patch.surface_weights * np.abs(vals) ** 2))


def check_volume_doubling(u, centers, rhos, betas, surface=None, partition=None,
                          n_volume=8192, seed=0):
    f = _as_field(u)
    surf = _surface_of(u, surface)
    part = _partition_of(u, partition)
    betas = [float(b) for b in betas]
    if any(b <= 1.0 for b in betas):
        raise ArgumentOutOfRange("beta must exceed 1")
    ctrs = np.array([_boundary_center(surf, c) for c in np.atleast_2d(centers)])
    entries = []
    for ci, c in enumerate(ctrs):
        for rho in rhos:
            inner = _volume_mass(f, local_patch(surf, c, rho, n_volume=n_volume,
                                                partition=part, seed=seed))
            if inner <= 0.0:
                raise DegenerateMasses(f"zero mass in patch rho={rho}")
            for b in betas:
                outer = _volume_mass(f, local_patch(surf, c, b * rho, n_volume=n_volume,
                                                    partition=part, seed=seed))
                entries.append((ci, float(rho), b, outer / inner, inner, outer))
    lb = np.log([e[2] for e in entries])
    lr = np.log([e[3] for e in entries])
    if len(set(betas)) > 1:
        (logC, K), _ = _line_fit(lb, lr)
    else:
        # one beta: pure power through C = 1
        logC, K = 0.0, float(np.mean(lr / lb))
    return DoublingReport("volume", ctrs, entries, float(K), float(math.exp(logC)))


def check_surface_doubling(u, centers, radii, surface=None, partition=None,
                           n_radial=24, n_angular=48):
    tr = _as_trace(u)
    surf = _surface_of(u, surface)
    part = _partition_of(u, partition)
    ctrs = np.array([_boundary_center(surf, c) for c in np.atleast_2d(centers)])
    entries = []
    for ci, c in enumerate(ctrs):
        for r in radii:
            inner = _surface_mass(tr, local_patch(surf, c, r, n_volume=1, n_radial=n_radial,
                                                 n_angular=n_angular, partition=part))
            outer = _surface_mass(tr, local_patch(surf, c, 2 * r, n_volume=1,
                                                 n_radial=n_radial, n_angular=n_angular,
                                                 partition=part))
            if inner <= 0.0:
                raise EmptyPatch(f"zero surface mass at r={r}")
            entries.append((ci, float(r), 2.0, outer / inner, inner, outer))
    C = max(e[3] for e in entries)
    return DoublingReport("surface", ctrs, entries, math.nan, float(C))


# ---------------------------------------------------------------------------
# Three spheres
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ThreeSpheresReport:
    centers: np.ndarray
    rho: float
    beta1: float
    beta2: float
    masses: np.ndarray  # (n_centers, 3): I(rho), I(beta1 rho), I(beta2 rho)
    tau_hat: np.ndarray
    defect: np.ndarray

    @property
    def tau_geometric(self):
        return math.log(self.beta2 / self.beta1) / math.log(self.beta2)

    def rows(self):
        head = ("x", "y", "z", "I_rho", "I_beta1", "I_beta2", "tau_hat", "defect")
        return [head] + [
            (*c, *m, t, d)
            for c, m, t, d in zip(self.centers, self.masses, self.tau_hat, self.defect)
        ]


def _ball_mass(f, center, r, n, seed):
    pts = ball_samples(center, r, n, seed=seed)
    vol = 4.0 / 3.0 * math.pi * r**3
    return vol * float(np.mean(np.abs(f(pts)) ** 2))


def check_three_spheres(U, centers, rho, beta1, beta2, surface=None, n_samples=8192,
                        seed=0):
    """Ball masses ``I(r) = int_{B_r(x)} |U|^2`` at ``r = rho, beta1 rho, beta2 rho``.

    All three radii reuse one set of unit-ball samples, so a field of constant
    modulus reproduces ``|B_r|`` scaling exactly.
    """
    if not (1.0 < beta1 < beta2):
        raise ArgumentOutOfRange("need 1 < beta1 < beta2")
    if not rho > 0.0:
        raise ArgumentOutOfRange("rho must be positive")
    f = _as_field(U)
    surf = surface
    ctrs = np.atleast_2d(np.asarray(centers, dtype=float))
    if surf is not None:
        gap = distance_to_surface(surf, ctrs)
        inside = surf.contains(ctrs)
        bad = np.flatnonzero(inside | (gap <= beta2 * rho))
        if len(bad):
            raise BallTouchesObstacle(
                f"ball of radius {beta2 * rho} around center {bad[0]} meets the obstacle"
            )
    masses = np.array([[_ball_mass(f, c, r, n_samples, seed)
                        for r in (rho, beta1 * rho, beta2 * rho)] for c in ctrs])
    if np.any(masses[:, 0] <= 0.0):
        raise DegenerateMasses("I(rho) vanishes")
    logI = np.log(masses)
    den = logI[:, 2] - logI[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(den != 0.0, (logI[:, 2] - logI[:, 1]) / den, np.nan)
    tg = math.log(beta2 / beta1) / math.log(beta2)
    defect = logI[:, 1] - tg * logI[:, 0] - (1.0 - tg) * logI[:, 2]
    return ThreeSpheresReport(ctrs, float(rho), float(beta1), float(beta2), masses, tau, defect)


# ---------------------------------------------------------------------------
# Reverse Hoelder / A_p on the boundary
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ApReport:
    entries: list
    p_values: tuple
    smallest_p: float | None

    def rows(self):
        head = ("center", "r", "p", "mean_u2", "mean_inv", "ap_product", "reverse_holder",
                "masked_fraction")
        return [head] + [tuple(e) for e in self.entries]

    @property
    def products(self):
        return np.array([e[5] for e in self.entries])


def check_reverse_holder_ap(u, centers, radii, p=(1.5, 2.0, 3.0), surface=None,
                            partition=None, n_radial=24, n_angular=48, zero_tol=0.0):
    """A_p products and reverse-Hoelder ratios over boundary disks.

    Samples with ``|u| <= zero_tol`` are masked; the masked fraction is reported.
    """
    ps = tuple(float(q) for q in np.atleast_1d(p))
    if any(q <= 1.0 for q in ps):
        raise ArgumentOutOfRange("p must exceed 1")
    tr = _as_trace(u)
    surf = _surface_of(u, surface)
    part = _partition_of(u, partition)
    ctrs = np.array([_boundary_center(surf, c) for c in np.atleast_2d(centers)])
    entries = []
    finite_for = {q: True for q in ps}
    for ci, c in enumerate(ctrs):
        for r in radii:
            patch = local_patch(surf, c, r, n_volume=1, n_radial=n_radial,
                                n_angular=n_angular, partition=part)
            a = np.abs(tr(patch.surface_points, patch.surface_directions))
            keep = a > zero_tol
            if not np.any(keep):
                raise EmptyPatch(f"every surface sample vanishes at r={r}")
            w = patch.surface_weights[keep] / patch.surface_weights[keep].sum()
            a = a[keep]
            m2 = float(np.sum(w * a**2))
            rh = float(np.sum(w * a**4)) ** 0.25 / math.sqrt(m2)
            for q in ps:
                minv = float(np.sum(w * a ** (-2.0 / (q - 1.0))))
                prod = m2 * minv ** (q - 1.0)
                finite_for[q] &= bool(np.isfinite(prod))
                entries.append((ci, float(r), q, m2, minv, prod, rh, 1.0 - keep.mean()))
    ok = [q for q in ps if finite_for[q]]
    return ApReport(entries, ps, min(ok) if ok else None)


# ---------------------------------------------------------------------------
# Explicit half-space solutions
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Psi0Report:
    case: str
    radius: float
    pde_residual: float
    bc_residual: float
    pde_residual_fd: float
    bc_residual_fd: float
    min_abs: float


def _psi0_case(k, lam):
    d = k * k - lam * lam
    if d < 0.0:
        return "k<lambda"
    if d > 0.0:
        return "k>lambda"
    return "k=lambda"


def psi0_radius(k, lam):
    d = abs(k * k - lam * lam)
    return 0.25 * math.pi * min(1.0 / math.sqrt(d) if d > 0.0 else math.inf, 1.0 / lam)


def psi0(k, lam, points, derivatives=False):
    """The explicit solution and, optionally, its gradient and Laplacian.

    Satisfies ``Delta psi + k^2 psi = 0`` and ``d psi/d y3 + i lam psi = 0`` on ``y3 = 0``.
    """
    y = np.atleast_2d(np.asarray(points, dtype=float))
    y1, y3 = y[:, 0], y[:, 2]
    case = _psi0_case(k, lam)
    s = math.sqrt(abs(k * k - lam * lam))
    g = np.sin(lam * y3) + 1j * np.cos(lam * y3)
    g3 = lam * (np.cos(lam * y3) - 1j * np.sin(lam * y3))
    g33 = -lam * lam * g
    if case == "k<lambda":
        h, h1, h11 = 8 * np.cosh(s * y1), 8 * s * np.sinh(s * y1), 8 * s * s * np.cosh(s * y1)
    elif case == "k>lambda":
        h, h1, h11 = 8 * np.cos(s * y1), -8 * s * np.sin(s * y1), -8 * s * s * np.cos(s * y1)
    else:
        h, h1, h11 = np.full_like(y1, 8.0), np.zeros_like(y1), np.zeros_like(y1)
    val = h * g
    if not derivatives:
        return val
    grad = np.column_stack([h1 * g, np.zeros_like(val), h * g3])
    lap = h11 * g + h * g33
    return val, grad, lap


def _half_ball_points(radius, n, seed):
    pts = ball_samples(np.zeros(3), radius, 2 * n + 64, seed=seed)
    pts = pts[pts[:, 2] <= 0.0][:n]
    return pts


def psi0_residual(k, lam, points=None, n_points=1000, case=None, seed=0, fd_step=1e-5):
    """Residuals of the explicit solution on the lower half-ball of radius ``psi0_radius``.

    The finite-difference check differentiates the analytic gradient with
    central differences, and ``psi`` itself for the boundary condition.
    """
    if not (lam > 0.0 and k > 0.0):
        raise ArgumentOutOfRange("k and lambda must be positive")
    actual = _psi0_case(k, lam)
    if case is not None and case != actual:
        raise ArgumentOutOfRange(f"case {case!r} does not match k={k}, lambda={lam} ({actual})")
    R = psi0_radius(k, lam)
    if points is None:
        pts = _half_ball_points(R, n_points, seed)
    else:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if np.any(pts[:, 2] > 0.0) or np.any(np.linalg.norm(pts, axis=1) > R * (1 + 1e-12)):
            raise ArgumentOutOfRange("points must lie in the lower half-ball")
    val, grad, lap = psi0(k, lam, pts, derivatives=True)
    pde = float(np.max(np.abs(lap + k * k * val)))
    flat = pts.copy()
    flat[:, 2] = 0.0
    fv, fg, _ = psi0(k, lam, flat, derivatives=True)
    bc = float(np.max(np.abs(fg[:, 2] + 1j * lam * fv)))

    h = fd_step
    lap_fd = np.zeros_like(val)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        gp = psi0(k, lam, pts + e, derivatives=True)[1][:, i]
        gm = psi0(k, lam, pts - e, derivatives=True)[1][:, i]
        lap_fd += (gp - gm) / (2 * h)
    pde_fd = float(np.max(np.abs(lap_fd + k * k * val)))
    e3 = np.array([0.0, 0.0, h])
    d3 = (psi0(k, lam, flat + e3) - psi0(k, lam, flat - e3)) / (2 * h)
    bc_fd = float(np.max(np.abs(d3 + 1j * lam * fv)))
    return Psi0Report(actual, R, pde, bc, pde_fd, bc_fd, float(np.min(np.abs(val))))
