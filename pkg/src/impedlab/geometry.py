"""Star-shaped obstacles, coating partitions, surface quadrature and local patches.

The obstacle boundary is ``x = r(q) q`` for unit directions ``q``, with the
radius map expanded in real orthonormal spherical harmonics::

    r(theta, phi) = base + sum_{(n, m)} c_nm R_n^m(theta, phi)

Points are inside the obstacle exactly when ``|x| < r(x / |x|)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.spatial.distance import pdist
from scipy.stats import qmc

from .errors import (
    ArgumentOutOfRange,
    DiameterExceeded,
    EmptyPatch,
    NonPositiveRadius,
    PatchTouchesDirichlet,
    ResolutionTooCoarse,
)
from .specfun import SphereGrid, angles_of, real_sph_harm, unit_vectors

MIN_THETA_NODES = 8
MIN_PHI_NODES = 16


# ---------------------------------------------------------------------------
# Surface
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class StarSurface:
    """Boundary of a star-shaped obstacle about the origin.

    Attributes
    ----------
    base : float
        Constant part of the radius map.
    radial_coeffs : tuple of (n, m, c)
        Real harmonic coefficients; ``m < 0`` selects sine harmonics.
    diam_bound : float
        A priori bound ``d`` on the diameter.
    lipschitz_M : float
        Bound on ``max |grad_S r| / r_min``.
    patch_scale : float
        Largest admissible local-patch radius ``r0``.
    """

    base: float
    radial_coeffs: tuple = ()
    diam_bound: float = math.inf
    lipschitz_M: float = math.inf
    patch_scale: float = 0.5

    def radius(self, theta, phi):
        return self.base + real_sph_harm(self.radial_coeffs, theta, phi)

    def radius_with_gradient(self, theta, phi):
        """``(r, dr/dtheta, (1/sin theta) dr/dphi)``."""
        val, dth, dph = real_sph_harm(self.radial_coeffs, theta, phi, derivatives=True)
        return self.base + val, dth, dph

    def radius_at(self, directions):
        theta, phi = angles_of(directions)
        return self.radius(theta, phi)

    @property
    def is_sphere(self):
        return all(c == 0.0 for _, _, c in self.radial_coeffs)

    @cached_property
    def _probe(self):
        grid = SphereGrid.gauss(48, 96)
        r, dth, dph = self.radius_with_gradient(grid.theta, grid.phi)
        return grid, r, np.hypot(dth, dph)

    def _polish(self, sign):
        # grid extremum refined by a local search in (theta, phi)
        grid, r, _ = self._probe
        i = int(np.argmin(sign * r))
        best = float(r[i])
        if self.is_sphere:
            return best
        res = minimize(lambda v: sign * float(self.radius(v[0], v[1])),
                       [grid.theta[i], grid.phi[i]], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14})
        return min(best, sign * float(res.fun)) if sign > 0 else max(best, -float(res.fun))

    @cached_property
    def r_min(self):
        return self._polish(1.0)

    @cached_property
    def r_max(self):
        return self._polish(-1.0)

    @cached_property
    def diameter(self):
        grid = SphereGrid.gauss(24, 48)
        pts = self.radius(grid.theta, grid.phi)[:, None] * grid.directions
        # the two pole rows complete the sampling
        poles = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        pts = np.vstack([pts, self.radius_at(poles)[:, None] * poles])
        return float(pdist(pts).max())

    @property
    def lipschitz_estimate(self):
        grid, r, g = self._probe
        return float(g.max() / r.min())

    def contains(self, points):
        """True for points strictly inside the obstacle."""
        points = np.asarray(points, dtype=float)
        rho = np.linalg.norm(points, axis=-1)
        out = rho < 1e-300
        safe = np.where(out[..., None], np.array([0.0, 0.0, 1.0]), points)
        return out | (rho < self.radius_at(safe))

    def outside(self, points):
        """True for points strictly outside the closed obstacle."""
        points = np.asarray(points, dtype=float)
        rho = np.linalg.norm(points, axis=-1)
        safe = np.where((rho < 1e-300)[..., None], np.array([0.0, 0.0, 1.0]), points)
        return rho > self.radius_at(safe)

    def point(self, theta, phi):
        return self.radius(theta, phi)[..., None] * unit_vectors(theta, phi)

    def area(self, n_theta=48):
        grid = SphereGrid.gauss(n_theta, 2 * n_theta)
        _, _, jac = self.frame_on(grid.theta, grid.phi)
        return float(np.sum(jac * grid.weights))

    def frame_on(self, theta, phi):
        """Points, outward unit normals and area per unit solid angle."""
        r, dth, dph = self.radius_with_gradient(theta, phi)
        q = unit_vectors(theta, phi)
        st, ct = np.sin(theta), np.cos(theta)
        cp, sp = np.cos(phi), np.sin(phi)
        e_th = np.stack([ct * cp, ct * sp, -st], axis=-1)
        e_ph = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
        grad = dth[..., None] * e_th + dph[..., None] * e_ph
        nrm = np.sqrt(r * r + dth * dth + dph * dph)
        normal = (r[..., None] * q - grad) / nrm[..., None]
        return r[..., None] * q, normal, r * nrm


def build_surface(descriptor):
    """Validated :class:`StarSurface` from a descriptor mapping.

    Recognised keys: ``kind`` (``"sphere"`` or ``"harmonic"``), ``radius``
    (sphere), ``base`` and ``coeffs`` (list of ``[n, m, c]``), and the
    optional bounds ``diam_bound``, ``lipschitz_M``, ``patch_scale``.
    """
    kind = descriptor.get("kind", "harmonic")
    if kind == "sphere":
        base, coeffs = float(descriptor.get("radius", 1.0)), ()
    elif kind == "harmonic":
        base = float(descriptor.get("base", 0.0))
        coeffs = tuple((int(n), int(m), float(c)) for n, m, c in descriptor.get("coeffs", ()))
    else:
        raise ArgumentOutOfRange(f"unknown surface kind {kind!r}")
    surf = StarSurface(
        base=base,
        radial_coeffs=coeffs,
        diam_bound=float(descriptor.get("diam_bound", math.inf)),
        lipschitz_M=float(descriptor.get("lipschitz_M", math.inf)),
        patch_scale=float(descriptor.get("patch_scale", 0.5)),
    )
    if surf.r_min <= 0.0:
        raise NonPositiveRadius(f"radius map reaches {surf.r_min:.3g} <= 0")
    if surf.diameter > surf.diam_bound:
        raise DiameterExceeded(f"diameter {surf.diameter:.6g} exceeds bound {surf.diam_bound:.6g}")
    if surf.lipschitz_estimate > surf.lipschitz_M:
        raise ArgumentOutOfRange(
            f"estimated Lipschitz constant {surf.lipschitz_estimate:.4g} exceeds M={surf.lipschitz_M:.4g}"
        )
    return surf


def surface_frame(surface, theta, phi):
    """``(point, outward unit normal, area element)`` at parameters ``(theta, phi)``.

    The area element is per ``d theta d phi``, so it equals ``sin theta``
    on the unit sphere.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    pt, nu, jac = surface.frame_on(theta, phi)
    return pt, nu, jac * np.sin(theta)


# ---------------------------------------------------------------------------
# Coating partition
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CoatingPartition:
    """``Gamma_D = {theta < cap_angle}`` for a polar cap, empty when fully coated."""

    kind: str = "fully_impedance"
    cap_angle: float = 0.0

    def __post_init__(self):
        if self.kind == "fully_impedance":
            object.__setattr__(self, "cap_angle", 0.0)
        elif self.kind == "polar_cap":
            if not 0.0 < self.cap_angle < math.pi:
                raise ArgumentOutOfRange("polar cap angle must lie in (0, pi)")
        else:
            raise ArgumentOutOfRange(f"unknown partition kind {self.kind!r}")

    @property
    def has_dirichlet(self):
        return self.kind == "polar_cap"

    def on_dirichlet(self, theta):
        return np.asarray(theta) < self.cap_angle

    def dirichlet_distance(self, surface, theta, phi):
        """Meridian arc length from ``(theta, phi)`` down to the interface circle.

        Infinite for a fully coated obstacle, zero on ``Gamma_D``.
        """
        theta = np.asarray(theta, dtype=float)
        phi = np.broadcast_to(np.asarray(phi, dtype=float), theta.shape)
        if not self.has_dirichlet:
            return np.full(theta.shape, np.inf)
        t, w = np.polynomial.legendre.leggauss(16)
        span = np.maximum(theta - self.cap_angle, 0.0)
        s = self.cap_angle + 0.5 * (t[:, None] + 1.0) * span.ravel()
        r, dth, _ = surface.radius_with_gradient(s, np.broadcast_to(phi.ravel(), s.shape))
        arc = 0.5 * span.ravel() * (w @ np.sqrt(r * r + dth * dth))
        return arc.reshape(theta.shape)


# ---------------------------------------------------------------------------
# Boundary mesh
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Tensor-grid quadrature on the obstacle boundary.

    ``weights`` are area weights (sum to the surface area); ``grid`` is the
    underlying parameter rule on the unit sphere.
    """

    surface: StarSurface
    partition: CoatingPartition
    grid: SphereGrid
    grading: float = 1.0
    nodes: np.ndarray = field(init=False)
    normals: np.ndarray = field(init=False)
    jacobian: np.ndarray = field(init=False)

    def __post_init__(self):
        pts, nu, jac = self.surface.frame_on(self.grid.theta, self.grid.phi)
        object.__setattr__(self, "nodes", pts)
        object.__setattr__(self, "normals", nu)
        object.__setattr__(self, "jacobian", jac)

    @property
    def size(self):
        return self.grid.size

    @property
    def theta(self):
        return self.grid.theta

    @property
    def phi(self):
        return self.grid.phi

    @cached_property
    def weights(self):
        return self.grid.weights * self.jacobian

    @cached_property
    def on_dirichlet(self):
        return self.partition.on_dirichlet(self.grid.theta)

    @property
    def on_impedance(self):
        return ~self.on_dirichlet

    @property
    def region_tags(self):
        return np.where(self.on_dirichlet, "on_GammaD", "on_GammaI")

    def dirichlet_distance(self):
        return self.partition.dirichlet_distance(self.surface, self.grid.theta, self.grid.phi)

    def interior_impedance(self, rho):
        """Mask of nodes in ``Gamma_I^rho``: distance to ``Gamma_D`` larger than ``rho``."""
        return self.on_impedance & (self.dirichlet_distance() > rho)


def _graded_theta_rule(n_theta, cap_angle, grading):
    """Composite Gauss rule split at the interface, graded towards it.

    On each side the distance to ``cap_angle`` is ``span * s**grading`` for
    Gauss-Legendre nodes ``s`` in (0, 1).
    """
    n_north = max(2, int(round(n_theta * cap_angle / math.pi)))
    n_south = max(2, n_theta - n_north)
    nodes, weights = [], []
    for n_side, span, sign in ((n_north, cap_angle, -1.0), (n_south, math.pi - cap_angle, 1.0)):
        t, w = np.polynomial.legendre.leggauss(n_side)
        s, ws = 0.5 * (t + 1.0), 0.5 * w
        dist = span * s**grading
        ddist = span * grading * s ** (grading - 1.0)
        th = cap_angle + sign * dist
        nodes.append(th)
        weights.append(ws * ddist * np.sin(th))
    th = np.concatenate(nodes)
    w = np.concatenate(weights)
    order = np.argsort(th)
    return th[order], w[order]


def build_quadrature(surface, partition, resolution, grading=1.0):
    """Gauss-Legendre x trapezoid mesh, graded towards the interface circle for a polar cap."""
    n_theta, n_phi = resolution
    if n_theta < MIN_THETA_NODES or n_phi < MIN_PHI_NODES:
        raise ResolutionTooCoarse(
            f"resolution {n_theta}x{n_phi} below minimum {MIN_THETA_NODES}x{MIN_PHI_NODES}"
        )
    if grading < 1.0:
        raise ArgumentOutOfRange("grading exponent must be >= 1")
    if partition.has_dirichlet:
        th, w = _graded_theta_rule(n_theta, partition.cap_angle, grading)
        grid = SphereGrid(th, w, n_phi, degree=min(n_theta - 1, (n_phi - 1) // 2))
    else:
        grid = SphereGrid.gauss(n_theta, n_phi)
        grading = 1.0
    return BoundaryMesh(surface, partition, grid, grading)


# ---------------------------------------------------------------------------
# Local patches
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class LocalPatch:
    """Samples of ``B_rho(x0) minus closure(D)`` and of ``partial D`` inside ``B_rho(x0)``."""

    center: np.ndarray
    radius: float
    volume_points: np.ndarray
    volume_weights: np.ndarray
    surface_points: np.ndarray
    surface_weights: np.ndarray
    surface_directions: np.ndarray
    surface_normals: np.ndarray
    n_ball: int = 0

    @property
    def volume(self):
        return float(self.volume_weights.sum())

    @property
    def surface_area(self):
        return float(self.surface_weights.sum())


def ball_samples(center, radius, n, seed=0):
    """Uniform low-discrepancy points in a ball (scrambled Sobol, rejection from the cube)."""
    m = int(math.ceil(math.log2(max(n, 2) * 2.0)))
    sob = qmc.Sobol(d=3, scramble=True, seed=seed)
    u = 2.0 * sob.random_base2(m) - 1.0
    u = u[np.einsum("ij,ij->i", u, u) <= 1.0][:n]
    return np.asarray(center, dtype=float) + radius * u


def _rotation_to(direction):
    """Rotation taking the north pole onto ``direction`` (``Rz(phi) Ry(theta)``)."""
    th, ph = angles_of(direction)
    ct, st, cp, sp = math.cos(th), math.sin(th), math.cos(ph), math.sin(ph)
    ry = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    rz = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry


def _surface_disk(surface, x0, rho, n_radial, n_angular):
    """Quadrature for ``partial D`` inside ``B_rho(x0)`` in polar coordinates about ``x0``.

    For every azimuth the polar angle where ``|y - x0| = rho`` is located by
    root finding; a Gauss rule then covers ``[0, theta*]``.
    """
    R = _rotation_to(x0)
    t, w = np.polynomial.legendre.leggauss(n_radial)
    psi = 2.0 * np.pi * np.arange(n_angular) / n_angular

    def dist(a, b):
        q = R @ unit_vectors(a, b)
        return np.linalg.norm(surface.radius_at(q) * q - x0) - rho

    pts, wts, dirs, nrms = [], [], [], []
    for b in psi:
        hi = min(math.pi, 4.0 * rho / max(surface.r_min, 1e-12))
        while dist(hi, b) < 0.0 and hi < math.pi:
            hi = min(math.pi, 2.0 * hi)
        if dist(hi, b) < 0.0:
            edge = math.pi
        else:
            edge = brentq(dist, 0.0, hi, args=(b,), xtol=1e-14)
        a = 0.5 * edge * (t + 1.0)
        q = (R @ unit_vectors(a, np.full_like(a, b)).T).T
        th, ph = angles_of(q)
        y, nu, jac = surface.frame_on(th, ph)
        pts.append(y)
        nrms.append(nu)
        dirs.append(q)
        wts.append(0.5 * edge * w * np.sin(a) * jac * (2.0 * np.pi / n_angular))
    return np.vstack(pts), np.concatenate(wts), np.vstack(dirs), np.vstack(nrms)


def local_patch(surface, x0, rho, n_volume=4096, n_radial=24, n_angular=48, partition=None,
                seed=0):
    """Volume and surface samples of the neighbourhood of a boundary point ``x0``.

    Volume samples fill ``B_rho(x0)`` quasi-randomly and keep the points
    outside the obstacle, each weighted ``|B_rho| / n_ball``.
    """
    x0 = np.asarray(x0, dtype=float)
    if not rho > 0.0:
        raise EmptyPatch("patch radius must be positive")
    if rho >= surface.patch_scale:
        raise ArgumentOutOfRange(f"patch radius {rho} must be below r0={surface.patch_scale}")
    if partition is not None and partition.has_dirichlet:
        th, ph = angles_of(x0)
        if partition.dirichlet_distance(surface, th, ph) <= rho:
            raise PatchTouchesDirichlet(
                f"patch of radius {rho} around theta={float(th):.4f} reaches Gamma_D"
            )
    ball = ball_samples(x0, rho, n_volume, seed=seed)
    keep = surface.outside(ball)
    if not np.any(keep):
        raise EmptyPatch("no volume samples outside the obstacle")
    vol = 4.0 / 3.0 * math.pi * rho**3
    vpts = ball[keep]
    vw = np.full(len(vpts), vol / len(ball))
    spts, sw, sdirs, snrm = _surface_disk(surface, x0, rho, n_radial, n_angular)
    return LocalPatch(x0, float(rho), vpts, vw, spts, sw, sdirs, snrm, n_ball=len(ball))


def boundary_point(surface, theta, phi):
    return surface.point(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))


def distance_to_surface(surface, points, n_theta=96):
    """Distance from points to a dense sample of the surface (upper bound, sampling-limited)."""
    grid = SphereGrid.gauss(n_theta, 2 * n_theta)
    ys = surface.point(grid.theta, grid.phi)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        out[i] = np.sqrt(np.min(np.sum((ys - p) ** 2, axis=1)))
    return out


# ---------------------------------------------------------------------------
# Impedance
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ImpedanceField:
    """Real surface impedance on ``Gamma_I``, as a function of the boundary direction.

    ``model`` is ``"constant"`` (``parameters = (value,)``),
    ``"harmonic_expansion"`` (``parameters`` a sequence of ``(n, m, c)``
    added to ``base``) or ``"bump"`` (``parameters = (height, width,
    theta0, phi0)``: ``base + height * exp(-(angle / width)^2)``).
    """

    model: str
    parameters: tuple
    lambda0: float
    Lambda: float
    base: float = 0.0

    def values_at(self, directions):
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        if self.model == "constant":
            return np.full(len(directions), float(self.parameters[0]))
        theta, phi = angles_of(directions)
        if self.model == "harmonic_expansion":
            return self.base + real_sph_harm(tuple(self.parameters), theta, phi)
        if self.model == "bump":
            height, width, th0, ph0 = self.parameters
            c = unit_vectors(th0, ph0)
            unit = directions / np.linalg.norm(directions, axis=-1, keepdims=True)
            ang = np.arccos(np.clip(unit @ c, -1.0, 1.0))
            return self.base + height * np.exp(-((ang / width) ** 2))
        raise ArgumentOutOfRange(f"unknown impedance model {self.model!r}")

    def lipschitz_quotient(self, surface, mesh_dirs):
        """Largest ``|lambda(x) - lambda(y)| / |x - y|`` over node pairs, plus ``sup |lambda|``."""
        lam = self.values_at(mesh_dirs)
        pts = surface.radius_at(mesh_dirs)[:, None] * mesh_dirs
        dl = pdist(lam[:, None])
        dx = pdist(pts)
        quotient = float(np.max(dl / np.maximum(dx, 1e-300))) if len(dl) else 0.0
        return quotient + float(np.max(np.abs(lam)))

    def validate(self, surface, partition=None, n_theta=24):
        grid = SphereGrid.gauss(n_theta, 2 * n_theta)
        dirs = grid.directions
        if partition is not None and partition.has_dirichlet:
            dirs = dirs[~partition.on_dirichlet(grid.theta)]
        lam = self.values_at(dirs)
        if lam.min() < self.lambda0:
            raise ArgumentOutOfRange(
                f"impedance minimum {lam.min():.6g} below lambda0={self.lambda0:.6g}"
            )
        if self.lipschitz_quotient(surface, dirs) > self.Lambda:
            raise ArgumentOutOfRange(f"impedance C^0,1 norm exceeds Lambda={self.Lambda:.6g}")
        return self


def build_impedance(descriptor, surface=None, partition=None):
    model = descriptor.get("model", "constant")
    if model == "constant":
        params = (float(descriptor["value"]),)
    elif model == "harmonic_expansion":
        params = tuple((int(n), int(m), float(c)) for n, m, c in descriptor.get("coeffs", ()))
    elif model == "bump":
        params = tuple(float(descriptor[key]) for key in ("height", "width", "theta0", "phi0"))
    else:
        raise ArgumentOutOfRange(f"unknown impedance model {model!r}")
    imp = ImpedanceField(
        model=model,
        parameters=params,
        lambda0=float(descriptor.get("lambda0", 0.0)),
        Lambda=float(descriptor.get("Lambda", math.inf)),
        base=float(descriptor.get("base", 0.0)),
    )
    if surface is not None:
        imp.validate(surface, partition)
    return imp
