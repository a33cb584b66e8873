"""Special functions and kernels.

Spherical Bessel and Hankel functions by recurrence, Legendre polynomials,
orthonormal spherical harmonics (complex and real), the Helmholtz
fundamental solution and quadrature grids on the unit sphere.

Conventions
-----------
* ``h_n = j_n + i y_n`` is the spherical Hankel function of the first kind.
* Complex harmonics carry the Condon-Shortley phase and are orthonormal on
  the unit sphere; they are stored flat with index ``n*n + n + m``.
* The fundamental solution is ``exp(ik|x-y|) / (4 pi |x-y|)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ArgumentOutOfRange, CoincidentPoints

N_MAX_DEFAULT = 60
_RESCALE = 1e200
_SERIES_BELOW = 1e-6


def sh_index(n, m):
    """Flat position of ``Y_n^m`` in a harmonic table."""
    return n * n + n + m


def n_coeffs(L):
    return (L + 1) ** 2


def sh_degrees(L):
    """Degree ``n`` of every entry in a flat table of band limit ``L``."""
    return np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)


def sh_orders(L):
    return np.concatenate([np.arange(-n, n + 1) for n in range(L + 1)])


# ---------------------------------------------------------------------------
# Spherical Bessel / Hankel
# ---------------------------------------------------------------------------
def _downward_start(nmax, xmax):
    return int(max(nmax, np.ceil(xmax)) + 15 + 4 * np.ceil(np.cbrt(max(xmax, 1.0))))


def _jn_series(nmax, x):
    """Two-term Taylor series ``x^n / (2n+1)!! * (1 - x^2 / (2(2n+3)))`` for tiny ``x``."""
    n = np.arange(nmax + 1)[:, None]
    log_df = np.cumsum(np.log(2.0 * np.arange(nmax + 1) + 1.0))[:, None]
    with np.errstate(divide="ignore"):
        lead = np.exp(n * np.log(x)[None, :] - log_df)
    return lead * (1.0 - x * x / (2.0 * (2.0 * n + 3.0)))


def spherical_jn_all(nmax, x):
    """``j_0..j_nmax`` at ``x`` by Miller's downward recurrence.

    The trial sequence is normalised with ``sum (2n+1) j_n^2 = 1``; the
    overall sign is fixed from the closed forms of ``j_0`` and ``j_1``.
    Returns an array of shape ``(nmax + 1,) + x.shape``.
    """
    x_in = np.asarray(x, dtype=float)
    if np.any(x_in <= 0):
        raise ArgumentOutOfRange("spherical Bessel argument must be > 0")
    x = x_in.ravel()
    small = x < _SERIES_BELOW
    if np.any(small):
        out = np.empty((nmax + 1, x.size))
        out[:, small] = _jn_series(nmax, x[small])
        if np.any(~small):
            out[:, ~small] = spherical_jn_all(nmax, x[~small])
        return out.reshape((nmax + 1,) + x_in.shape)
    start = _downward_start(nmax, float(x.max()) if x.size else 1.0)
    f = np.zeros((start + 2,) + x.shape)
    f[start] = 1e-300
    for n in range(start, 0, -1):
        f[n - 1] = (2 * n + 1) / x * f[n] - f[n + 1]
        big = np.abs(f[n - 1]) > _RESCALE
        if np.any(big):
            f[:, big] /= _RESCALE
    scale = np.max(np.abs(f), axis=0)
    f = f / scale
    norm = np.sqrt(np.einsum("n...,n->...", f * f, 2.0 * np.arange(start + 2) + 1.0))
    f = f / norm
    j0 = np.sin(x) / x
    j1 = np.sin(x) / x**2 - np.cos(x) / x
    use0 = np.abs(j0) >= np.abs(j1)
    sign = np.where(use0, np.sign(j0) * np.sign(f[0]), np.sign(j1) * np.sign(f[1]))
    return (f[: nmax + 1] * sign).reshape((nmax + 1,) + x_in.shape)


def spherical_yn_all(nmax, x):
    """``y_0..y_nmax`` by upward recurrence (stable direction for ``y``)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ArgumentOutOfRange("spherical Bessel argument must be > 0")
    y = np.empty((nmax + 1,) + x.shape)
    y[0] = -np.cos(x) / x
    if nmax >= 1:
        y[1] = -np.cos(x) / x**2 - np.sin(x) / x
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, nmax):
            y[n + 1] = (2 * n + 1) / x * y[n] - y[n - 1]
    return y


def _derivative(f, x, f_next):
    """Derivatives from ``f_n' = f_{n-1} - (n+1)/x f_n`` and ``f_0' = -f_1``."""
    nmax = f.shape[0] - 1
    d = np.empty_like(f)
    d[0] = -(f[1] if nmax >= 1 else f_next)
    n = np.arange(1, nmax + 1).reshape((-1,) + (1,) * x.ndim)
    with np.errstate(over="ignore", invalid="ignore"):
        d[1:] = f[:-1] - (n + 1) / x * f[1:]
    return d


def spherical_bessel_all(nmax, x):
    """``(j, j', h, h')`` for orders ``0..nmax``, each shaped ``(nmax+1,) + x.shape``."""
    x = np.asarray(x, dtype=float)
    j = spherical_jn_all(nmax + 1, x)
    y = spherical_yn_all(nmax + 1, x)
    jp = _derivative(j, x, None)[: nmax + 1]
    yp = _derivative(y, x, None)[: nmax + 1]
    j, y = j[: nmax + 1], y[: nmax + 1]
    return j, jp, j + 1j * y, jp + 1j * yp


def spherical_hankel1(nmax, x):
    """``(h, h')`` for orders ``0..nmax``."""
    _, _, h, hp = spherical_bessel_all(nmax, x)
    return h, hp


@dataclass(frozen=True)
class RadialBundle:
    n: int
    x: float
    j: complex
    jp: complex
    h: complex
    hp: complex

    @property
    def wronskian(self):
        return self.j * self.hp - self.jp * self.h


def radial_bundle(n, x, n_max=N_MAX_DEFAULT):
    """Spherical Bessel ``j_n`` and Hankel ``h_n`` with derivatives at real ``x > 0``."""
    if not 0 <= n <= n_max:
        raise ArgumentOutOfRange(f"order n={n} outside [0, {n_max}]")
    if not x > 0:
        raise ArgumentOutOfRange(f"argument x={x} must be positive")
    j, jp, h, hp = spherical_bessel_all(n, np.array(float(x)))
    return RadialBundle(n, float(x), complex(j[n]), complex(jp[n]), complex(h[n]), complex(hp[n]))


# ---------------------------------------------------------------------------
# Legendre polynomials and spherical harmonics
# ---------------------------------------------------------------------------
def legendre_all(nmax, t):
    """``P_0..P_nmax`` at ``t`` by the three-term recurrence."""
    t = np.asarray(t, dtype=float)
    P = np.empty((nmax + 1,) + t.shape)
    P[0] = 1.0
    if nmax >= 1:
        P[1] = t
    for n in range(1, nmax):
        P[n + 1] = ((2 * n + 1) * t * P[n] - n * P[n - 1]) / (n + 1)
    return P


def legendre_p(n, t):
    t = np.asarray(t, dtype=float)
    if n < 0:
        raise ArgumentOutOfRange("degree must be non-negative")
    if np.any(np.abs(t) > 1.0 + 1e-14):
        raise ArgumentOutOfRange("Legendre argument must lie in [-1, 1]")
    out = legendre_all(n, t)[n]
    return float(out) if out.ndim == 0 else out


def assoc_legendre_table(L, theta):
    """Orthonormalised associated Legendre functions ``Pbar[n, m]``, ``0 <= m <= n <= L``.

    ``Y_n^m = Pbar[n, m] exp(i m phi)`` (Condon-Shortley phase included).
    Entries with ``m > n`` are zero.
    """
    theta = np.asarray(theta, dtype=float)
    x, s = np.cos(theta), np.sin(theta)
    P = np.zeros((L + 1, L + 1) + theta.shape)
    P[0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, L + 1):
        P[m, m] = -np.sqrt((2 * m + 1) / (2.0 * m)) * s * P[m - 1, m - 1]
    for m in range(L):
        P[m + 1, m] = np.sqrt(2 * m + 3) * x * P[m, m]
    for n in range(2, L + 1):
        m = np.arange(n - 1)
        a = np.sqrt((4.0 * n * n - 1) / (n * n - m * m))
        b = np.sqrt(((n - 1.0) ** 2 - m * m) / (4.0 * (n - 1) ** 2 - 1))
        shp = (-1,) + (1,) * theta.ndim
        P[n, : n - 1] = a.reshape(shp) * (x * P[n - 1, : n - 1] - b.reshape(shp) * P[n - 2, : n - 1])
    return P


def assoc_legendre_dtheta(P):
    """``d Pbar[n, m] / d theta`` from a table produced by :func:`assoc_legendre_table`."""
    L = P.shape[0] - 1
    dP = np.zeros_like(P)
    for n in range(1, L + 1):
        for m in range(n + 1):
            up = np.sqrt((n - m) * (n + m + 1.0)) * P[n, m + 1] if m < n else 0.0
            down_val = -P[n, 1] if m == 0 else P[n, m - 1]
            dP[n, m] = 0.5 * (up - np.sqrt((n + m) * (n - m + 1.0)) * down_val)
    return dP


def sph_harm_table(L, theta, phi):
    """All ``Y_n^m`` with ``n <= L`` at matching ``theta``/``phi`` arrays; shape ``(..., (L+1)^2)``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), theta.shape)
    P = assoc_legendre_table(L, theta)
    out = np.empty(theta.shape + (n_coeffs(L),), dtype=complex)
    eim = np.exp(1j * np.multiply.outer(phi, np.arange(L + 1)))
    for n in range(L + 1):
        for m in range(n + 1):
            y = P[n, m] * eim[..., m]
            out[..., sh_index(n, m)] = y
            if m:
                out[..., sh_index(n, -m)] = (-1) ** m * np.conj(y)
    return out


def sph_harm(n, m, theta, phi):
    """Orthonormal complex spherical harmonic ``Y_n^m(theta, phi)``."""
    if n < 0 or abs(m) > n:
        raise ArgumentOutOfRange(f"invalid (n, m) = ({n}, {m})")
    out = sph_harm_table(n, theta, phi)[..., sh_index(n, m)]
    return complex(out) if np.ndim(out) == 0 else out


def real_sph_harm(terms, theta, phi, derivatives=False):
    """Evaluate ``sum c * R_n^m`` for real orthonormal harmonics ``R_n^m``.

    ``terms`` is a sequence of ``(n, m, c)``; ``m < 0`` selects the sine
    harmonic. With ``derivatives=True`` also returns ``d/dtheta`` and
    ``(1/sin theta) d/dphi`` (theta is kept a hair away from the poles for
    the latter).
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), theta.shape)
    val = np.zeros(theta.shape)
    if not terms:
        return (val, val.copy(), val.copy()) if derivatives else val
    L = max(n for n, _, _ in terms)
    th = np.clip(theta, 1e-10, np.pi - 1e-10) if derivatives else theta
    P = assoc_legendre_table(L, th)
    dP = assoc_legendre_dtheta(P) if derivatives else None
    d_th = np.zeros(theta.shape)
    d_ph = np.zeros(theta.shape)
    sin_th = np.sin(th)
    for n, m, c in terms:
        am = abs(m)
        if am > n:
            raise ArgumentOutOfRange(f"invalid real harmonic ({n}, {m})")
        norm = 1.0 if m == 0 else np.sqrt(2.0) * (-1) ** am
        if m >= 0:
            ang, dang = np.cos(am * phi), -am * np.sin(am * phi)
        else:
            ang, dang = np.sin(am * phi), am * np.cos(am * phi)
        val += c * norm * P[n, am] * ang
        if derivatives:
            d_th += c * norm * dP[n, am] * ang
            d_ph += c * norm * P[n, am] / sin_th * dang
    if derivatives:
        return val, d_th, d_ph
    return val


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------
def helmholtz_kernel(k, x, y, mode="value", normal=None):
    """Fundamental solution ``phi(x, y)`` or ``grad_y phi . nu_y``.

    ``k = 0`` gives the Laplace kernel ``1 / (4 pi |x - y|)``. Inputs
    broadcast over leading dimensions; the last axis holds coordinates.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    r = np.sqrt(np.sum(d * d, axis=-1))
    if np.any(r == 0.0):
        raise CoincidentPoints("kernel evaluated at coincident points")
    g = np.exp(1j * k * r) / (4.0 * np.pi * r)
    if mode == "value":
        return g
    if mode == "normal_derivative_y":
        if normal is None:
            raise ArgumentOutOfRange("normal_derivative_y requires the normal at y")
        # grad_y phi = phi * (ik - 1/r) * (y - x)/r
        cos_ = -np.sum(d * np.asarray(normal, dtype=float), axis=-1) / r
        return g * (1j * k - 1.0 / r) * cos_
    raise ArgumentOutOfRange(f"unknown kernel mode {mode!r}")


def plane_wave_coeffs(k, r, theta, N):
    """Partial sum ``sum_{n<=N} (2n+1) i^n j_n(kr) P_n(cos theta)`` of ``exp(ikr cos theta)``.

    Returns ``(partial_sum, tail_estimate)`` where the tail estimate sums the
    next 30 terms in absolute value (``|P_n| <= 1``).
    """
    if N < 0 or N > N_MAX_DEFAULT:
        raise ArgumentOutOfRange(f"truncation N={N} outside [0, {N_MAX_DEFAULT}]")
    kr = float(k) * float(r)
    if kr == 0.0:
        return 1.0 + 0.0j, 0.0
    nn = np.arange(N + 31)
    j = spherical_jn_all(N + 30, np.array(kr))
    P = legendre_all(N + 30, np.cos(theta))
    terms = (2 * nn + 1) * (1j ** nn) * j * P
    tail = float(np.sum((2 * nn[N + 1:] + 1) * np.abs(j[N + 1:])))
    return complex(np.sum(terms[: N + 1])), tail


# ---------------------------------------------------------------------------
# Quadrature on the unit sphere
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Tensor rule on the unit sphere: a polar-angle rule times a trapezoid rule in phi.

    ``theta_weights`` integrate ``f(theta) sin(theta) d theta`` over
    ``[0, pi]``; the solid-angle weight of a node is
    ``theta_weights[i] * 2 pi / n_phi``. Nodes are flattened theta-major.
    """

    theta_nodes: np.ndarray
    theta_weights: np.ndarray
    n_phi: int
    degree: int = field(default=-1)

    @classmethod
    def gauss(cls, n_theta, n_phi=None):
        t, w = np.polynomial.legendre.leggauss(n_theta)
        order = np.argsort(-t)
        n_phi = 2 * n_theta if n_phi is None else n_phi
        return cls(np.arccos(t[order]), w[order], n_phi, min(n_theta - 1, (n_phi - 1) // 2))

    def __post_init__(self):
        if self.degree < 0:
            object.__setattr__(self, "degree", min(len(self.theta_nodes) - 1, (self.n_phi - 1) // 2))

    @property
    def shape(self):
        return (len(self.theta_nodes), self.n_phi)

    @property
    def size(self):
        return len(self.theta_nodes) * self.n_phi

    @cached_property
    def phi_nodes(self):
        return 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi

    @cached_property
    def theta(self):
        return np.repeat(self.theta_nodes, self.n_phi)

    @cached_property
    def phi(self):
        return np.tile(self.phi_nodes, len(self.theta_nodes))

    @cached_property
    def weights(self):
        return np.repeat(self.theta_weights, self.n_phi) * (2.0 * np.pi / self.n_phi)

    @cached_property
    def directions(self):
        return unit_vectors(self.theta, self.phi)

    def same_as(self, other):
        return (
            self.n_phi == other.n_phi
            and len(self.theta_nodes) == len(other.theta_nodes)
            and np.array_equal(self.theta_nodes, other.theta_nodes)
            and np.array_equal(self.theta_weights, other.theta_weights)
        )

    def harmonics(self, L=None):
        L = self.degree if L is None else L
        return sph_harm_table(L, self.theta, self.phi)

    def projector(self, L=None):
        """Matrix mapping node values to harmonic coefficients of degree ``<= L``.

        Weighted least squares against the quadrature weights; on a
        Gauss-Legendre grid this is the exact discrete transform.
        """
        L = self.degree if L is None else L
        return _projector(self, L)

    def analysis(self, values, L=None):
        return self.projector(L) @ np.asarray(values)

    def synthesis(self, coeffs, theta=None, phi=None):
        coeffs = np.asarray(coeffs)
        L = int(round(np.sqrt(coeffs.shape[0]))) - 1
        if theta is None:
            theta, phi = self.theta, self.phi
        return sph_harm_table(L, theta, phi) @ coeffs

    def integrate(self, values):
        return np.asarray(values) @ self.weights


_PROJECTORS: dict = {}


def _projector(grid, L):
    key = (grid.theta_nodes.tobytes(), grid.theta_weights.tobytes(), grid.n_phi, L)
    T = _PROJECTORS.get(key)
    if T is None:
        Y = grid.harmonics(L)
        YhW = Y.conj().T * grid.weights
        G = YhW @ Y
        T = np.linalg.solve(G, YhW)
        if len(_PROJECTORS) > 16:
            _PROJECTORS.clear()
        _PROJECTORS[key] = T
    return T


def unit_vectors(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta) * np.ones_like(phi)], axis=-1)


def angles_of(v):
    """Polar and azimuthal angle of (not necessarily unit) vectors."""
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    theta = np.arccos(np.clip(v[..., 2] / r, -1.0, 1.0))
    phi = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2.0 * np.pi)
    return theta, phi
