"""Impedance reconstruction from far-field data.

Pipeline: noisy far field -> scattered field on a sphere of radius ``R1``
(truncated spherical-harmonic back-propagation) -> boundary traces
(regularised fundamental-solution fit) -> ``lambda = Re(i du/dnu / u)``
where ``|u|`` is not too small.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .errors import AllMasked, ArgumentOutOfRange, IllConditionedFit, RadiusInsideObstacle
from .scatter import FarFieldPattern
from .specfun import sh_degrees, spherical_hankel1

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------
def noise_generator(seed):
    """Counter-based stream (Philox) so every sweep point draws independently of the others."""
    if isinstance(seed, (tuple, list)):
        key = np.random.SeedSequence(list(seed)).generate_state(2, dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))
    return np.random.Generator(np.random.Philox(key=int(seed)))


def add_noise(pattern, eps, seed=0):
    """Add complex noise whose ``L^2(S^2)`` norm is exactly ``eps``."""
    if eps < 0:
        raise ArgumentOutOfRange("noise level must be non-negative")
    if eps == 0:
        return FarFieldPattern(pattern.grid, pattern.values.copy(), pattern.k, 0.0)
    rng = noise_generator(seed)
    n = pattern.values.shape[0]
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    z *= eps / math.sqrt(pattern.grid.integrate(np.abs(z) ** 2))
    return FarFieldPattern(pattern.grid, pattern.values + z, pattern.k, float(eps))


# ---------------------------------------------------------------------------
# Far field -> near field
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class NearFieldAnnulus:
    """Scattered field sampled on ``R1 * S^2`` (directions from ``grid``)."""

    radius: float
    grid: object
    values: np.ndarray
    n_used: int
    error_estimate: float
    k: float
    noise_level: float = 0.0

    @property
    def points(self):
        return self.radius * self.grid.directions


AMPLIFICATION_CAP = 1e6


def default_max_order(k, R1, degree):
    """Largest order whose back-propagation gain ``|k h_n(k R1)|`` stays below the cap.

    Keeps round-off in the pattern coefficients (``~1e-16``) from being
    amplified past ``~1e-10`` when the data are clean.
    """
    h, _ = spherical_hankel1(degree, np.array(k * R1))
    over = np.nonzero(np.abs(k * h) > AMPLIFICATION_CAP)[0]
    return int(max(over[0] - 1, 0)) if len(over) else degree


def truncation_order(k, R1, eps, n_max):
    """Largest ``n <= n_max`` with ``|k h_n(k R1)| eps <= sqrt(eps)``; ``n_max`` for clean data."""
    if eps == 0:
        return n_max
    h, _ = spherical_hankel1(n_max, np.array(k * R1))
    ok = np.abs(k * h) * eps <= math.sqrt(eps)
    bad = np.nonzero(~ok)[0]
    return int(bad[0] - 1) if len(bad) else n_max


def far_to_near(pattern, k, R1, rule="sqrt", surface=None, n_max=None):
    """Back-propagate a far-field pattern to the sphere of radius ``R1``.

    ``u^s(R1 x) = sum a_nm h_n(k R1) Y_n^m(x)`` with ``a_nm = k i^(n+1) g_nm``
    and ``g_nm`` the harmonic coefficients of the pattern. ``rule`` is
    ``"sqrt"`` (noise-adapted truncation) or an integer order.
    """
    if surface is not None and R1 <= surface.diameter:
        raise RadiusInsideObstacle(f"R1={R1} must exceed the obstacle diameter {surface.diameter:.4g}")
    grid = pattern.grid
    n_max = default_max_order(k, R1, grid.degree) if n_max is None else min(n_max, grid.degree)
    eps = pattern.noise_level
    if rule == "sqrt":
        N = truncation_order(k, R1, eps, n_max)
    else:
        N = int(rule)
        if not 0 <= N <= grid.degree:
            raise ArgumentOutOfRange(f"truncation {N} outside [0, {grid.degree}]")
    g = pattern.sh_coeffs[: (N + 1) ** 2]
    deg = sh_degrees(N)
    h, _ = spherical_hankel1(N, np.array(k * R1))
    a = k * (1j ** (deg + 1)) * g
    values = grid.synthesis(a * h[deg])
    amp2 = np.abs(k * h) ** 2
    est = math.sqrt(float(np.sum((2 * np.arange(N + 1) + 1) * amp2)) * eps**2 / (N + 1) ** 2)
    return NearFieldAnnulus(float(R1), grid, values, N, est, float(k), float(eps))


# ---------------------------------------------------------------------------
# Near field -> boundary
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    directions: np.ndarray
    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    u: np.ndarray
    dnu: np.ndarray
    rho: float
    error_estimate: float
    diagnostics: dict = field(default_factory=dict)


def fibonacci_directions(n):
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    a = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.stack([r * np.cos(a), r * np.sin(a), z], axis=-1)


def mfs_sources(surface, gamma_in, n_sources):
    q = fibonacci_directions(n_sources)
    return gamma_in * surface.radius_at(q)[:, None] * q


@lru_cache(maxsize=8)
def _mfs_svd(surface, gamma_in, n_sources, radius, grid, k):
    z = mfs_sources(surface, gamma_in, n_sources)
    x = radius * grid.directions
    d = np.linalg.norm(x[:, None, :] - z[None, :, :], axis=-1)
    A = np.exp(1j * k * d) / (4.0 * math.pi * d)
    sw = np.sqrt(grid.weights)
    U, s, Vh = np.linalg.svd(sw[:, None] * A, full_matrices=False)
    return z, U, s, Vh


def _residual(alpha, s, beta, perp2):
    f = alpha / (s * s + alpha)
    return math.sqrt(float(np.sum((f * np.abs(beta)) ** 2)) + perp2)


def near_to_boundary(near, mesh, wave, rho=0.0, gamma_in=0.7, n_sources=400, policy="morozov",
                     discrepancy_factor=1.0, alpha=None):
    """Continue the near field to the boundary with a regularised source fit.

    ``u^s(x) ~ sum_j c_j phi(x, z_j)`` with sources on the boundary shrunk
    radially by ``gamma_in``. Ridge parameter: fixed ``alpha``, or by the
    discrepancy principle (fit residual equal to ``discrepancy_factor``
    times the propagated-error estimate). Clean data uses a floor of
    ``(1e-13 sigma_max)^2``.

    Returns traces of the total field at mesh nodes of ``Gamma_I^rho``.
    """
    if not 0.0 < gamma_in < 1.0:
        raise ArgumentOutOfRange("source inflation factor must lie in (0, 1)")
    z, U, s, Vh = _mfs_svd(mesh.surface, float(gamma_in), int(n_sources), near.radius, near.grid, near.k)
    b = np.sqrt(near.grid.weights) * near.values
    beta = U.conj().T @ b
    perp2 = max(float(np.vdot(b, b).real - np.vdot(beta, beta).real), 0.0)
    alpha_floor = (1e-13 * s[0]) ** 2
    target = discrepancy_factor * near.error_estimate
    curve = [(a, _residual(a, s, beta, perp2)) for a in np.logspace(math.log10(alpha_floor), math.log10(s[0] ** 2), 27)]
    if alpha is None:
        if policy != "morozov":
            raise ArgumentOutOfRange(f"unknown regularisation policy {policy!r}")
        if target <= 0.0:
            alpha = alpha_floor
        else:
            lo = _residual(alpha_floor, s, beta, perp2)
            if lo > target:
                raise IllConditionedFit(
                    f"discrepancy {target:.3e} unreachable: floor residual {lo:.3e}", residual_curve=curve
                )
            hi_a = s[0] ** 2 * 1e6
            if _residual(hi_a, s, beta, perp2) < target:
                alpha = hi_a
            else:
                log_alpha = brentq(
                    lambda la: _residual(math.exp(la), s, beta, perp2) - target,
                    math.log(alpha_floor), math.log(hi_a), xtol=1e-10,
                )
                alpha = math.exp(log_alpha)
    c = Vh.conj().T @ (s / (s * s + alpha) * beta)
    residual = _residual(alpha, s, beta, perp2)

    mask = mesh.interior_impedance(rho)
    x, nu = mesh.nodes[mask], mesh.normals[mask]
    d = x[:, None, :] - z[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    g = np.exp(1j * near.k * r) / (4.0 * math.pi * r)
    us = g @ c
    dus = (g * (1j * near.k - 1.0 / r) * np.einsum("ijk,ik->ij", d, nu) / r) @ c
    u = us + wave.incident(x)
    dnu = dus + wave.incident_normal_derivative(x, nu)
    diag = {
        "alpha": float(alpha),
        "residual": residual,
        "discrepancy_target": float(target),
        "coefficient_norm": float(np.linalg.norm(c)),
        "n_sources": int(n_sources),
        "gamma_in": float(gamma_in),
        "residual_curve": [(float(a), float(v)) for a, v in curve],
    }
    return BoundaryTrace(
        directions=mesh.grid.directions[mask],
        nodes=x,
        normals=nu,
        weights=mesh.weights[mask],
        u=u,
        dnu=dnu,
        rho=float(rho),
        # RMS pointwise level of the propagated near-field error
        error_estimate=float(near.error_estimate) / math.sqrt(4.0 * math.pi),
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# Boundary -> impedance
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    """Recovered impedance per boundary node; ``lambda_hat`` is NaN where untrusted."""

    directions: np.ndarray
    weights: np.ndarray
    lambda_hat: np.ndarray
    mask: np.ndarray
    tau: float
    imag_max: float
    abs_u: np.ndarray


def default_threshold(trace):
    return max(10.0 * trace.error_estimate, 1e-3 * float(np.max(np.abs(trace.u))))


def recover_impedance(trace, tau=None):
    """``lambda = Re(i du/dnu / u)`` on nodes with ``|u| >= tau``."""
    tau = default_threshold(trace) if tau is None else float(tau)
    if not tau > 0.0:
        raise ArgumentOutOfRange("trust threshold must be positive")
    abs_u = np.abs(trace.u)
    mask = abs_u >= tau
    if not np.any(mask):
        raise AllMasked(f"no boundary node has |u| >= {tau:.3g}")
    u_t = trace.u[mask]
    assert np.all(np.abs(u_t) >= tau)
    q = 1j * trace.dnu[mask] / u_t
    lam = np.full(len(trace.u), np.nan)
    lam[mask] = q.real
    return ReconstructionResult(
        directions=trace.directions,
        weights=trace.weights,
        lambda_hat=lam,
        mask=mask,
        tau=tau,
        imag_max=float(np.max(np.abs(q.imag))),
        abs_u=abs_u,
    )


def impedance_error(lambda_true, result, norm="sup"):
    """``sup`` or quadrature ``L2`` norm of ``lambda_true - lambda_hat`` on trusted nodes.

    ``lambda_true`` is an impedance field, a constant or an array of nodal values.
    """
    if not np.any(result.mask):
        raise AllMasked("reconstruction has no trusted nodes")
    if hasattr(lambda_true, "values_at"):
        true = lambda_true.values_at(result.directions)
    else:
        true = np.broadcast_to(np.asarray(lambda_true, dtype=float), result.lambda_hat.shape)
    diff = (true - result.lambda_hat)[result.mask]
    if norm == "sup":
        return float(np.max(np.abs(diff)))
    if norm == "L2":
        return float(np.sqrt(np.sum(result.weights[result.mask] * diff**2)))
    raise ArgumentOutOfRange(f"unknown norm {norm!r}")


def reconstruct(pattern, mesh, wave, R1, rho=0.0, gamma_in=0.7, n_sources=400, tau=None,
                truncation="sqrt"):
    """Run far-to-near, near-to-boundary and impedance recovery on a (noisy) pattern."""
    near = far_to_near(pattern, wave.k, R1, rule=truncation, surface=mesh.surface)
    trace = near_to_boundary(near, mesh, wave, rho=rho, gamma_in=gamma_in, n_sources=n_sources)
    result = recover_impedance(trace, tau)
    return near, trace, result
