"""Polytropic gas closures in the compressibility scaling ``p = (p~(rho) - p~(1)) / eps**2``.

Everything here is a pure, vectorised function of its arguments.  Densities
are normalised so the reference state is ``rho = 1``; ``G`` always denotes the
squared speed ``|grad phi|**2`` and ``phi_f`` the potential of the external
force.

The enthalpy is normalised as ``h~(rho) = gamma * rho**(gamma-1) / (gamma-1)``
so that ``h~(1) = gamma / (gamma - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CavitationError

__all__ = [
    "GasModel",
    "DensityEval",
    "enthalpy",
    "enthalpy_inverse",
    "density_from_bernoulli",
    "truncated_density",
    "critical_speed",
    "mach",
    "pressure",
    "energy_density",
    "energy_density_difference",
    "truncation_knots",
    "ellipticity_coefficient",
]

# Gauss-Legendre rule used to integrate rho-hat across the blend branch.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class GasModel:
    """Polytropic gas ``p~ = rho**gamma`` with truncation parameters.

    ``theta`` is the Mach threshold where the subsonic truncation starts and
    ``epsilon0`` the reference compressibility used to place it.
    """

    gamma: float = 1.4
    epsilon: float = 0.1
    theta: float = 0.9
    epsilon0: float = 0.5

    def __post_init__(self):
        problems = []
        if not self.gamma > 1.0:
            problems.append(f"gamma must be > 1 (got {self.gamma})")
        if not 0.0 < self.theta < 1.0:
            problems.append(f"theta must lie in (0, 1) (got {self.theta})")
        if not 0.0 < self.epsilon0 < 1.0:
            problems.append(f"epsilon0 must lie in (0, 1) (got {self.epsilon0})")
        if not 0.0 <= self.epsilon <= self.epsilon0:
            problems.append(
                f"epsilon must satisfy 0 <= epsilon <= epsilon0 (got {self.epsilon}, epsilon0={self.epsilon0})"
            )
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def h1(self) -> float:
        """``h~(1)``."""
        return self.gamma / (self.gamma - 1.0)

    @property
    def compressible(self) -> bool:
        return self.epsilon > 0.0

    def with_epsilon(self, epsilon: float) -> "GasModel":
        return replace(self, epsilon=epsilon)

    # thin method wrappers so call sites can stay terse
    def density(self, G, phi_f=0.0):
        return density_from_bernoulli(G, phi_f, self)

    def truncated(self, G, phi_f=0.0):
        return truncated_density(G, phi_f, self)

    def mach(self, speed, rho):
        return mach(speed, rho, self)

    def pressure(self, rho):
        return pressure(rho, self)

    def sound_speed(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.epsilon == 0.0:
            return np.full_like(rho, np.inf)
        return np.sqrt(self.gamma * rho ** (self.gamma - 1.0)) / self.epsilon


@dataclass
class DensityEval:
    """Density together with its partial derivatives.

    ``drho_dG`` is the derivative with respect to the squared speed and
    ``drho_dphi`` with respect to the force potential.  ``truncated`` marks
    points where the subsonic truncation (blend or plateau) was used.
    """

    rho: np.ndarray
    drho_dG: np.ndarray
    drho_dphi: np.ndarray
    truncated: np.ndarray


def enthalpy(rho, gamma: float = 1.4):
    """``h~(rho) = gamma rho**(gamma-1) / (gamma-1)``; strictly increasing in ``rho``."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0.0):
        raise ValueError("enthalpy: density must be positive")
    out = gamma * rho ** (gamma - 1.0) / (gamma - 1.0)
    return out[()] if out.ndim == 0 else out


def enthalpy_inverse(h, gamma: float = 1.4):
    """Density with ``h~(rho) = h``.  Non-positive ``h`` means vacuum."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0.0):
        raise CavitationError("enthalpy_inverse: enthalpy must be positive (vacuum/cavitation)")
    out = ((gamma - 1.0) * h / gamma) ** (1.0 / (gamma - 1.0))
    return out[()] if out.ndim == 0 else out


def pressure(rho, gas: GasModel):
    """Scaled pressure ``(rho**gamma - 1) / eps**2``; for ``eps == 0`` the limit is 0."""
    rho = np.asarray(rho, dtype=float)
    if gas.epsilon == 0.0:
        return np.zeros_like(rho)
    return np.expm1(gas.gamma * np.log(rho)) / gas.epsilon**2


def mach(speed, rho, gas: GasModel):
    """Local Mach number ``eps |u| / sqrt(p~'(rho))``."""
    speed = np.asarray(speed, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0.0):
        raise ValueError("mach: density must be positive")
    if np.any(speed < 0.0):
        raise ValueError("mach: speed must be non-negative")
    out = gas.epsilon * speed / np.sqrt(gas.gamma * rho ** (gas.gamma - 1.0))
    return out[()] if out.ndim == 0 else out


def _mu2(theta, gamma):
    t2 = theta * theta
    return (gamma - 1.0) * t2 / (2.0 + (gamma - 1.0) * t2)


def _threshold_speed(theta, phi_f, epsilon, gamma):
    """Speed at which the Bernoulli-consistent Mach number equals ``theta``."""
    phi_f = np.asarray(phi_f, dtype=float)
    if epsilon == 0.0:
        return np.full_like(phi_f, np.inf)
    base = phi_f + gamma / (gamma - 1.0) / epsilon**2
    if np.any(base <= 0.0):
        raise ValueError("threshold speed undefined: phi_f + h(1) must be positive")
    return np.sqrt(_mu2(theta, gamma) * 2.0 * base)


def critical_speed(theta, phi_f, gas: GasModel):
    """Speed ``q_theta`` below which the flow has Mach number below ``theta``.

    ``theta = 1`` gives the critical (sonic) speed.  Returns ``inf`` for an
    incompressible gas.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"critical_speed: theta must lie in (0, 1] (got {theta})")
    out = _threshold_speed(theta, phi_f, gas.epsilon, gas.gamma)
    return out[()] if out.ndim == 0 else out


def truncation_knots(phi_f, gas: GasModel):
    """Lower/upper truncation speeds and their ``phi_f`` derivatives.

    Both knots are evaluated at ``epsilon0``; ``q_theta`` scales like
    ``1/epsilon`` so that is the infimum over ``(0, epsilon0]``.
    """
    phi_f = np.asarray(phi_f, dtype=float)
    theta_up = 0.5 * (gas.theta + 1.0)
    qlo = _threshold_speed(gas.theta, phi_f, gas.epsilon0, gas.gamma)
    qup = _threshold_speed(theta_up, phi_f, gas.epsilon0, gas.gamma)
    dqlo = _mu2(gas.theta, gas.gamma) / qlo
    dqup = _mu2(theta_up, gas.gamma) / qup
    return qlo, qup, dqlo, dqup


def _rho_from_qhat(qhat, gas: GasModel):
    """``h~^{-1}(h~(1) - eps**2 qhat / 2)`` and its derivative in ``qhat``."""
    gm1 = gas.gamma - 1.0
    kappa = gas.epsilon**2 * gm1 / (2.0 * gas.gamma)
    arg = 1.0 - kappa * qhat
    if np.any(arg <= 0.0):
        raise CavitationError(
            "Bernoulli law gives non-positive enthalpy (state beyond vacuum); "
            f"min argument {float(np.min(arg)):.3e}"
        )
    rho = np.exp(np.log1p(-kappa * qhat) / gm1)
    drho = -(gas.epsilon**2) * rho / (2.0 * gas.gamma * arg)
    return rho, drho


def density_from_bernoulli(G, phi_f, gas: GasModel) -> DensityEval:
    """Untruncated density ``h~^{-1}(eps**2 (2 phi_f - G)/2 + h~(1))``."""
    G, phi_f = np.broadcast_arrays(np.asarray(G, dtype=float), np.asarray(phi_f, dtype=float))
    rho, drho = _rho_from_qhat(G - 2.0 * phi_f, gas)
    return DensityEval(rho, drho * 1.0, drho * -2.0, np.zeros(rho.shape, dtype=bool))


def _smoothstep_terms(t):
    s = 1.0 - 3.0 * t**2 + 2.0 * t**3
    s1 = t - t**3 + 0.5 * t**4  # int_0^t s
    s2 = 0.5 * t**2 - 0.75 * t**4 + 0.4 * t**5  # int_0^t u s(u) du
    return s, s1, s2


def _qhat(G, phi_f, gas: GasModel):
    """Truncated ``q^2 - 2 phi_f`` and its partial derivatives.

    Below the lower knot this is exactly ``G - 2 phi_f``.  Across the blend
    ``d qhat / dG`` falls from 1 to 0 along a cubic smoothstep in ``q``, which
    keeps ``qhat`` monotone and C1 and holds the ellipticity coefficient above
    ``rho (1 - ((1+theta)/2)**2)``.  Beyond the upper knot ``qhat`` is constant.
    """
    q = np.sqrt(G)
    qlo, qup, dqlo, dqup = truncation_knots(phi_f, gas)
    h = qup - qlo
    low = q <= qlo
    t = np.clip((q - qlo) / h, 0.0, 1.0)
    s, s1, s2 = _smoothstep_terms(t)
    blend = qlo**2 - 2.0 * phi_f + 2.0 * h * qlo * s1 + 2.0 * h**2 * s2
    d_qlo = 2.0 * qlo + 2.0 * h * s1 - 2.0 * qlo * s - 2.0 * h * t * s
    d_h = 2.0 * qlo * s1 - 2.0 * qlo * t * s + 4.0 * h * s2 - 2.0 * h * t**2 * s
    qhat = np.where(low, G - 2.0 * phi_f, blend)
    dG = np.where(low, 1.0, s)
    dphi = np.where(low, -2.0, -2.0 + d_qlo * dqlo + d_h * (dqup - dqlo))
    return qhat, dG, dphi, ~low


def truncated_density(G, phi_f, gas: GasModel) -> DensityEval:
    """Density with the subsonic truncation; defined for every ``G >= 0``.

    Identical (bitwise) to :func:`density_from_bernoulli` for
    ``sqrt(G) <= q_theta`` and constant in ``G`` beyond the upper knot.
    """
    G, phi_f = np.broadcast_arrays(np.asarray(G, dtype=float), np.asarray(phi_f, dtype=float))
    qhat, dG, dphi, trunc = _qhat(G, phi_f, gas)
    rho, drho = _rho_from_qhat(qhat, gas)
    return DensityEval(rho, drho * dG, drho * dphi, trunc)


def ellipticity_coefficient(G, phi_f, gas: GasModel, truncate: bool = True):
    """``rho + 2 G drho/dG``, the smallest eigenvalue of the linearised operator."""
    ev = truncated_density(G, phi_f, gas) if truncate else density_from_bernoulli(G, phi_f, gas)
    return ev.rho + 2.0 * np.asarray(G, dtype=float) * ev.drho_dG


def _low_segment(a, b, phi_f, gas: GasModel):
    """``1/2 int_a^b rho(alpha) d alpha`` on the untruncated branch, cancellation-free."""
    if gas.epsilon == 0.0:
        return 0.5 * (b - a)
    gm1 = gas.gamma - 1.0
    kappa = gas.epsilon**2 * gm1 / (2.0 * gas.gamma)
    arg_a = 1.0 - kappa * (a - 2.0 * phi_f)
    dx = np.log1p(-kappa * (b - a) / arg_a)
    # rho^gamma = arg^(gamma/(gamma-1)) and d(rho^gamma)/dalpha = -eps^2 rho / 2
    rho_a_gamma = np.exp(gas.gamma / gm1 * np.log(arg_a))
    return -rho_a_gamma * np.expm1(gas.gamma / gm1 * dx) / gas.epsilon**2


def _blend_segment(a, b, phi_f, gas: GasModel):
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    total = np.zeros(np.broadcast(a, b, phi_f).shape)
    for x, w in zip(_GL_X, _GL_W):
        total = total + w * truncated_density(mid + half * x, phi_f, gas).rho
    return 0.5 * half * total


def energy_density_difference(G1, G0, phi_f, gas: GasModel):
    """``G_eps(G1, phi_f) - G_eps(G0, phi_f)`` where ``G_eps(G) = 1/2 int_0^G rho-hat``."""
    G1, G0, phi_f = np.broadcast_arrays(
        np.asarray(G1, dtype=float), np.asarray(G0, dtype=float), np.asarray(phi_f, dtype=float)
    )
    if gas.epsilon == 0.0:
        return 0.5 * (G1 - G0)
    qlo, qup, _, _ = truncation_knots(phi_f, gas)
    q1, q2 = qlo**2, qup**2
    out = _low_segment(np.minimum(G0, q1), np.minimum(G1, q1), phi_f, gas)
    b0, b1 = np.clip(G0, q1, q2), np.clip(G1, q1, q2)
    if np.any(b0 != b1):
        out = out + _blend_segment(b0, b1, phi_f, gas)
    p0, p1 = np.maximum(G0, q2), np.maximum(G1, q2)
    if np.any(p0 != p1):
        plateau = truncated_density(q2 * (1.0 + 1e-12) + 1e-300, phi_f, gas).rho
        out = out + 0.5 * plateau * (p1 - p0)
    return out


def energy_density(G, phi_f, gas: GasModel):
    """``G_eps(G, phi_f) = 1/2 int_0^G rho-hat(alpha, phi_f) d alpha``."""
    return energy_density_difference(G, np.zeros_like(np.asarray(G, dtype=float)), phi_f, gas)
