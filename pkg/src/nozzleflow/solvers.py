"""Incompressible and subsonic compressible potential-flow solvers.

The compressible problem is solved by damped Picard iteration (frozen
density coefficient).  Each step is a symmetric positive-definite linear
solve.  Dirichlet data fixes the potential on the inlet section, walls
carry the natural slip condition and the outlet a Neumann datum.

Two outlet treatments are available (``SolverConfig.outlet``):

``"flux"`` (default)
    ``int_{Sigma_L} w g psi`` with the mass-flux density
    ``g(r) = rho(q_out^2, phi_f(r, L)) q_out`` of the parallel flow that
    carries ``m0`` under the outlet force (``g = m0/|Sigma_L|`` without
    force).  This is a natural boundary term of an energy, so Picard is an
    energy-descent method and the discrete mass flux equals ``m0``.
``"velocity"``
    ``int_{Sigma_L} w rho-hat (m0/|Sigma_L|) psi`` with the density frozen
    at the previous iterate, i.e. the outlet velocity is prescribed and the
    achieved flux is ``m0 <rho-hat>_outlet``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.optimize import brentq, root_scalar

from .errors import ChokingError, ConvergenceError, ForceFieldError, MeshError, SubsonicityError
from .fem import _dshape, _shape, discretize, pcg
from .force_field import ForceField
from .gas_model import (
    GasModel,
    critical_speed,
    density_from_bernoulli,
    energy_density_difference,
    truncated_density,
)
from .geometry import MeridianMesh, build_mesh, build_profile, section_area

__all__ = [
    "SolverConfig",
    "FlowState",
    "UniformState",
    "solve_incompressible",
    "solve_compressible",
    "solve_linear",
    "discrete_energy",
    "uniform_cylinder_state",
    "solve_cylinder_reference",
    "uniform_state_on_mesh",
    "station_fluxes",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    linear_tol: float = 1e-12
    picard_tol: float = 1e-10
    max_picard: int = 200
    damping: float = 1.0
    linear_solver: str = "cg"
    outlet: str = "flux"
    inlet_potential: float = 0.0
    max_linear_iter: int | None = None

    def __post_init__(self):
        problems = []
        if not self.linear_tol > 0.0:
            problems.append(f"SolverConfig linear_tol must be positive (got {self.linear_tol})")
        if not self.picard_tol > 0.0:
            problems.append(f"SolverConfig picard_tol must be positive (got {self.picard_tol})")
        if not 0.0 < self.damping <= 1.0:
            problems.append(f"SolverConfig damping must lie in (0, 1] (got {self.damping})")
        if int(self.max_picard) < 1:
            problems.append(f"SolverConfig max_picard must be >= 1 (got {self.max_picard})")
        if self.linear_solver not in ("cg", "direct"):
            problems.append(f"SolverConfig linear_solver must be 'cg' or 'direct' (got {self.linear_solver!r})")
        if self.outlet not in ("flux", "velocity"):
            problems.append(f"SolverConfig outlet must be 'flux' or 'velocity' (got {self.outlet!r})")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class FlowState:
    """Discrete flow field on a mesh.

    ``velocity``, ``density``, ``mach`` and ``pressure`` are per-cell values
    at cell centres; ``potential`` is nodal.  ``rho_gp`` is the (truncated)
    density at the Gauss points used by the flux functional.
    """

    mesh: MeridianMesh
    potential: np.ndarray
    velocity: np.ndarray
    density: np.ndarray
    mach: np.ndarray
    pressure: np.ndarray
    truncated: np.ndarray
    rho_gp: np.ndarray
    achieved_flux: float
    gas: GasModel | None
    force: ForceField
    m0: float
    diagnostics: dict = field(default_factory=dict)
    homogeneous: np.ndarray | None = field(default=None, repr=False)

    @property
    def compressible(self) -> bool:
        return self.gas is not None and self.gas.compressible

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.velocity[:, 0], self.velocity[:, 1])

    @property
    def floor(self) -> float:
        """Absolute velocity accuracy implied by the solver tolerances."""
        return float(self.diagnostics.get("floor", 0.0))

    def velocity_at(self, r, z) -> np.ndarray:
        """Velocity of the bilinear potential at arbitrary points inside the mesh."""
        return _velocity_at(self.mesh, self.potential, r, z)


@dataclass(frozen=True)
class UniformState:
    """Uniform axial flow in the unit cylinder with a radial force."""

    qbar: float
    r: np.ndarray
    rho: np.ndarray
    flux_ceiling: float
    residual: float


# -- linear algebra ---------------------------------------------------------------


def _inlet_nodes(mesh):
    return mesh.station_nodes(0)


def solve_linear(mesh, coef_gp, rhs, dirichlet_values=None, config=SolverConfig(), x0=None):
    """Solve ``K(coef) x = rhs`` with ``x`` fixed on the inlet nodes.

    ``dirichlet_values`` defaults to zero.  Returns ``(x, info)``.
    """
    disc = discretize(mesh)
    K = disc.stiffness(coef_gp)
    n = mesh.n_nodes
    fixed = _inlet_nodes(mesh)
    free = np.setdiff1d(np.arange(n), fixed)
    x = np.zeros(n)
    if dirichlet_values is not None:
        x[fixed] = dirichlet_values
    b = rhs[free] - K[free][:, fixed] @ x[fixed]
    Kff = K[free][:, free].tocsr()
    if config.linear_solver == "direct":
        x[free] = spla.splu(Kff.tocsc()).solve(b)
        res = float(np.linalg.norm(b - Kff @ x[free]) / max(np.linalg.norm(b), 1e-300))
        info = {"iterations": 0, "residual": res, "history": [], "eig_min": np.nan, "eig_max": np.nan}
    else:
        guess = None if x0 is None else x0[free]
        x[free], info = pcg(Kff, b, x0=guess, rtol=config.linear_tol, maxiter=config.max_linear_iter)
    return x, info


# -- state construction -------------------------------------------------------------


def _gp_force(mesh, force):
    disc = discretize(mesh)
    return force.eval(disc.gp[..., 0], disc.gp[..., 1])


def _inlet_layer_average(mesh, values):
    disc = discretize(mesh)
    layer = mesh.cell_station == 0
    w = disc.W0[layer]
    return float(np.add.reduce(w * values[layer]) / np.add.reduce(w))


def station_fluxes(mesh, potential, rho_gp):
    """Discrete mass flux through stations ``1..n_z`` (index 0 is station 1)."""
    disc = discretize(mesh)
    grad = disc.grad_gp(potential)
    return disc.layer_flux(rho_gp[..., None] * grad)


def _build_state(mesh, potential, u, gas, force, m0, rho_gp, diagnostics):
    disc = discretize(mesh)
    vel = disc.grad_center(u)
    speed2 = vel[:, 0] ** 2 + vel[:, 1] ** 2
    c = disc.center
    phi_c = force.eval(c[:, 0], c[:, 1])
    if gas is not None and gas.compressible:
        dens = truncated_density(speed2, phi_c, gas)
        rho = dens.rho
        trunc = dens.truncated.copy()
        mach = gas.mach(np.sqrt(speed2), rho)
        pressure = gas.pressure(rho)
    else:
        rho = np.ones(mesh.n_cells)
        trunc = np.zeros(mesh.n_cells, dtype=bool)
        mach = np.zeros(mesh.n_cells)
        pbar = phi_c - 0.5 * speed2
        pressure = pbar - _inlet_layer_average(mesh, pbar)
    fluxes = station_fluxes(mesh, u, rho_gp)
    diagnostics = dict(diagnostics)
    diagnostics["station_flux"] = fluxes
    scale = float(np.sqrt(speed2.max())) if speed2.size else 0.0
    diagnostics.setdefault("floor", 0.0)
    diagnostics["floor"] = diagnostics["floor"] * max(scale, 1.0)
    return FlowState(
        mesh=mesh,
        potential=potential,
        velocity=vel,
        density=rho,
        mach=mach,
        pressure=pressure,
        truncated=trunc,
        rho_gp=rho_gp,
        achieved_flux=float(fluxes[-1]),
        gas=gas,
        force=force,
        m0=float(m0),
        diagnostics=diagnostics,
    )


def _outlet_datum(mesh, m0):
    return m0 / section_area(mesh, mesh.L)


def outlet_flux_density(mesh, gas, force, m0):
    """Outlet mass-flux density at the outlet Gauss points (flux-mode datum).

    ``q_out`` solves ``sum w rho(q^2, phi_f) q = m0`` with the same edge
    quadrature used for the load, so the discrete flux is exactly ``m0``.
    """
    disc = discretize(mesh)
    shape = disc.W_out.shape
    if gas is None or not gas.compressible:
        return np.full(shape, _outlet_datum(mesh, m0)), _outlet_datum(mesh, m0)
    phi = force.eval(disc.out_pos[..., 0], disc.out_pos[..., 1]) * np.ones(shape)
    W = disc.W_out

    def F(q):
        return float(np.add.reduce((W * density_from_bernoulli(q * q, phi, gas).rho * q).ravel())) - m0

    q_sonic = float(np.min(critical_speed(1.0, phi, gas)))
    if F(q_sonic) <= 0.0:
        raise ChokingError(
            f"m0={m0:.6g} is at or above the sonic flux ceiling {F(q_sonic) + m0:.6g} of the outlet section"
        )
    q = brentq(F, 0.0, q_sonic, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return density_from_bernoulli(q * q, phi, gas).rho * q, q


def solve_incompressible(mesh, m0, force=None, config=SolverConfig()):
    """Potential flow with ``rho = 1``: Laplace with slip walls and prescribed outlet flux.

    ``force`` does not affect the velocity; it only enters the Bernoulli
    pressure ``phi_f - |u|^2/2 + C`` (``C`` makes the inlet-layer average zero).
    """
    if not m0 > 0.0:
        raise ValueError(f"mass flux m0 must be positive (got {m0})")
    force = force if force is not None else ForceField()
    disc = discretize(mesh)
    g = _outlet_datum(mesh, m0)
    rhs = disc.outlet_load(np.full(disc.W_out.shape, g))
    ones = np.ones(disc.W.shape)
    u, info = solve_linear(mesh, ones, rhs, config=config)
    diag = {"iterations": 0, "linear": [info], "history": {}, "floor": _linear_floor(config, info),
            "outlet_datum": g, "eig_min": info["eig_min"], "eig_max": info["eig_max"]}
    state = _build_state(mesh, u + config.inlet_potential, u, None, force, m0, ones, diag)
    state.homogeneous = u
    return state


def _linear_floor(config, info):
    # relative velocity accuracy; the eigenvalue estimates stay diagnostics only
    return config.linear_tol


def _weighted_norm(disc, grad):
    return float(np.sqrt(np.add.reduce((disc.W[..., None] * grad * grad).ravel())))


def _energy_step(disc, G_new, G_old, phi_gp, gas, b, du):
    """Change of ``int w G_eps(|grad u|^2) - b.u`` between two iterates."""
    bulk = energy_density_difference(G_new, G_old, phi_gp, gas)
    return float(np.add.reduce((disc.W * bulk).ravel()) - np.add.reduce(b * du))


def solve_compressible(mesh, gas, force=None, m0=np.pi, init=None, config=SolverConfig()):
    """Subsonic compressible potential flow by damped Picard iteration.

    Starts from ``init`` (default: the incompressible solution).  Raises
    :class:`SubsonicityError` if the converged field still uses the
    truncated density anywhere, and :class:`ConvergenceError` when
    ``max_picard`` is exhausted.
    """
    force = force if force is not None else ForceField()
    if not gas.compressible:
        state = solve_incompressible(mesh, m0, force, config)
        state.gas = gas
        return state
    if not m0 > 0.0:
        raise ValueError(f"mass flux m0 must be positive (got {m0})")
    if init is None:
        init = solve_incompressible(mesh, m0, force, config)
    elif init.mesh is not mesh and init.potential.shape != (mesh.n_nodes,):
        raise MeshError("initial state lives on a different mesh")
    disc = discretize(mesh)
    phi_gp = _gp_force(mesh, force)
    g = _outlet_datum(mesh, m0)
    g_flux, q_out = outlet_flux_density(mesh, gas, force, m0)
    inlet = _inlet_nodes(mesh)
    u = init.homogeneous
    if u is None:
        u = init.potential - init.potential[inlet[0]]
    base = solve_incompressible(mesh, m0, force, config) if init.compressible else init
    ubase = base.homogeneous if base.homogeneous is not None else base.potential - base.potential[inlet[0]]
    b_flux = disc.outlet_load(g_flux)

    grad = disc.grad_gp(u)
    G = np.einsum("cgd,cgd->cg", grad, grad)
    omega = config.damping
    hist = {"update": [], "energy": [], "damping": [], "linear_iterations": []}
    eig = (np.nan, np.nan)
    converged = False
    it = 0
    for it in range(1, config.max_picard + 1):
        dens = truncated_density(G, phi_gp, gas)
        if config.outlet == "flux":
            rhs = b_flux
        else:
            go = disc.grad_outlet(u)
            Go = np.einsum("cgd,cgd->cg", go, go)
            po = force.eval(disc.out_pos[..., 0], disc.out_pos[..., 1])
            rhs = disc.outlet_load(truncated_density(Go, po, gas).rho * g)
        u_new, info = solve_linear(mesh, dens.rho, rhs, config=config, x0=u)
        hist["linear_iterations"].append(info["iterations"])
        eig = (info["eig_min"], info["eig_max"])
        du_full = u_new - u
        while True:
            trial = u + omega * du_full
            grad_t = disc.grad_gp(trial)
            G_t = np.einsum("cgd,cgd->cg", grad_t, grad_t)
            if config.outlet != "flux":
                break
            dE = _energy_step(disc, G_t, G, phi_gp, gas, b_flux, trial - u)
            scale = float(np.add.reduce((disc.W * G).ravel()))
            if dE <= 1e-13 * max(scale, 1.0) or omega < 2.0**-10:
                break
            omega *= 0.5
            log.info("energy increased by %.3e; damping halved to %g", dE, omega)
        if omega < 2.0**-10:
            raise ConvergenceError("damping collapsed: Picard step does not decrease the energy", history=hist)
        update = _weighted_norm(disc, grad_t - grad) / max(_weighted_norm(disc, grad_t), 1e-300)
        u, grad, G = trial, grad_t, G_t
        hist["update"].append(update)
        hist["damping"].append(omega)
        hist["energy"].append(_energy_value(disc, grad, disc.grad_gp(ubase), phi_gp, gas))
        if update < config.picard_tol:
            converged = True
            break

    dens = truncated_density(G, phi_gp, gas)
    diag = {
        "iterations": it,
        "history": hist,
        "floor": max(config.picard_tol, _linear_floor(config, {"eig_min": eig[0], "eig_max": eig[1]})),
        "outlet_datum": g,
        "outlet_speed": q_out,
        "eig_min": eig[0],
        "eig_max": eig[1],
        "energy": hist["energy"][-1] if hist["energy"] else 0.0,
    }
    state = _build_state(mesh, u + config.inlet_potential, u, gas, force, m0, dens.rho, diag)
    state.homogeneous = u
    state.truncated |= np.any(dens.truncated, axis=1)
    if not converged:
        raise ConvergenceError(
            f"Picard iteration did not reach picard_tol={config.picard_tol:g} in {config.max_picard} steps "
            f"(last update {hist['update'][-1]:.3e})",
            history=hist,
            state=state,
        )
    if np.any(state.truncated) or np.max(state.mach) >= 1.0:
        n = int(np.count_nonzero(state.truncated))
        raise SubsonicityError(
            f"subsonic truncation active on {n} cells at convergence (max Mach {np.max(state.mach):.4f}); "
            f"epsilon={gas.epsilon} is too large for this scenario",
            state=state,
        )
    return state


# -- energy ---------------------------------------------------------------------------


def _energy_value(disc, grad, grad_base, phi_gp, gas):
    G = np.einsum("cgd,cgd->cg", grad, grad)
    Gb = np.einsum("cgd,cgd->cg", grad_base, grad_base)
    lin = np.einsum("cgd,cgd->cg", grad_base, grad - grad_base)
    bulk = energy_density_difference(G, Gb, phi_gp, gas) - lin
    total = float(np.add.reduce((disc.W * bulk).ravel()))
    if gas.compressible:
        total /= gas.epsilon**4
    return total


def discrete_energy(state: FlowState, gas: GasModel, force: ForceField, base: FlowState) -> float:
    """``eps^-4 int w [G_eps(|grad phi|^2) - G_eps(|grad phi_bar|^2) - grad phi_bar . grad(phi - phi_bar)]``.

    For ``eps = 0`` the (unscaled) value ``int w |grad(phi - phi_bar)|^2 / 2``
    is returned.
    """
    if state.mesh is not base.mesh and (
        state.mesh.nodes.shape != base.mesh.nodes.shape or not np.array_equal(state.mesh.nodes, base.mesh.nodes)
    ):
        raise ValueError("discrete_energy: state and base must share a mesh")
    disc = discretize(state.mesh)
    phi_gp = _gp_force(state.mesh, force)
    return _energy_value(disc, disc.grad_gp(state.potential), disc.grad_gp(base.potential), phi_gp, gas)


# -- uniform cylinder states --------------------------------------------------------------

_XG, _WG = np.polynomial.legendre.leggauss(64)
_RQ = 0.5 * (_XG + 1.0)
_WQ = 0.5 * _WG


def _section_weight(symmetry):
    return 2.0 * np.pi * _RQ if symmetry == "axisymmetric" else np.ones_like(_RQ)


def uniform_cylinder_state(gas: GasModel, radial_force: ForceField | None = None, m0=np.pi,
                           symmetry="axisymmetric") -> UniformState:
    """Uniform axial speed ``qbar`` carrying flux ``m0`` through the unit cylinder.

    Solves ``F(q) = int_0^1 w(r) rho(q^2, phi_bar(r)) q dr - m0 = 0`` on the
    subsonic branch by Newton's method (bisection fallback).
    """
    radial_force = radial_force if radial_force is not None else ForceField()
    if not radial_force.is_radial:
        raise ForceFieldError("uniform_cylinder_state needs a z-independent (radial) force")
    if not m0 > 0.0:
        raise ValueError(f"mass flux m0 must be positive (got {m0})")
    w = _section_weight(symmetry) * _WQ
    area = float(np.sum(w))
    phi = radial_force.eval(_RQ, 0.0) * np.ones_like(_RQ)
    if not gas.compressible:
        q = m0 / area
        return UniformState(q, _RQ.copy(), np.ones_like(_RQ), np.inf, 0.0)

    def flux(q):
        return float(np.sum(w * density_from_bernoulli(q * q, phi, gas).rho * q))

    def F(q):
        return flux(q) - m0

    def dF(q):
        d = density_from_bernoulli(q * q, phi, gas)
        return float(np.sum(w * (d.rho + 2.0 * q * q * d.drho_dG)))

    q_sonic = float(np.min(critical_speed(1.0, phi, gas)))
    ceiling = flux(q_sonic)
    if m0 >= ceiling:
        raise ChokingError(f"m0={m0:.6g} is at or above the sonic flux ceiling {ceiling:.6g}; no subsonic uniform state")
    try:
        sol = root_scalar(F, fprime=dF, x0=min(m0 / area, 0.5 * q_sonic), method="newton", xtol=1e-15, rtol=1e-15)
        q = sol.root
        if not (sol.converged and 0.0 < q < q_sonic):
            raise RuntimeError
    except (RuntimeError, ZeroDivisionError):
        q = brentq(F, 0.0, q_sonic, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    res = abs(F(q))
    if res > 1e-12 * m0:
        raise ConvergenceError(f"uniform state residual {res:.3e} exceeds 1e-12 m0")
    rho = density_from_bernoulli(q * q, phi, gas).rho
    return UniformState(float(q), _RQ.copy(), rho, ceiling, res)


def uniform_state_on_mesh(mesh, gas, force, qbar, m0=None):
    """FlowState with potential ``qbar (z + L)`` (for initial guesses and references)."""
    force = force if force is not None else ForceField()
    disc = discretize(mesh)
    u = qbar * (mesh.nodes[:, 1] + mesh.L)
    grad = disc.grad_gp(u)
    G = np.einsum("cgd,cgd->cg", grad, grad)
    if gas is not None and gas.compressible:
        rho_gp = truncated_density(G, _gp_force(mesh, force), gas).rho
    else:
        rho_gp = np.ones(G.shape)
    m = m0 if m0 is not None else qbar * section_area(mesh, mesh.L)
    return _build_state(mesh, u, u, gas, force, m, rho_gp, {"floor": 0.0})


def solve_cylinder_reference(gas, force=None, m0=np.pi, L=10.0, config=SolverConfig(), n_s=8, h_z=0.25,
                             symmetry="axisymmetric"):
    """Compressible flow in the straight unit cylinder under ``force``."""
    if not m0 > 0.0:
        raise ValueError(f"mass flux m0 must be positive (got {m0})")
    mesh = build_mesh(build_profile("cylinder"), L, n_s, h_z, symmetry)
    return solve_compressible(mesh, gas, force, m0, config=config)


# -- point evaluation ------------------------------------------------------------------------


def _velocity_at(mesh, potential, r, z):
    r, z = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(z, dtype=float))
    shape = r.shape
    r, z = r.ravel(), z.ravel()
    tol = 1e-9
    if np.any(np.abs(z) > mesh.L + tol):
        from .errors import RangeError

        raise RangeError("point outside the axial extent of the mesh")
    j = np.clip(np.floor((z + mesh.L) / mesh.h_z).astype(int), 0, mesh.n_z - 1)
    f1 = mesh.profile.f1(z)
    f2 = mesh.profile.f2(z)
    s = (r - f2) / (f1 - f2)
    if np.any(s < -1e-6) or np.any(s > 1 + 1e-6):
        from .errors import RangeError

        raise RangeError("point outside the nozzle")
    i = np.clip(np.searchsorted(mesh.s, s, side="right") - 1, 0, mesh.n_s - 1)
    out = np.empty((r.size, 2))
    for k in range(r.size):
        jj, ii = j[k], i[k]
        for _ in range(4):
            cell = jj * mesh.n_s + ii
            xy = mesh.nodes[mesh.cells[cell]]
            xi = eta = 0.0
            for _ in range(30):
                N = _shape(xi, eta)
                dN = _dshape(xi, eta)
                res = N @ xy - (r[k], z[k])
                jac = dN.T @ xy  # jac[k, d]
                step = np.linalg.solve(jac.T, res)
                xi -= step[0]
                eta -= step[1]
                if abs(step[0]) + abs(step[1]) < 1e-14:
                    break
            if xi < -1 - 1e-9 and ii > 0:
                ii -= 1
            elif xi > 1 + 1e-9 and ii < mesh.n_s - 1:
                ii += 1
            else:
                break
        dN = _dshape(xi, eta)
        jac = dN.T @ xy
        B = np.linalg.solve(jac, dN.T).T
        out[k] = potential[mesh.cells[cell]] @ B
    return out.reshape(shape + (2,))
