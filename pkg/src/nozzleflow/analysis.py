"""Post-processing and verification studies on solver output.

Windowed deviations ``D(T)`` are measured on the cells whose centres lie in
``[T, T+1]``, both as a maximum over cell centres (the primary norm) and as
a Gauss-quadrature ``L2`` norm.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import (
    ChokingError,
    InsufficientDataError,
    MeshError,
    RangeError,
    SubsonicityError,
)
from .fem import discretize
from .force_field import ForceField
from .gas_model import GasModel
from .geometry import AXISYMMETRIC, NozzleProfile, build_mesh
from .solvers import (
    FlowState,
    SolverConfig,
    solve_compressible,
    solve_incompressible,
    uniform_cylinder_state,
    uniform_state_on_mesh,
)

__all__ = [
    "FloorWarning",
    "RateFit",
    "SlopeFit",
    "StudyReport",
    "Scenario",
    "mass_flux",
    "flux_deviation",
    "window_deviation",
    "fit_rate",
    "far_field_rate",
    "loglog_slope",
    "low_mach_study",
    "truncation_study",
    "uniqueness_probe",
    "bernoulli_and_pressure",
    "worker_count",
    "mms_study",
]

WORKERS_ENV = "NOZZLEFLOW_WORKERS"


class FloorWarning(UserWarning):
    """A window deviation is too close to the solver floor to be used in a fit."""


def worker_count() -> int:
    """Worker processes for independent runs, from ``NOZZLEFLOW_WORKERS`` (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer (got {raw!r})") from exc
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer (got {raw!r})")
    return n


def _map(fn, items, workers=None):
    workers = worker_count() if workers is None else workers
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# -- scenarios ------------------------------------------------------------------------


@dataclass
class Scenario:
    """Everything needed to build a mesh and run the solvers."""

    profile: NozzleProfile
    L: float = 20.0
    n_s: int = 16
    h_z: float = 0.25
    symmetry: str = AXISYMMETRIC
    force: ForceField = field(default_factory=ForceField)
    m0: float = float(np.pi)
    gas: GasModel = field(default_factory=GasModel)
    config: SolverConfig = field(default_factory=SolverConfig)
    name: str = "scenario"

    def mesh(self, L=None):
        return build_mesh(self.profile, self.L if L is None else L, self.n_s, self.h_z, self.symmetry)

    def with_L(self, L):
        return replace(self, L=L)

    def solve(self, epsilon=None, L=None, init=None, mesh=None):
        """Compressible solve at ``epsilon`` (default: the scenario gas); ``epsilon = 0`` is incompressible."""
        mesh = mesh if mesh is not None else self.mesh(L)
        gas = self.gas if epsilon is None else self.gas.with_epsilon(epsilon)
        if not gas.compressible:
            return solve_incompressible(mesh, self.m0, self.force, self.config)
        return solve_compressible(mesh, gas, self.force, self.m0, init=init, config=self.config)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "profile": self.profile.params(),
            "L": self.L,
            "n_s": self.n_s,
            "h_z": self.h_z,
            "symmetry": self.symmetry,
            "force": self.force.params(),
            "m0": self.m0,
            "gas": {"gamma": self.gas.gamma, "epsilon": self.gas.epsilon, "theta": self.gas.theta,
                    "epsilon0": self.gas.epsilon0},
        }


# -- fluxes and Bernoulli ------------------------------------------------------------------


def mass_flux(state: FlowState, t: float) -> float:
    """Discrete mass flux through the station at ``z = t``.

    The flux is the conservative layer functional ``int w rho grad phi . grad chi``
    over the cell layer just upstream of the station (just downstream for the
    inlet).  Raises :class:`RangeError` outside ``[-L, L]``.
    """
    j = state.mesh.station_index(t)
    fluxes = state.diagnostics["station_flux"]
    return float(fluxes[max(j, 1) - 1])


def flux_deviation(state: FlowState) -> float:
    """Maximum pairwise station-flux difference relative to the achieved flux."""
    fl = state.diagnostics["station_flux"]
    return float(np.ptp(fl) / abs(state.achieved_flux))


def bernoulli_and_pressure(state: FlowState, gas: GasModel | None = None, force: ForceField | None = None):
    """Per-cell pressure and the largest Bernoulli residual.

    Compressible states: ``p = (rho**gamma - 1)/eps**2`` and the residual
    ``|u|^2/2 + (h(rho) - h(1))/eps**2 - phi_f``.  Incompressible states:
    ``p = phi_f - |u|^2/2 + C`` with the inlet-layer average fixed at zero;
    the residual is zero by construction.
    """
    gas = gas if gas is not None else state.gas
    force = force if force is not None else state.force
    disc = discretize(state.mesh)
    c = disc.center
    phi = force.eval(c[:, 0], c[:, 1]) * np.ones(state.mesh.n_cells)
    q2 = np.einsum("cd,cd->c", state.velocity, state.velocity)
    if gas is None or not gas.compressible:
        pbar = phi - 0.5 * q2
        layer = state.mesh.cell_station == 0
        w = disc.W0[layer]
        pbar = pbar - float(np.add.reduce(w * pbar[layer]) / np.add.reduce(w))
        return pbar, 0.0
    gm1 = gas.gamma - 1.0
    dh = gas.h1 * np.expm1(gm1 * np.log(state.density)) / gas.epsilon**2
    residual = np.abs(0.5 * q2 + dh - phi)
    return gas.pressure(state.density), float(residual.max())


# -- windowed deviations and rate fits -------------------------------------------------------


def _window_cells(mesh, T):
    if T < -mesh.L - 1e-12 or T + 1.0 > mesh.L + 1e-12:
        raise RangeError(f"window [{T}, {T + 1}] is not inside the mesh [-{mesh.L}, {mesh.L}]")
    cells = mesh.cells_in_window(T, T + 1.0)
    if cells.size == 0:
        raise RangeError(f"window [{T}, {T + 1}] contains no cell centres")
    return cells


def _reference_fields(state, reference, cells):
    """Reference velocity at the window cell centres and Gauss points."""
    mesh = state.mesh
    disc = discretize(mesh)
    if isinstance(reference, FlowState):
        rmesh = reference.mesh
        if rmesh is mesh or (rmesh.n_s == mesh.n_s and rmesh.n_z == mesh.n_z and rmesh.L == mesh.L):
            # same logical grid: compare cell by cell
            rdisc = discretize(rmesh)
            return reference.velocity[cells], rdisc.grad_gp(reference.potential)[cells]
        centres = disc.center[cells]
        gps = disc.gp[cells].reshape(-1, 2)
        vc = reference.velocity_at(centres[:, 0], centres[:, 1])
        vg = reference.velocity_at(gps[:, 0], gps[:, 1]).reshape(len(cells), 4, 2)
        return vc, vg
    ref = np.asarray(reference, dtype=float)
    if ref.ndim == 0:
        ref = np.array([0.0, float(ref)])
    if ref.shape != (2,):
        raise ValueError("constant reference must be a speed or a (u_r, u_z) pair")
    return np.broadcast_to(ref, (len(cells), 2)), np.broadcast_to(ref, (len(cells), 4, 2))


def window_deviation(state: FlowState, reference, T: float):
    """``(D_inf, D_L2)`` of ``grad phi - reference`` on the window ``[T, T+1]``."""
    cells = _window_cells(state.mesh, T)
    disc = discretize(state.mesh)
    vc, vg = _reference_fields(state, reference, cells)
    dc = state.velocity[cells] - vc
    d_inf = float(np.sqrt(np.einsum("cd,cd->c", dc, dc)).max())
    dg = disc.grad_gp(state.potential)[cells] - vg
    d_l2 = float(np.sqrt(np.add.reduce((disc.W[cells] * np.einsum("cgd,cgd->cg", dg, dg)).ravel())))
    return d_inf, d_l2


@dataclass
class RateFit:
    """Least-squares decay fit ``D = C exp(-rate T)`` or ``D = C (T - origin)**(-rate)``."""

    model: str
    rate: float
    prefactor: float
    r_squared: float
    windows: list
    D_inf: list
    D_l2: list
    norm: str = "linf"
    used: list = field(default_factory=list)
    floor: float = 0.0
    origin: float = 0.0
    rate_l2: float = float("nan")
    r_squared_l2: float = float("nan")


def fit_rate(T, D, model: str, origin: float = 0.0):
    """Fit ``(rate, prefactor, r_squared)`` by least squares in log space."""
    T = np.asarray(T, dtype=float)
    D = np.asarray(D, dtype=float)
    if model not in ("exponential", "algebraic"):
        raise ValueError(f"unknown rate model {model!r}")
    if T.size < 3 or np.unique(T).size < 3:
        raise InsufficientDataError(f"rate fit needs at least 3 distinct windows (got {np.unique(T).size})")
    if np.any(D <= 0.0):
        raise ValueError("rate fit needs positive deviations")
    x = T if model == "exponential" else np.log(T - origin)
    y = np.log(D)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - float(np.sum(resid**2)) / ss_tot)
    return float(-slope), float(np.exp(intercept)), r2


def far_field_rate(state: FlowState, reference, T_list, model: str, norm: str = "linf", origin: float = 0.0,
                   min_T: float | None = None) -> RateFit:
    """Fit the decay of ``D(T) = ||grad phi - reference||`` over windows ``[T, T+1]``.

    ``reference`` is a speed, a ``(u_r, u_z)`` pair or a :class:`FlowState`.
    Windows must start beyond ``min_T`` (default ``K + 1`` of the profile).
    Windows whose deviation is within 10x of the solver floor are dropped
    with a :class:`FloorWarning`; fewer than three remaining raise
    :class:`InsufficientDataError`.
    """
    T_list = [float(t) for t in T_list]
    if any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must be strictly increasing")
    min_T = state.mesh.profile.K + 1.0 if min_T is None else min_T
    if T_list and T_list[0] < min_T - 1e-12:
        raise RangeError(f"far-field windows must start at or beyond {min_T} (got {T_list[0]})")
    floor = state.floor
    if isinstance(reference, FlowState):
        floor = max(floor, reference.floor)
    d_inf, d_l2 = [], []
    for T in T_list:
        a, b = window_deviation(state, reference, T)
        d_inf.append(a)
        d_l2.append(b)
    primary = np.array(d_inf if norm == "linf" else d_l2)
    used = [bool(d > 10.0 * floor) for d in primary]
    dropped = [T for T, u in zip(T_list, used) if not u]
    if dropped:
        warnings.warn(f"windows {dropped} are within 10x of the solver floor {floor:.3e}; excluded from the fit",
                      FloorWarning, stacklevel=2)
    Tu = np.array(T_list)[used]
    rate, pref, r2 = fit_rate(Tu, primary[used], model, origin)
    other = np.array(d_l2 if norm == "linf" else d_inf)[used]
    try:
        rate2, _, r22 = fit_rate(Tu, other, model, origin)
    except (InsufficientDataError, ValueError):
        rate2, r22 = float("nan"), float("nan")
    return RateFit(model, rate, pref, r2, T_list, d_inf, d_l2, norm, used, 10.0 * floor, origin, rate2, r22)


# -- parameter studies ---------------------------------------------------------------------


@dataclass
class SlopeFit:
    slope: float
    halfwidth: float
    r_squared: float


def loglog_slope(x, y) -> SlopeFit:
    """Least-squares slope of ``log y`` against ``log x`` with a 95% half-width."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(x).size < 3:
        raise InsufficientDataError(f"slope fit needs at least 3 distinct abscissae (got {np.unique(x).size})")
    res = stats.linregress(np.log(x), np.log(y))
    n = x.size
    half = float(stats.t.ppf(0.975, n - 2) * res.stderr) if n > 2 else float("nan")
    return SlopeFit(float(res.slope), half, float(res.rvalue**2))


@dataclass
class StudyReport:
    """Outcome of a parameter study.

    ``records`` holds one dict per parameter value; ``fits`` maps a metric
    name to its fitted slope; ``checks`` maps check names to booleans and
    ``passed`` is their conjunction.
    """

    kind: str
    scenario: dict
    parameter: str
    records: list
    fits: dict = field(default_factory=dict)
    predicted: float | None = None
    tolerance: float | None = None
    checks: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    floor: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(self.checks.values())

    def rows(self):
        """``(parameter, metric, value)`` triples for tabular output."""
        out = []
        for rec in self.records:
            for k, v in rec.items():
                if k != self.parameter:
                    out.append((rec[self.parameter], k, v))
        return out


def _window_mask(mesh, window):
    c = discretize(mesh).center
    return (c[:, 1] >= window[0]) & (c[:, 1] <= window[1])


def _low_mach_run(args):
    scenario, eps, window, base = args
    try:
        state = scenario.solve(eps, init=None, mesh=base.mesh)
    except (SubsonicityError, ChokingError) as exc:
        return {"epsilon": eps, "error": f"{type(exc).__name__}: {exc}"}
    mask = _window_mask(state.mesh, window)
    dv = state.velocity[mask] - base.velocity[mask]
    return {
        "epsilon": eps,
        "velocity_deviation": float(np.sqrt(np.einsum("cd,cd->c", dv, dv)).max()),
        "density_deviation": float(np.abs(state.density[mask] - 1.0).max()),
        "max_mach": float(state.mach.max()),
        "iterations": int(state.diagnostics["iterations"]),
        "flux_deviation": flux_deviation(state),
        "truncation_inactive": bool(not np.any(state.truncated)),
    }


def low_mach_study(scenario: Scenario, eps_list, window, predicted=2.0, tolerance=0.2, workers=None) -> StudyReport:
    """Slopes of ``max|grad phi_eps - grad phi_bar|`` and ``max|rho_eps - 1|`` against ``eps``.

    Runs rejected by the subsonicity check are recorded, flagged and left
    out of the fit.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3:
        raise InsufficientDataError("low_mach_study needs at least 3 epsilon values")
    if any(e <= 0.0 for e in eps_list):
        raise ValueError("low_mach_study: epsilon values must be positive")
    mesh = scenario.mesh()
    base = solve_incompressible(mesh, scenario.m0, scenario.force, scenario.config)
    runs = _map(_low_mach_run, [(scenario, e, window, base) for e in eps_list], workers)
    records, flags = [], []
    for rec in runs:
        if "error" in rec:
            flags.append(f"epsilon={rec['epsilon']}: choked ({rec['error']})")
        records.append(rec)
    good = [r for r in records if "error" not in r]
    report = StudyReport("low_mach", scenario.describe(), "epsilon", records, predicted=predicted,
                         tolerance=tolerance, flags=flags, floor=10.0 * base.floor)
    x = [r["epsilon"] for r in good]
    for metric in ("velocity_deviation", "density_deviation"):
        fit = loglog_slope(x, [r[metric] for r in good])
        report.fits[metric] = fit
        report.checks[f"{metric} slope within {predicted}+-{tolerance}"] = abs(fit.slope - predicted) <= tolerance
    return report


def _truncation_run(args):
    scenario, L = args
    state = scenario.solve(L=L)
    return state


def truncation_study(scenario: Scenario, L_list, window, workers=None) -> StudyReport:
    """Interior differences ``delta(L) = max|grad phi_L - grad phi_Lmax|`` over ``window``.

    The window must lie inside ``(-L_min/4, L_min/4)``.  Checks that
    ``delta`` strictly decreases and that the last value sits above 10x the
    solver floor.
    """
    L_list = [float(L) for L in L_list]
    if len(L_list) < 3:
        raise InsufficientDataError("truncation_study needs at least 3 domain lengths")
    if any(b <= a for a, b in zip(L_list, L_list[1:])):
        raise ValueError("truncation_study: L_list must be strictly increasing")
    quarter = L_list[0] / 4.0
    if not (-quarter < window[0] < window[1] < quarter):
        raise ValueError(
            f"truncation_study precondition violated: window {tuple(window)} must lie inside "
            f"(-{quarter}, {quarter}) = a quarter of the shortest domain"
        )
    states = _map(_truncation_run, [(scenario, L) for L in L_list], workers)
    ref = states[-1]
    rmask = _window_mask(ref.mesh, window)
    rz = discretize(ref.mesh).center[rmask]
    floor = 10.0 * max(s.floor for s in states)
    records = []
    for L, st in zip(L_list[:-1], states[:-1]):
        mask = _window_mask(st.mesh, window)
        cz = discretize(st.mesh).center[mask]
        if cz.shape != rz.shape or np.abs(cz - rz).max() > 1e-9:
            raise MeshError("truncation_study: window cells of different L do not align (choose L as a multiple of h_z)")
        dv = st.velocity[mask] - ref.velocity[rmask]
        records.append({"L": L, "delta": float(np.sqrt(np.einsum("cd,cd->c", dv, dv)).max()),
                        "iterations": int(st.diagnostics["iterations"]), "flux_deviation": flux_deviation(st)})
    deltas = [r["delta"] for r in records]
    report = StudyReport("truncation", scenario.describe(), "L", records, floor=floor)
    report.checks["delta strictly decreasing"] = all(b < a for a, b in zip(deltas, deltas[1:]))
    report.checks["final delta above solver floor"] = deltas[-1] > floor
    usable = [(r["L"], r["delta"]) for r in records if r["delta"] > floor]
    if len(usable) >= 3:
        rate, pref, r2 = fit_rate(*zip(*usable), "exponential")
        report.fits["delta"] = SlopeFit(rate, float("nan"), r2)
    return report


# -- uniqueness --------------------------------------------------------------------------


def _initial_state(scenario, mesh, init):
    if isinstance(init, FlowState):
        return init
    if init == "incompressible":
        return solve_incompressible(mesh, scenario.m0, scenario.force, scenario.config)
    if init == "uniform":
        radial = scenario.force.radial_part() if scenario.force.kind != "tabulated" else ForceField()
        q = uniform_cylinder_state(scenario.gas, radial, scenario.m0, scenario.symmetry).qbar
        return uniform_state_on_mesh(mesh, scenario.gas, scenario.force, q, scenario.m0)
    if init == "scaled":
        base = solve_incompressible(mesh, scenario.m0, scenario.force, scenario.config)
        return replace(base, potential=1.5 * base.potential, homogeneous=1.5 * base.homogeneous)
    raise ValueError(f"unknown initialization {init!r}; use 'incompressible', 'uniform', 'scaled' or a FlowState")


def uniqueness_probe(scenario: Scenario, init_a="incompressible", init_b="uniform"):
    """Largest cell velocity difference between runs from two initial guesses."""
    mesh = scenario.mesh()
    a = scenario.solve(mesh=mesh, init=_initial_state(scenario, mesh, init_a))
    b = scenario.solve(mesh=mesh, init=_initial_state(scenario, mesh, init_b))
    d = a.velocity - b.velocity
    return float(np.sqrt(np.einsum("cd,cd->c", d, d)).max())



# -- manufactured solutions ------------------------------------------------------------


def _manufactured(symmetry, amplitude=0.3, k=np.pi / 2):
    import sympy as sp

    r, z = sp.symbols("r z", real=True)
    phi = z + amplitude * sp.cos(sp.pi * r) * sp.cos(k * z)
    lap = sp.diff(phi, r, 2) + sp.diff(phi, z, 2)
    if symmetry == AXISYMMETRIC:
        lap += sp.diff(phi, r) / r
    fns = [sp.lambdify((r, z), e, "numpy") for e in (phi, sp.diff(phi, r), sp.diff(phi, z), -sp.simplify(lap))]
    return [lambda rr, zz, f=f: f(rr, zz) + 0.0 * rr for f in fns]


def mms_study(levels=(8, 16, 32), symmetry=AXISYMMETRIC, L=2.0, config=SolverConfig()):
    """Manufactured-solution refinement study for the weighted Laplace operator.

    ``phi = z + 0.3 cos(pi r) cos(pi z / 2)`` on the unit cylinder satisfies
    the slip condition on the wall and axis; its Laplacian enters as a
    source, its outlet derivative as Neumann data and its inlet trace as
    Dirichlet data.  The velocity error is the ``L2`` norm of the cell-centre
    gradients, where bilinear elements on rectangles superconverge.
    """
    from .geometry import build_profile
    from .solvers import solve_linear

    phi, dphir, dphiz, src = _manufactured(symmetry)
    errors, h = [], []
    for n in levels:
        mesh = build_mesh(build_profile("cylinder"), L, n, 1.0 / n, symmetry)
        disc = discretize(mesh)
        rhs = disc.load(src(disc.gp[..., 0], disc.gp[..., 1]))
        rhs += disc.outlet_load(dphiz(disc.out_pos[..., 0], disc.out_pos[..., 1]))
        inlet = mesh.station_nodes(0)
        x, _ = solve_linear(mesh, np.ones(disc.W.shape), rhs, phi(mesh.nodes[inlet, 0], mesh.nodes[inlet, 1]), config)
        g = disc.grad_center(x)
        c = disc.center
        e2 = (g[:, 0] - dphir(c[:, 0], c[:, 1])) ** 2 + (g[:, 1] - dphiz(c[:, 0], c[:, 1])) ** 2
        errors.append(float(np.sqrt(np.add.reduce(disc.W0 * e2))))
        h.append(1.0 / n)
    orders = [float(np.log(errors[i] / errors[i + 1]) / np.log(h[i] / h[i + 1])) for i in range(len(errors) - 1)]
    return {"h": h, "errors": errors, "orders": orders}
