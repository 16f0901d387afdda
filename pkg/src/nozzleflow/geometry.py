"""Nozzle/obstacle profiles and boundary-fitted meshes of the meridian plane.

A body of revolution is described by its outer wall radius ``f1(z)`` and
obstacle radius ``f2(z)`` (zero outside ``[L1, L2]``).  The mesh maps the
unit transverse parameter ``s`` to ``r = f2 + s (f1 - f2)`` at every axial
station, so each station line is a full cross section.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import MeshError, ProfileError, RangeError

__all__ = [
    "Bump",
    "NozzleProfile",
    "MeridianMesh",
    "algebraic_tail",
    "build_profile",
    "build_mesh",
    "section_area",
]

AXISYMMETRIC = "axisymmetric"
PLANAR = "planar"

# C2 quintic join on u in [0, 1]: p(0)=c, p'(0)=p''(0)=0, p(1)=1, p'(1)=-a, p''(1)=a(a+1)
_JOIN = np.array(
    [
        [1, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 2, 0, 0, 0],
        [1, 1, 1, 1, 1, 1],
        [0, 1, 2, 3, 4, 5],
        [0, 0, 2, 6, 12, 20],
    ],
    dtype=float,
)


def _join_coeffs(a):
    c = 1.0 + 0.5 * a + a * (a + 1.0) / 10.0  # keeps the join monotone
    return np.linalg.solve(_JOIN, [c, 0.0, 0.0, 1.0, -a, a * (a + 1.0)])


def algebraic_tail(xi, a, deriv=0):
    """``(1 + xi)**(-a)`` for ``xi >= 0``, joined C2 to a constant for ``xi < 0``.

    The join is a monotone quintic on ``[-1, 0]``; below ``xi = -1`` the
    function is constant.  ``deriv`` selects the 0th, 1st or 2nd derivative.
    """
    xi = np.asarray(xi, dtype=float)
    coeffs = _join_coeffs(a)
    poly = np.polynomial.Polynomial(coeffs).deriv(deriv)
    u = np.clip(xi + 1.0, 0.0, 1.0)
    pos = np.maximum(xi, 0.0)
    if deriv == 0:
        tail = (1.0 + pos) ** (-a)
    elif deriv == 1:
        tail = -a * (1.0 + pos) ** (-a - 1.0)
    elif deriv == 2:
        tail = a * (a + 1.0) * (1.0 + pos) ** (-a - 2.0)
    else:
        raise ValueError("deriv must be 0, 1 or 2")
    join = poly(u)
    if deriv > 0:
        join = np.where(xi < -1.0, 0.0, join)
    out = np.where(xi >= 0.0, tail, join)
    return out[()] if out.ndim == 0 else out


def _smoothstep5(t, deriv=0):
    t = np.clip(t, 0.0, 1.0)
    if deriv == 0:
        return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    if deriv == 1:
        return 30.0 * t**2 * (1.0 - t) ** 2
    return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


@dataclass(frozen=True)
class Bump:
    """Body of revolution ``f2 = height * sin(pi (z-L1)/(L2-L1))**2`` on ``[L1, L2]``."""

    height: float
    L1: float
    L2: float

    def __call__(self, z, deriv=0):
        z = np.asarray(z, dtype=float)
        span = self.L2 - self.L1
        k = np.pi / span
        inside = (z >= self.L1) & (z <= self.L2)
        x = k * (z - self.L1)
        if deriv == 0:
            val = self.height * np.sin(x) ** 2
        elif deriv == 1:
            val = self.height * k * np.sin(2.0 * x)
        else:
            val = 2.0 * self.height * k * k * np.cos(2.0 * x)
        return np.where(inside, val, 0.0)


class NozzleProfile:
    """Outer wall ``f1`` and obstacle ``f2`` as functions of the axial coordinate.

    Use :func:`build_profile` rather than instantiating directly; it checks
    the profile bounds.
    """

    def __init__(self, kind, K=0.0, a1=None, amplitude=0.0, width=2.0, obstacle=None):
        self.kind = kind
        self.K = float(K)
        self.a1 = None if a1 is None else float(a1)
        self.amplitude = float(amplitude)
        self.width = float(width)
        self.obstacle = obstacle

    @property
    def L1(self):
        return None if self.obstacle is None else self.obstacle.L1

    @property
    def L2(self):
        return None if self.obstacle is None else self.obstacle.L2

    def f1(self, z, deriv=0):
        z = np.asarray(z, dtype=float)
        if self.kind == "cylinder":
            return np.full_like(z, 1.0 if deriv == 0 else 0.0)
        if self.kind == "algebraic":
            tail = algebraic_tail(z - self.K, self.a1, deriv)
            return (1.0 if deriv == 0 else 0.0) + self.amplitude * tail
        if self.kind == "flat_beyond_K":
            t = (z - (self.K - self.width)) / self.width
            step = _smoothstep5(t, deriv) / self.width**deriv
            return (1.0 if deriv == 0 else 0.0) + self.amplitude * ((1.0 if deriv == 0 else 0.0) - step)
        raise ProfileError(f"unknown profile kind {self.kind!r}")

    def f2(self, z, deriv=0):
        z = np.asarray(z, dtype=float)
        if self.obstacle is None:
            return np.zeros_like(z)
        return self.obstacle(z, deriv)

    def _sample_z(self):
        lo = self.K - self.width - 10.0
        hi = self.K + 50.0
        if self.obstacle is not None:
            lo = min(lo, self.obstacle.L1 - 1.0)
            hi = max(hi, self.obstacle.L2 + 1.0)
        return np.linspace(lo, hi, 20001)

    @cached_property
    def bound(self) -> float:
        """Constant ``C`` with ``1/C <= f1 <= C``, ``0 <= f2 <= C`` and ``1/C <= f1-f2 <= C``."""
        z = self._sample_z()
        f1 = self.f1(z)
        gap = f1 - self.f2(z)
        return float(max(f1.max(), 1.0 / f1.min(), self.f2(z).max(), gap.max(), 1.0 / gap.min()))

    def envelope_constant(self) -> float:
        """Constant ``C`` with ``sum_k |z^k d^k(f1-1)| <= C z^(-a1)`` for ``z > K`` (algebraic kind)."""
        if self.kind != "algebraic":
            return 0.0
        a, A, K = self.a1, abs(self.amplitude), max(self.K, 1e-12)
        # (z / (1 + z - K))^(a+k) is maximal at z = K when K >= 1, and <= 1 otherwise
        factors = [1.0, a, a * (a + 1.0)]
        return float(sum(A * c * max(K, 1.0) ** (a + k) for k, c in enumerate(factors)))

    def params(self) -> dict:
        out = {"kind": self.kind, "K": self.K, "amplitude": self.amplitude, "width": self.width}
        if self.a1 is not None:
            out["a1"] = self.a1
        if self.obstacle is not None:
            out.update(obstacle="bump", height=self.obstacle.height, L1=self.obstacle.L1, L2=self.obstacle.L2)
        else:
            out["obstacle"] = "none"
        return out

    @classmethod
    def from_params(cls, params: dict) -> "NozzleProfile":
        obstacle = None
        if params.get("obstacle", "none") == "bump":
            obstacle = (float(params["height"]), float(params["L1"]), float(params["L2"]))
        a1 = params.get("a1")
        return build_profile(
            params["kind"],
            K=float(params.get("K", 0.0)),
            a1=None if a1 is None else float(a1),
            amplitude=float(params.get("amplitude", 0.0)),
            width=float(params.get("width", 2.0)),
            obstacle=obstacle,
        )

    def __repr__(self):
        return f"NozzleProfile({self.params()})"


def build_profile(kind="cylinder", K=0.0, a1=None, amplitude=0.0, width=2.0, obstacle=None, min_gap=0.05):
    """Construct and validate a nozzle profile.

    ``kind`` is one of ``cylinder``, ``flat_beyond_K`` (radius ``1+amplitude``
    upstream, contracting C2 over ``width`` to exactly 1 for ``z >= K``) or
    ``algebraic`` (``f1 = 1 + amplitude (1 + z - K)**(-a1)`` for ``z >= K``,
    joined C2 to a constant upstream).  ``obstacle`` is ``None``, a
    :class:`Bump` or a ``(height, L1, L2)`` tuple.
    """
    if kind not in ("cylinder", "flat_beyond_K", "algebraic"):
        raise ProfileError(f"unknown profile kind {kind!r}")
    if kind == "algebraic":
        if a1 is None or not a1 > 0.0:
            raise ProfileError(f"NozzleProfile invariant a1 > 0 violated (a1={a1})")
    else:
        a1 = None
    if kind == "cylinder":
        amplitude = 0.0
    if kind == "flat_beyond_K" and not width > 0.0:
        raise ProfileError(f"flat_beyond_K width must be positive (got {width})")
    if isinstance(obstacle, tuple):
        obstacle = Bump(*map(float, obstacle))
    if obstacle is not None:
        if not obstacle.L2 > obstacle.L1:
            raise ProfileError(f"obstacle band requires L1 < L2 (got {obstacle.L1}, {obstacle.L2})")
        if not obstacle.height >= 0.0:
            raise ProfileError("obstacle invariant 0 <= f2 violated (negative height)")

    prof = NozzleProfile(kind, K=K, a1=a1, amplitude=amplitude, width=width, obstacle=obstacle)
    z = prof._sample_z()
    f1 = prof.f1(z)
    if f1.min() < 0.5:
        raise ProfileError(f"profile bound f1 >= 1/2 violated (min f1 = {f1.min():.4g}); reduce amplitude")
    if obstacle is not None:
        zb = np.linspace(obstacle.L1, obstacle.L2, 2001)
        gap = prof.f1(zb) - prof.f2(zb)
        if gap.min() < min_gap:
            raise ProfileError(
                f"obstacle bound f1 - f2 >= 1/C violated on [L1, L2] (min gap {gap.min():.4g} < {min_gap})"
            )
    return prof


class MeridianMesh:
    """Structured quadrilateral mesh of the truncated meridian domain ``|z| < L``.

    Node ``(j, i)`` sits at station ``j`` (axial) and transverse index ``i``;
    its flat index is ``j * (n_s + 1) + i``.  ``weight(r)`` is ``2 pi r`` for
    axisymmetric meshes (so section measures are true 3D areas) and ``1`` for
    planar half-channels.
    """

    def __init__(self, profile: NozzleProfile, L: float, n_s: int, n_z: int, symmetry: str = AXISYMMETRIC):
        if symmetry not in (AXISYMMETRIC, PLANAR):
            raise MeshError(f"symmetry must be {AXISYMMETRIC!r} or {PLANAR!r}")
        self.profile = profile
        self.L = float(L)
        self.n_s = int(n_s)
        self.n_z = int(n_z)
        self.symmetry = symmetry
        self.h_z = 2.0 * self.L / self.n_z
        self.z_stations = -self.L + self.h_z * np.arange(self.n_z + 1)
        self.s = np.arange(self.n_s + 1) / self.n_s
        f1 = profile.f1(self.z_stations)
        f2 = profile.f2(self.z_stations)
        r = f2[:, None] + self.s[None, :] * (f1 - f2)[:, None]
        zz = np.broadcast_to(self.z_stations[:, None], r.shape)
        self.nodes = np.column_stack([r.ravel(), zz.ravel()])
        self.nodes.flags.writeable = False

        j, i = np.meshgrid(np.arange(self.n_z), np.arange(self.n_s), indexing="ij")
        n0 = (j * (self.n_s + 1) + i).ravel()
        self.cells = np.column_stack([n0, n0 + 1, n0 + self.n_s + 2, n0 + self.n_s + 1])
        self.cells.flags.writeable = False
        self.cell_station = j.ravel()
        self.cell_transverse = i.ravel()
        self._check_jacobians()

    @property
    def n_nodes(self):
        return (self.n_s + 1) * (self.n_z + 1)

    @property
    def n_cells(self):
        return self.n_s * self.n_z

    @property
    def shape(self):
        """Node grid shape ``(n_z + 1, n_s + 1)``."""
        return (self.n_z + 1, self.n_s + 1)

    def node(self, j, i):
        return j * (self.n_s + 1) + i

    def weight(self, r):
        r = np.asarray(r, dtype=float)
        return 2.0 * np.pi * r if self.symmetry == AXISYMMETRIC else np.ones_like(r)

    @cached_property
    def boundary_tags(self) -> dict:
        """Disjoint node sets: inlet, outlet, outer_wall, obstacle_wall, axis."""
        js = np.arange(1, self.n_z)
        inner = self.node(js, 0)
        on_obstacle = self.profile.f2(self.z_stations[js]) > 0.0
        return {
            "inlet": self.node(0, np.arange(self.n_s + 1)),
            "outlet": self.node(self.n_z, np.arange(self.n_s + 1)),
            "outer_wall": self.node(js, self.n_s),
            "obstacle_wall": inner[on_obstacle],
            "axis": inner[~on_obstacle],
        }

    def station_index(self, t: float) -> int:
        """Nearest station to ``t``; raises :class:`RangeError` outside ``[-L, L]``."""
        tol = 1e-9 * max(1.0, self.L)
        if not (-self.L - tol <= t <= self.L + tol):
            raise RangeError(f"station {t} outside [-{self.L}, {self.L}]")
        return int(np.clip(np.rint((t + self.L) / self.h_z), 0, self.n_z))

    def station_nodes(self, j: int) -> np.ndarray:
        return self.node(j, np.arange(self.n_s + 1))

    @cached_property
    def cell_centers(self):
        return self.nodes[self.cells].mean(axis=1)

    def cells_in_window(self, t0: float, t1: float) -> np.ndarray:
        """Indices of cells whose centre lies in ``[t0, t1]``."""
        zc = self.cell_centers[:, 1]
        eps = 1e-9 * self.h_z
        return np.flatnonzero((zc >= t0 - eps) & (zc <= t1 + eps))

    def _check_jacobians(self):
        xy = self.nodes[self.cells]  # (cells, 4, 2)
        # bilinear map; evaluate det J at the four corners
        corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
        worst = np.inf
        for xi, eta in corners:
            dN = _dshape(xi, eta)
            jac = np.einsum("ak,cad->ckd", dN, xy)
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            if det.min() <= 0.0:
                bad = int(np.argmin(det))
                raise MeshError(
                    f"degenerate cell {bad} (station {self.cell_station[bad]}, "
                    f"transverse {self.cell_transverse[bad]}): Jacobian {det[bad]:.3e}"
                )
            worst = min(worst, det.min())
        self.min_jacobian = float(worst)

    def __repr__(self):
        return f"MeridianMesh(n_s={self.n_s}, n_z={self.n_z}, L={self.L}, symmetry={self.symmetry!r})"


def _dshape(xi, eta):
    """Derivatives of the bilinear shape functions, shape (4 nodes, 2 ref dirs)."""
    return 0.25 * np.array(
        [
            [-(1 - eta), -(1 - xi)],
            [(1 - eta), -(1 + xi)],
            [(1 + eta), (1 + xi)],
            [-(1 + eta), (1 - xi)],
        ]
    )


def build_mesh(profile: NozzleProfile, L: float, n_s: int, h_z: float, symmetry: str = AXISYMMETRIC) -> MeridianMesh:
    """Boundary-fitted mesh of ``Omega_L`` with roughly uniform axial spacing ``h_z``.

    The actual spacing is ``2L / n_z`` with ``n_z = round(2L / h_z)``.
    """
    if n_s < 4:
        raise MeshError(f"n_s must be >= 4 (got {n_s})")
    if not h_z > 0.0:
        raise MeshError(f"h_z must be positive (got {h_z})")
    if profile.obstacle is not None:
        need = max(abs(profile.obstacle.L1), abs(profile.obstacle.L2)) + 2.0
        if not L > need:
            raise MeshError(f"L must exceed max(|L1|, |L2|) + 2 = {need} (got {L})")
    n_z = max(1, int(round(2.0 * L / h_z)))
    return MeridianMesh(profile, L, n_s, n_z, symmetry)


def section_area(mesh: MeridianMesh, t: float) -> float:
    """Measure of the cross section at the station nearest ``t``.

    Axisymmetric sections integrate ``2 pi r`` exactly segment by segment,
    giving ``pi (f1^2 - f2^2)``; planar sections give ``f1 - f2`` per unit depth.
    """
    j = mesh.station_index(t)
    r = mesh.nodes[mesh.station_nodes(j), 0]
    if mesh.symmetry == AXISYMMETRIC:
        return float(np.sum(np.pi * (r[1:] ** 2 - r[:-1] ** 2)))
    return float(np.sum(r[1:] - r[:-1]))
