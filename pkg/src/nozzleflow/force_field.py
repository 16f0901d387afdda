"""Conservative external forces ``F = grad phi_f`` given by their potentials."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.special import ellipk

from .errors import ForceFieldError
from .geometry import algebraic_tail

__all__ = ["ForceField", "radial_shape", "evaluate", "gradient", "obstacle_gravity_table"]

KINDS = ("zero", "radial_static", "decaying_perturbation", "tabulated")


def radial_shape(r, r_clip=1.0, deriv=0):
    """``g(r) = r**2`` for ``r <= r_clip``, flattened C2 to a constant by ``2 r_clip``.

    Beyond ``r_clip`` the quartic ``1 + 2x + x^2 - 10/3 x^3 + 3/2 x^4``
    (``x = r/r_clip - 1``) keeps value, slope and curvature continuous and
    reaches zero slope at ``x = 1``.
    """
    r = np.asarray(r, dtype=float)
    rho = r / r_clip
    x = np.clip(rho - 1.0, 0.0, 1.0)
    inner = rho <= 1.0
    if deriv == 0:
        outer = 1.0 + 2.0 * x + x**2 - (10.0 / 3.0) * x**3 + 1.5 * x**4
        out = np.where(inner, rho**2, outer) * r_clip**2
    elif deriv == 1:
        outer = 2.0 + 2.0 * x - 10.0 * x**2 + 6.0 * x**3
        out = np.where(inner, 2.0 * rho, outer) * r_clip
    elif deriv == 2:
        outer = np.where(rho < 2.0, 2.0 - 20.0 * x + 18.0 * x**2, 0.0)
        out = np.where(inner, 2.0, outer)
    else:
        raise ValueError("deriv must be 0, 1 or 2")
    return out[()] if out.ndim == 0 else out


_G_MAX = 1.0 + 2.0 + 1.0 - 10.0 / 3.0 + 1.5  # sup of g / r_clip^2
_DG_MAX = 2.0 + 2.0 / 9.0 - 10.0 / 81.0 + 6.0 / 729.0  # sup of g' / r_clip, attained at x = 1/9


@dataclass
class ForceField:
    """Force potential descriptor.

    * ``zero``: ``phi_f = 0``.
    * ``radial_static``: ``phi_f = amplitude * g(r)``.
    * ``decaying_perturbation``: ``radial_amplitude * g(r) + amplitude * g(r) * tail(z - K)``
      with ``tail(xi) = (1 + xi)**(-b1)`` for ``xi >= 0`` (C2-joined upstream).
    * ``tabulated``: spline through nodal values on a structured mesh.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    b1: float | None = None
    K: float = 0.0
    radial_amplitude: float = 0.0
    r_clip: float = 1.0
    table: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ForceFieldError(f"unknown force kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "decaying_perturbation" and (self.b1 is None or not self.b1 > 0.0):
            raise ForceFieldError(f"ForceField invariant b1 > 0 violated (b1={self.b1})")
        if not self.r_clip > 0.0:
            raise ForceFieldError("r_clip must be positive")
        if self.kind == "tabulated":
            if self.table is None:
                raise ForceFieldError("tabulated force requires a table")
            self._build_spline()

    # -- tabulated support ---------------------------------------------------
    def _build_spline(self):
        t = self.table
        values = np.asarray(t["values"], dtype=float).reshape(len(t["z"]), len(t["s"]))
        self._spline = RectBivariateSpline(t["z"], t["s"], values, kx=3, ky=3)
        self._profile = t["profile"]

    @classmethod
    def from_mesh_values(cls, mesh, values):
        """Tabulated field from nodal values on ``mesh`` (node ordering of the mesh)."""
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_nodes,):
            raise ForceFieldError(f"expected {mesh.n_nodes} nodal values, got {values.shape}")
        table = {"z": mesh.z_stations.copy(), "s": mesh.s.copy(), "values": values, "profile": mesh.profile}
        return cls(kind="tabulated", table=table)

    def _table_coords(self, r, z):
        t = self.table
        tol = 1e-9
        if np.any(z < t["z"][0] - tol) or np.any(z > t["z"][-1] + tol):
            raise ForceFieldError("tabulated force evaluated outside its axial range (extrapolation)")
        f1 = self._profile.f1(z)
        f2 = self._profile.f2(z)
        s = (r - f2) / (f1 - f2)
        if np.any(s < -1e-9) or np.any(s > 1 + 1e-9):
            raise ForceFieldError("tabulated force evaluated outside the nozzle (extrapolation)")
        return s, f1, f2

    # -- evaluation ----------------------------------------------------------
    def eval(self, r, z):
        """Potential ``phi_f(r, z)``."""
        r, z = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(z, dtype=float))
        if self.kind == "zero":
            out = np.zeros(r.shape)
        elif self.kind == "radial_static":
            out = self.amplitude * radial_shape(r, self.r_clip)
        elif self.kind == "decaying_perturbation":
            g = radial_shape(r, self.r_clip)
            out = self.radial_amplitude * g + self.amplitude * g * algebraic_tail(z - self.K, self.b1)
        else:
            s, _, _ = self._table_coords(r, z)
            out = self._spline.ev(z, s)
        return out[()] if out.ndim == 0 else out

    def grad(self, r, z):
        """``(d phi_f/dr, d phi_f/dz)`` as a pair of arrays."""
        r, z = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(z, dtype=float))
        if self.kind == "zero":
            dr, dz = np.zeros(r.shape), np.zeros(r.shape)
        elif self.kind == "radial_static":
            dr, dz = self.amplitude * radial_shape(r, self.r_clip, 1), np.zeros(r.shape)
        elif self.kind == "decaying_perturbation":
            g = radial_shape(r, self.r_clip)
            dg = radial_shape(r, self.r_clip, 1)
            tail = algebraic_tail(z - self.K, self.b1)
            dr = (self.radial_amplitude + self.amplitude * tail) * dg
            dz = self.amplitude * g * algebraic_tail(z - self.K, self.b1, 1)
        else:
            s, f1, f2 = self._table_coords(r, z)
            width = f1 - f2
            d_s = self._spline.ev(z, s, dy=1)
            d_z = self._spline.ev(z, s, dx=1)
            ds_dr = 1.0 / width
            ds_dz = -(self._profile.f2(z, 1) + s * (self._profile.f1(z, 1) - self._profile.f2(z, 1))) / width
            dr = d_s * ds_dr
            dz = d_z + d_s * ds_dz
        if dr.ndim == 0:
            return dr[()], dz[()]
        return dr, dz

    def radial_part(self) -> "ForceField":
        """The ``z``-independent limit ``phi_bar(r)`` of this field (far downstream)."""
        if self.kind in ("zero", "radial_static"):
            return self
        if self.kind == "decaying_perturbation":
            return ForceField("radial_static", amplitude=self.radial_amplitude, r_clip=self.r_clip)
        raise ForceFieldError("tabulated fields have no declared radial limit")

    @property
    def is_radial(self) -> bool:
        return self.kind in ("zero", "radial_static")

    @property
    def bounds(self) -> tuple[float, float]:
        """Declared ``(sup |phi_f|, sup |grad phi_f|)``."""
        gmax = _G_MAX * self.r_clip**2
        dgmax = _DG_MAX * self.r_clip
        if self.kind == "zero":
            return 0.0, 0.0
        if self.kind == "radial_static":
            return abs(self.amplitude) * gmax, abs(self.amplitude) * dgmax
        if self.kind == "decaying_perturbation":
            tmax = float(np.max(algebraic_tail(np.linspace(-2, 0, 201), self.b1)))
            dtmax = float(np.max(np.abs(algebraic_tail(np.linspace(-2, 0, 2001), self.b1, 1))))
            sup = (abs(self.radial_amplitude) + abs(self.amplitude) * tmax) * gmax
            dsup = (abs(self.radial_amplitude) + abs(self.amplitude) * tmax) * dgmax + abs(self.amplitude) * gmax * dtmax
            return sup, dsup
        vals = np.asarray(self.table["values"])
        return float(np.abs(vals).max()), float("nan")

    def params(self) -> dict:
        out = {"kind": self.kind, "amplitude": self.amplitude, "K": self.K,
               "radial_amplitude": self.radial_amplitude, "r_clip": self.r_clip}
        if self.b1 is not None:
            out["b1"] = self.b1
        return out


def evaluate(field: ForceField, r, z):
    return field.eval(r, z)


def gradient(field: ForceField, r, z):
    return field.grad(r, z)


def obstacle_gravity_table(mesh, density=1.0, n_axial=48, n_radial=24) -> ForceField:
    """Tabulate ``phi(x) = int_obstacle density / |x - y| dy`` on the mesh nodes.

    The obstacle is a body of revolution, so the azimuthal integral is done
    in closed form with the complete elliptic integral of the first kind and
    the meridian integral by Gauss-Legendre quadrature.  Intended for
    offline generation; the result is a ``tabulated`` field.
    """
    obstacle = mesh.profile.obstacle
    if obstacle is None:
        raise ForceFieldError("mesh profile has no obstacle")
    xz, wz = np.polynomial.legendre.leggauss(n_axial)
    xr, wr = np.polynomial.legendre.leggauss(n_radial)
    half = 0.5 * (obstacle.L2 - obstacle.L1)
    z0 = obstacle.L1 + half * (xz + 1.0)
    a_max = obstacle(z0)
    r, z = mesh.nodes[:, 0], mesh.nodes[:, 1]
    phi = np.zeros(mesh.n_nodes)
    for zk, wk, ak in zip(z0, wz, a_max):
        if ak <= 0.0:
            continue
        a = 0.5 * ak * (xr + 1.0)
        wa = 0.5 * ak * wr
        dz2 = (z[:, None] - zk) ** 2
        denom = (r[:, None] + a[None, :]) ** 2 + dz2
        m = np.clip(4.0 * r[:, None] * a[None, :] / denom, 0.0, 1.0 - 1e-15)
        ring = 4.0 * a[None, :] * ellipk(m) / np.sqrt(denom)
        phi += half * wk * (ring @ wa)
    return ForceField.from_mesh_values(mesh, density * phi)
