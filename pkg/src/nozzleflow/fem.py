"""Bilinear finite elements on a :class:`~nozzleflow.geometry.MeridianMesh`.

Every integrand carries the symmetry weight ``w(r)`` of the mesh, so the
same code handles axisymmetric and planar problems.  Quadrature is 2x2
Gauss on cells and 2-point Gauss on outlet edges.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError
from .geometry import MeridianMesh, _dshape

__all__ = ["Discretization", "discretize", "pcg"]

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = [(-_G, -_G), (_G, -_G), (_G, _G), (-_G, _G)]


def _shape(xi, eta):
    return 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta), (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])


def _geometry_at(xy, xi, eta):
    """Physical gradients of the shape functions and ``det J`` at one reference point."""
    dN = _dshape(xi, eta)
    jac = np.einsum("ak,cad->ckd", dN, xy)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1] / det
    inv[:, 1, 1] = jac[:, 0, 0] / det
    inv[:, 0, 1] = -jac[:, 0, 1] / det
    inv[:, 1, 0] = -jac[:, 1, 0] / det
    # jac[k, d] = dx_d / dxi_k, so grad_x N = inv(jac) @ grad_xi N
    B = np.einsum("cdk,ak->cad", inv, dN)
    pos = np.einsum("a,cad->cd", _shape(xi, eta), xy)
    return B, det, pos


class Discretization:
    """Precomputed quadrature data for one mesh.

    Arrays use the axes ``c`` (cell), ``g`` (Gauss point), ``a`` (local node)
    and ``d`` (coordinate: 0 = r, 1 = z).
    """

    def __init__(self, mesh: MeridianMesh):
        self.mesh = mesh
        xy = mesh.nodes[mesh.cells]
        Bs, dets, poss = [], [], []
        for xi, eta in GAUSS_POINTS:
            B, det, pos = _geometry_at(xy, xi, eta)
            Bs.append(B)
            dets.append(det)
            poss.append(pos)
        self.B = np.stack(Bs, axis=1)  # (c, g, a, d)
        self.gp = np.stack(poss, axis=1)  # (c, g, 2)
        self.W = mesh.weight(self.gp[..., 0]) * np.stack(dets, axis=1)  # gauss weights are 1
        self.N = np.array([_shape(xi, eta) for xi, eta in GAUSS_POINTS])  # (g, a)

        B0, det0, pos0 = _geometry_at(xy, 0.0, 0.0)
        self.B0 = B0
        self.center = pos0
        self.W0 = 4.0 * mesh.weight(pos0[:, 0]) * det0

        cells = mesh.cells
        self._rows = np.repeat(cells, 4, axis=1).ravel()
        self._cols = np.tile(cells, (1, 4)).ravel()

        # outlet edge: cells of the last layer, local nodes 3 (inner) and 2 (outer) on eta = +1
        last = np.flatnonzero(mesh.cell_station == mesh.n_z - 1)
        self.outlet_cells = last
        Be, We, Pe, Ne = [], [], [], []
        for xi in (-_G, _G):
            B, _, pos = _geometry_at(xy[last], xi, 1.0)
            # edge Jacobian |dr/dxi| along the station line
            edge = 0.5 * (xy[last, 2, 0] - xy[last, 3, 0])
            Be.append(B)
            We.append(mesh.weight(pos[:, 0]) * edge)
            Pe.append(pos)
            Ne.append(_shape(xi, 1.0))
        self.B_out = np.stack(Be, axis=1)
        self.W_out = np.stack(We, axis=1)
        self.out_pos = np.stack(Pe, axis=1)
        self.N_out = np.array(Ne)

        # test function that steps from 0 to 1 across each cell layer (discrete section flux)
        self.dchi = self.B[:, :, 2, :] + self.B[:, :, 3, :]

    # -- assembly --------------------------------------------------------------
    def stiffness(self, coef=None):
        """``sum_g coef W grad N_a . grad N_b`` as CSR; ``coef`` has shape (cells, 4)."""
        if coef is None:
            coef = 1.0
        cw = coef * self.W
        Ke = np.einsum("cg,cgad,cgbd->cab", cw, self.B, self.B)
        n = self.mesh.n_nodes
        K = sp.csr_matrix((Ke.ravel(), (self._rows, self._cols)), shape=(n, n))
        K.sum_duplicates()
        return K

    def load(self, values):
        """``int w f N_a`` for Gauss-point values ``f`` (cells, 4)."""
        fe = np.einsum("cg,ga->ca", values * self.W, self.N)
        return np.bincount(self.mesh.cells.ravel(), weights=fe.ravel(), minlength=self.mesh.n_nodes)

    def outlet_load(self, values):
        """``int_{Sigma_L} w g N_a`` for outlet Gauss-point values (outlet cells, 2)."""
        fe = np.einsum("cg,ga->ca", values * self.W_out, self.N_out)
        cells = self.mesh.cells[self.outlet_cells]
        return np.bincount(cells.ravel(), weights=fe.ravel(), minlength=self.mesh.n_nodes)

    # -- evaluation ------------------------------------------------------------
    def grad_gp(self, phi):
        return np.einsum("cgad,ca->cgd", self.B, phi[self.mesh.cells])

    def grad_center(self, phi):
        return np.einsum("cad,ca->cd", self.B0, phi[self.mesh.cells])

    def grad_outlet(self, phi):
        return np.einsum("cgad,ca->cgd", self.B_out, phi[self.mesh.cells[self.outlet_cells]])

    def layer_flux(self, flux_gp):
        """Discrete flux through every station ``j >= 1``.

        ``flux_gp`` is the (cells, 4, 2) mass-flux density at Gauss points.
        Station ``j`` uses the layer of cells between stations ``j-1`` and ``j``.
        """
        per_cell = np.einsum("cg,cgd,cgd->c", self.W, flux_gp, self.dchi)
        return np.bincount(self.mesh.cell_station, weights=per_cell, minlength=self.mesh.n_z)


def discretize(mesh: MeridianMesh) -> Discretization:
    """Cached :class:`Discretization` for ``mesh``."""
    disc = getattr(mesh, "_discretization", None)
    if disc is None:
        disc = Discretization(mesh)
        mesh._discretization = disc
    return disc


def _dot(a, b):
    # pairwise summation in numpy is order-fixed, unlike threaded BLAS dots
    return float(np.add.reduce(a * b))


def pcg(A, b, x0=None, rtol=1e-12, maxiter=None, record_every=10):
    """Jacobi-preconditioned conjugate gradients with Lanczos eigenvalue estimates.

    Returns ``(x, info)`` where ``info`` holds the iteration count, the final
    relative residual, a sampled residual history and estimates of the extreme
    eigenvalues of the preconditioned operator.  Raises
    :class:`ConvergenceError` if ``rtol`` is not reached within ``maxiter``.
    """
    n = b.size
    if maxiter is None:
        maxiter = max(1000, 20 * n)
    dinv = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return np.zeros(n), {"iterations": 0, "residual": 0.0, "history": [], "eig_min": np.nan, "eig_max": np.nan}
    z = dinv * r
    p = z.copy()
    rz = _dot(r, z)
    history = []
    alphas, betas = [], []
    res = np.sqrt(_dot(r, r)) / bnorm
    it = 0
    while res > rtol:
        if it >= maxiter:
            raise ConvergenceError(
                f"PCG stagnated at relative residual {res:.3e} after {it} iterations",
                history={"residual": history},
            )
        Ap = A @ p
        pAp = _dot(p, Ap)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = _dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
        alphas.append(alpha)
        betas.append(beta)
        it += 1
        res = np.sqrt(_dot(r, r)) / bnorm
        if it % record_every == 0:
            history.append(res)
    eig_min = eig_max = np.nan
    if len(alphas) >= 2:
        a = np.array(alphas)
        bt = np.array(betas)
        diag = 1.0 / a
        diag[1:] += bt[:-1] / a[:-1]
        off = np.sqrt(bt[:-1]) / a[:-1]
        from scipy.linalg import eigvalsh_tridiagonal

        ev = eigvalsh_tridiagonal(diag, off)
        eig_min, eig_max = float(ev[0]), float(ev[-1])
    return x, {"iterations": it, "residual": res, "history": history, "eig_min": eig_min, "eig_max": eig_max}
