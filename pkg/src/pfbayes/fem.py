"""Bilinear quadrilateral discretization and sparse assembly.

Everything is vectorized over elements and Gauss points. Element matrices are
scattered straight into a CSR matrix restricted to the free degrees of
freedom, using an index map computed once per (mesh, constraint set).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import MaterialParams
from .mesh import Mesh2D

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])
GAUSS_WEIGHTS = np.ones(4)
_XI = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def shape_functions(xi: np.ndarray):
    """Q1 shape functions and reference derivatives at points ``xi`` of shape (q, 2)."""
    xi = np.atleast_2d(xi)
    a = 1.0 + xi[:, None, 0] * _XI[None, :, 0]
    b = 1.0 + xi[:, None, 1] * _XI[None, :, 1]
    N = 0.25 * a * b
    dN = np.empty(N.shape + (2,))
    dN[..., 0] = 0.25 * _XI[None, :, 0] * b
    dN[..., 1] = 0.25 * _XI[None, :, 1] * a
    return N, dN


class SparsePattern:
    """Scatter map from element blocks into a CSR matrix over free dofs.

    Parameters
    ----------
    elem_dofs : (n_el, k) int array
        Global dof numbers of each element.
    free : (n_dof,) bool array
        Mask of unconstrained dofs; constrained rows and columns are dropped.
    """

    def __init__(self, elem_dofs: np.ndarray, free: np.ndarray):
        n_dof = len(free)
        self.free = free
        self.free_idx = np.flatnonzero(free)
        reduced = -np.ones(n_dof, dtype=np.int64)
        reduced[self.free_idx] = np.arange(len(self.free_idx))
        rdofs = reduced[elem_dofs]
        k = elem_dofs.shape[1]
        rows = np.repeat(rdofs, k, axis=1).ravel()
        cols = np.tile(rdofs, (1, k)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        self.keep = np.flatnonzero(keep)
        n = len(self.free_idx)
        lin = rows[keep] * n + cols[keep]
        uniq, self.inverse = np.unique(lin, return_inverse=True)
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(uniq // n, np.arange(n + 1)).astype(np.int32)
        self.n = n
        self.nnz = len(uniq)

        # upper band storage for LAPACK: ab[bw + i - j, j] = a[i, j] for i <= j
        row = uniq // n
        col = uniq % n
        upper = row <= col
        self.bandwidth = int(np.max(col[upper] - row[upper])) if n else 0
        self._band_src = np.flatnonzero(upper)
        self._band_dst = (self.bandwidth + row[upper] - col[upper], col[upper])

    def data(self, blocks: np.ndarray) -> np.ndarray:
        return np.bincount(self.inverse, weights=blocks.reshape(-1)[self.keep], minlength=self.nnz)

    def matrix(self, blocks: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((self.data(blocks), self.indices, self.indptr), shape=(self.n, self.n))

    def solve(self, blocks: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Solve the assembled symmetric positive definite system.

        Structured meshes in natural ordering give narrow bands, so a banded
        Cholesky factorization is tried first; SuperLU is the fallback.
        """
        data = self.data(blocks)
        ab = np.zeros((self.bandwidth + 1, self.n))
        ab[self._band_dst] = data[self._band_src]
        try:
            return sla.solveh_banded(ab, rhs, check_finite=False)
        except np.linalg.LinAlgError:
            A = sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))
            return spla.spsolve(A.tocsc(), rhs)


class Discretization:
    """Precomputed geometry of the active elements of a mesh.

    Attributes
    ----------
    elems : (n_a, 4) int array
        Connectivity of active elements.
    N : (4, 4) array
        Shape function values, ``N[q, a]``.
    dN : (n_a, 4, 4, 2) array
        Physical shape gradients ``dN[e, q, a, :]``.
    wdet : (n_a, 4) array
        Quadrature weight times Jacobian determinant.
    B : (n_a, 4, 3, 8) array
        Strain-displacement matrices producing ``(e_xx, e_yy, 2 e_xy)``.
    """

    def __init__(self, mesh: Mesh2D):
        self.mesh = mesh
        self.n_nodes = mesh.n_nodes
        self.active_idx = np.flatnonzero(mesh.active)
        self.elems = mesh.elements[self.active_idx]
        self.n_el = len(self.elems)
        self.node_mask = mesh.active_nodes

        N, dN_ref = shape_functions(GAUSS_POINTS)
        self.N = N
        X = mesh.nodes[self.elems]  # (n_a, 4, 2)
        J = np.einsum("qai,eaj->eqij", dN_ref, X)
        detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(detJ <= 0):
            bad = self.active_idx[np.any(detJ <= 0, axis=1)]
            raise ValueError(f"non-positive Jacobian in elements {bad[:10].tolist()}")
        Jinv = np.empty_like(J)
        Jinv[..., 0, 0] = J[..., 1, 1] / detJ
        Jinv[..., 1, 1] = J[..., 0, 0] / detJ
        Jinv[..., 0, 1] = -J[..., 0, 1] / detJ
        Jinv[..., 1, 0] = -J[..., 1, 0] / detJ
        # J[i, j] = dx_j / dxi_i, so grad_x N = J^-1 grad_xi N
        self.dN = np.einsum("qaj,eqij->eqai", dN_ref, Jinv)
        self.wdet = detJ * GAUSS_WEIGHTS[None, :]

        B = np.zeros((self.n_el, 4, 3, 8))
        B[:, :, 0, 0::2] = self.dN[..., 0]
        B[:, :, 1, 1::2] = self.dN[..., 1]
        B[:, :, 2, 0::2] = self.dN[..., 1]
        B[:, :, 2, 1::2] = self.dN[..., 0]
        self.B = B
        self.Bt = np.ascontiguousarray(np.swapaxes(B, -1, -2))

        self.u_dofs = np.empty((self.n_el, 8), dtype=np.int64)
        self.u_dofs[:, 0::2] = 2 * self.elems
        self.u_dofs[:, 1::2] = 2 * self.elems + 1

        # element mass blocks per Gauss point and stiffness (Laplacian) blocks
        self.NN = np.einsum("qa,qb->qab", N, N)
        self.lap = np.einsum("eqai,eqbi,eq->eab", self.dN, self.dN, self.wdet)
        self.load = np.einsum("qa,eq->ea", N, self.wdet)

    # ------------------------------------------------------------------
    # material fields
    # ------------------------------------------------------------------
    def gp_params(self, p: MaterialParams) -> MaterialParams:
        """Restrict per-element parameters to active elements, broadcastable over (n_a, 4)."""

        def take(v):
            v = np.asarray(v, dtype=float)
            if v.ndim == 0:
                return float(v)
            if v.shape[0] == self.mesh.n_elements:
                v = v[self.active_idx]
            elif v.shape[0] != self.n_el:
                raise ValueError(f"parameter field of length {v.shape[0]} does not match mesh")
            return v[:, None]

        return MaterialParams(mu=take(p.mu), K=take(p.K), Gc=take(p.Gc), kappa=p.kappa, ell=p.ell)

    # ------------------------------------------------------------------
    # kinematics and integration
    # ------------------------------------------------------------------
    def strains(self, u: np.ndarray) -> np.ndarray:
        """Gauss-point strains ``(n_a, 4, 3)`` in tensor components."""
        ue = u[self.u_dofs]
        ev = (self.B @ ue[:, None, :, None])[..., 0]
        ev[..., 2] *= 0.5
        return ev

    def element_forces(self, sig: np.ndarray) -> np.ndarray:
        """Element vectors ``sum_q B^T sigma w``, shape ``(n_a, 8)``."""
        return np.sum((self.Bt @ (sig * self.wdet[..., None])[..., None])[..., 0], axis=1)

    def scatter_u(self, fe: np.ndarray) -> np.ndarray:
        return np.bincount(self.u_dofs.ravel(), weights=fe.ravel(), minlength=2 * self.n_nodes)

    def internal_force(self, sig: np.ndarray) -> np.ndarray:
        """Global vector ``sum_e B^T sigma w`` for Gauss-point stresses ``(n_a, 4, 3)``."""
        return self.scatter_u(self.element_forces(sig))

    def stiffness_blocks(self, D: np.ndarray) -> np.ndarray:
        """Element matrices ``sum_q B^T D B w`` for Voigt tangents ``(n_a, 4, 3, 3)``."""
        return np.sum(self.Bt @ ((D * self.wdet[..., None, None]) @ self.B), axis=1)

    def interpolate(self, nodal: np.ndarray) -> np.ndarray:
        """Values of a nodal scalar field at Gauss points, ``(n_a, 4)``."""
        return np.einsum("qa,ea->eq", self.N, nodal[self.elems])

    def gradient(self, nodal: np.ndarray) -> np.ndarray:
        return np.einsum("eqai,ea->eqi", self.dN, nodal[self.elems])

    def integrate(self, values: np.ndarray) -> float:
        """Integral of Gauss-point values ``(n_a, 4)`` over the active domain."""
        return float(np.sum(values * self.wdet))

    def scalar_vector(self, fe: np.ndarray) -> np.ndarray:
        return np.bincount(self.elems.ravel(), weights=fe.ravel(), minlength=self.n_nodes)

    def lumped_weights(self) -> np.ndarray:
        """Nodal quadrature weights (row sums of the mass matrix)."""
        return self.scalar_vector(self.load)

    def centroid_values(self, nodal: np.ndarray) -> np.ndarray:
        """Bilinear interpolation of a nodal field at every element centroid (all elements)."""
        return nodal[self.mesh.elements].mean(axis=1)
