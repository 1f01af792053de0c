"""Karhunen-Loeve expansion of log-normal random fields on structured meshes.

The covariance operator with exponential kernel is discretized by Nystrom
collocation at mesh nodes using lumped (row-sum mass) quadrature weights ``w``.
With ``W = diag(w)`` the symmetric matrix ``W^1/2 C W^1/2`` has the same
eigenvalues as the weighted operator, and its eigenvectors ``v`` give nodal
modes ``k = W^-1/2 v`` that are orthonormal in the weighted inner product.

Small problems use a dense eigensolver. Larger ones exploit the lattice
structure: the kernel matrix is block Toeplitz, so a matrix-vector product is a
zero-padded FFT convolution and the leading modes come from Lanczos.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .fem import Discretization
from .mesh import Mesh2D

MAX_COLLOCATION = 20_000
DENSE_LIMIT = 2_000


@dataclass(frozen=True)
class RandomFieldSpec:
    """Gaussian field with standard deviation ``sigma`` and correlation length ``zeta`` (mm)."""

    sigma: float
    zeta: float
    n_kl: int = 100
    mean_log: Union[float, np.ndarray] = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.zeta <= 0:
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if self.n_kl < 1:
            raise ValueError(f"n_kl must be at least 1, got {self.n_kl}")


@dataclass
class KLBasis:
    """Leading eigenpairs of the discretized covariance operator.

    Attributes
    ----------
    eigenvalues : (n_kl,) array
        Nonincreasing, clipped at zero.
    modes : (n_nodes, n_kl) array
        Nodal eigenfunctions with ``sum_i w_i k_n(x_i) k_m(x_i) = delta_nm``
        over the collocation points.
    weights : (n_nodes,) array
        Quadrature weight carried by each node (zero at nodes that only touch
        inactive elements, and at nodes dropped by subsampling).
    total_variance : float
        Trace of the discrete operator, ``sigma^2 * sum(weights)``.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    weights: np.ndarray
    total_variance: float

    @property
    def n_kl(self) -> int:
        return len(self.eigenvalues)

    def save(self, path) -> None:
        np.savez(
            path,
            eigenvalues=self.eigenvalues,
            modes=self.modes,
            weights=self.weights,
            total_variance=self.total_variance,
        )

    @classmethod
    def load(cls, path) -> "KLBasis":
        with np.load(path) as f:
            return cls(f["eigenvalues"], f["modes"], f["weights"], float(f["total_variance"]))


def covariance(x, y, spec: RandomFieldSpec):
    """Exponential kernel ``sigma^2 exp(-|x - y| / zeta)`` for points in the last axis."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    return spec.sigma**2 * np.exp(-r / spec.zeta)


def _collocation(mesh: Mesh2D, max_points: int):
    """Lattice indices and weights of the collocation points.

    If the lattice has more than ``max_points`` nodes it is thinned with a
    uniform stride and every node hands its weight to the nearest kept node.
    Returns the kept coordinates, lattice shape and spacing, weights, the node
    index of each kept point, and for every node the point it maps to.
    """
    nx, ny = mesh.shape
    w_node = Discretization(mesh).lumped_weights()
    stride = 1
    while ((nx // stride) + 1) * ((ny // stride) + 1) > max_points:
        stride += 1
    ix = np.arange(0, nx + 1, stride)
    iy = np.arange(0, ny + 1, stride)
    xs, ys = mesh.lattice()
    gx, gy = np.meshgrid(xs[ix], ys[iy])
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    kept = (iy[:, None] * (nx + 1) + ix[None, :]).ravel()

    if stride == 1:
        owner = np.arange(mesh.n_nodes)
    else:
        _, owner = cKDTree(pts).query(mesh.nodes)
    w = np.bincount(owner, weights=w_node, minlength=len(pts))
    spacing = (xs[min(stride, nx)] - xs[0], ys[min(stride, ny)] - ys[0])
    return pts, (len(iy), len(ix)), spacing, w, kept, owner


def _fft_operator(shape, spacing, w, spec):
    """Matrix-free ``x -> W^1/2 C W^1/2 x`` on a regular lattice via circulant embedding."""
    my, mx = shape
    hx, hy = spacing
    ox = np.concatenate([np.arange(mx), np.arange(-mx, 0)]) * hx
    oy = np.concatenate([np.arange(my), np.arange(-my, 0)]) * hy
    r = np.hypot(oy[:, None], ox[None, :])
    kernel_hat = sfft.rfft2(spec.sigma**2 * np.exp(-r / spec.zeta))
    sw = np.sqrt(w)

    def matvec(x):
        v = np.zeros((2 * my, 2 * mx))
        v[:my, :mx] = (sw * np.ravel(x)).reshape(my, mx)
        out = sfft.irfft2(sfft.rfft2(v) * kernel_hat, s=v.shape)[:my, :mx]
        return sw * out.ravel()

    n = my * mx
    return spla.LinearOperator((n, n), matvec=matvec, dtype=float)


def kl_decompose(mesh: Mesh2D, spec: RandomFieldSpec, max_points: int = MAX_COLLOCATION) -> KLBasis:
    """Leading ``spec.n_kl`` eigenpairs of the covariance operator on ``mesh``."""
    pts, shape, spacing, w, kept, owner = _collocation(mesh, max_points)
    live = w > 0
    n_live = int(live.sum())
    if spec.n_kl > n_live:
        raise ValueError(f"n_kl={spec.n_kl} exceeds the {n_live} collocation points")
    total = spec.sigma**2 * float(w.sum())

    if spec.sigma == 0:
        vals = np.zeros(spec.n_kl)
        vecs = np.zeros((len(pts), spec.n_kl))
        vecs[np.flatnonzero(live)[: spec.n_kl], np.arange(spec.n_kl)] = 1.0
    elif n_live <= DENSE_LIMIT or spec.n_kl >= n_live - 1:
        p = pts[live]
        sw = np.sqrt(w[live])
        A = covariance(p[:, None, :], p[None, :, :], spec) * sw[:, None] * sw[None, :]
        lo = n_live - spec.n_kl
        vals, v = sla.eigh(A, subset_by_index=(lo, n_live - 1))
        vecs = np.zeros((len(pts), spec.n_kl))
        vecs[live] = v
    else:
        op = _fft_operator(shape, spacing, w, spec)
        rng = np.random.default_rng(0)
        v0 = np.where(live, 1.0 + 0.1 * rng.standard_normal(len(pts)), 0.0)
        vals, vecs = spla.eigsh(op, k=spec.n_kl, which="LA", v0=v0)
        vecs[~live] = 0.0

    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    modes_pts = np.zeros_like(vecs)
    modes_pts[live] = vecs[live] / np.sqrt(w[live])[:, None]

    # nodes whose collocation point carries no weight take the nearest live point
    target = owner.copy()
    dead = ~live[target]
    if np.any(dead):
        live_idx = np.flatnonzero(live)
        _, j = cKDTree(pts[live_idx]).query(mesh.nodes[dead])
        target[dead] = live_idx[j]
    node_w = np.zeros(mesh.n_nodes)
    node_w[kept] = w
    return KLBasis(vals, modes_pts[target], node_w, total)


def cache_key(mesh: Mesh2D, spec: RandomFieldSpec) -> str:
    return f"kl_{mesh.digest()}_{spec.sigma:.12g}_{spec.zeta:.12g}_{spec.n_kl}"


def cached_kl_decompose(mesh: Mesh2D, spec: RandomFieldSpec, cache_dir: Optional[os.PathLike] = None) -> KLBasis:
    """:func:`kl_decompose` backed by an ``.npz`` sidecar in ``cache_dir``."""
    if cache_dir is None:
        return kl_decompose(mesh, spec)
    path = Path(cache_dir) / (cache_key(mesh, spec) + ".npz")
    if path.exists():
        return KLBasis.load(path)
    basis = kl_decompose(mesh, spec)
    path.parent.mkdir(parents=True, exist_ok=True)
    basis.save(path)
    return basis


def gaussian_field(basis: KLBasis, mean_log, xi) -> np.ndarray:
    """Truncated expansion ``mean_log + sum_n sqrt(psi_n) k_n xi_n`` at the nodes."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape != (basis.n_kl,):
        raise ValueError(f"xi must have length {basis.n_kl}, got shape {xi.shape}")
    return mean_log + basis.modes @ (np.sqrt(basis.eigenvalues) * xi)


def realize_lognormal(basis: KLBasis, mean_log, xi) -> np.ndarray:
    """Strictly positive nodal field ``exp(gaussian_field(...))``."""
    return np.exp(gaussian_field(basis, mean_log, xi))


def sample_xi(n_kl: int, rng: np.random.Generator) -> np.ndarray:
    """``n_kl`` independent standard normal coefficients."""
    return rng.standard_normal(n_kl)


def reconstructed_covariance(basis: KLBasis, i, j) -> np.ndarray:
    """Truncated Mercer sum ``sum_n psi_n k_n(x_i) k_n(x_j)``."""
    return np.sum(basis.eigenvalues * basis.modes[i] * basis.modes[j], axis=-1)
