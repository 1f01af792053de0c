"""Pointwise material kernels for the isotropic AT-2 phase-field model.

Strains and stresses are symmetric 2x2 tensors stored as ``(..., 3)`` arrays of
tensor components ``(xx, yy, xy)``; the shear entry is the tensor component,
not the engineering strain. Every function broadcasts over leading axes so the
same code serves one Gauss point or a whole mesh.

Tangents are returned as ``(..., 3, 3)`` matrices in Voigt form, i.e. acting on
``(e_xx, e_yy, 2 e_xy)`` and producing ``(s_xx, s_yy, s_xy)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Tuple, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

# Below this eigenvalue gap the split is evaluated as if the tensor were diagonal.
DEGENERATE_TOL = 1e-14
# Below this gap the divided difference in the projection tangent is replaced by its limit.
COINCIDENCE_TOL = 1e-8

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class MaterialParams:
    """Material constants in kN and mm.

    ``mu``, ``K`` and ``Gc`` may be scalars or per-element arrays (random-field
    runs); ``kappa`` and ``ell`` are always scalars.
    """

    mu: ArrayLike
    K: ArrayLike
    Gc: ArrayLike
    kappa: float = 1e-8
    ell: float = 0.1

    def __post_init__(self):
        for name in ("mu", "K", "Gc"):
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValueError(f"{name} must be finite and positive, got {getattr(self, name)!r}")
        if not 0.0 <= self.kappa < 1.0:
            raise ValueError(f"kappa must lie in [0, 1), got {self.kappa}")
        if self.ell <= 0:
            raise ValueError(f"ell must be positive, got {self.ell}")

    @property
    def lame(self) -> ArrayLike:
        """First Lame parameter ``K - 2 mu / 3``."""
        return np.asarray(self.K) - 2.0 * np.asarray(self.mu) / 3.0

    def with_(self, **changes) -> "MaterialParams":
        return replace(self, **changes)


def strain(grad_u: np.ndarray) -> np.ndarray:
    """Symmetric part of a ``(..., 2, 2)`` displacement gradient."""
    g = np.asarray(grad_u, dtype=float)
    return np.stack([g[..., 0, 0], g[..., 1, 1], 0.5 * (g[..., 0, 1] + g[..., 1, 0])], axis=-1)


def to_matrix(eps: np.ndarray) -> np.ndarray:
    e = np.asarray(eps, dtype=float)
    row0 = np.stack([e[..., 0], e[..., 2]], axis=-1)
    row1 = np.stack([e[..., 2], e[..., 1]], axis=-1)
    return np.stack([row0, row1], axis=-2)


def invariants(eps: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``I1 = tr(eps)`` and ``I2 = tr(eps^2)``."""
    e = np.asarray(eps, dtype=float)
    i1 = e[..., 0] + e[..., 1]
    i2 = e[..., 0] ** 2 + e[..., 1] ** 2 + 2.0 * e[..., 2] ** 2
    return i1, i2


def macaulay_plus(x):
    return 0.5 * (x + np.abs(x))


def macaulay_minus(x):
    return 0.5 * (x - np.abs(x))


def _eigen(eps: np.ndarray):
    """Closed-form eigenvalues and unit eigenvectors of a symmetric 2x2 tensor.

    Returns ``lam1 >= lam2`` and the angle ``theta`` of the first eigenvector.
    """
    exx, eyy, exy = eps[..., 0], eps[..., 1], eps[..., 2]
    mean = 0.5 * (exx + eyy)
    half_gap = np.hypot(0.5 * (exx - eyy), exy)
    theta = 0.5 * np.arctan2(2.0 * exy, exx - eyy)
    return mean + half_gap, mean - half_gap, theta, half_gap


def _projectors(theta):
    """Mandel vectors of ``N1 x N1`` and ``N2 x N2`` for eigenvector angle ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    m1 = np.stack([c * c, s * s, _SQRT2 * c * s], axis=-1)
    m2 = np.stack([s * s, c * c, -_SQRT2 * c * s], axis=-1)
    return m1, m2


def spectral_split(eps: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split ``eps`` into tensile and compressive parts by its principal strains."""
    e = np.asarray(eps, dtype=float)
    lam1, lam2, theta, half_gap = _eigen(e)
    m1, m2 = _projectors(theta)
    scale = np.array([1.0, 1.0, 1.0 / _SQRT2])
    plus = (macaulay_plus(lam1)[..., None] * m1 + macaulay_plus(lam2)[..., None] * m2) * scale

    # Nearly isotropic tensors have no well defined eigenvectors; split componentwise.
    degenerate = half_gap < DEGENERATE_TOL
    if np.any(degenerate):
        diag_plus = np.stack(
            [macaulay_plus(e[..., 0]), macaulay_plus(e[..., 1]), np.zeros_like(e[..., 2])], axis=-1
        )
        plus = np.where(degenerate[..., None], diag_plus, plus)
    minus = e - plus
    return plus, minus


def psi_tilde(eps: np.ndarray, p: MaterialParams) -> np.ndarray:
    """Undegraded isotropic energy density ``K/2 I1^2 - mu (I1^2/3 - I2)``."""
    i1, i2 = invariants(eps)
    return 0.5 * np.asarray(p.K) * i1**2 - np.asarray(p.mu) * (i1**2 / 3.0 - i2)


def split_energies(eps: np.ndarray, p: MaterialParams) -> Tuple[np.ndarray, np.ndarray]:
    """Tensile and compressive energy densities ``(psi_plus, psi_minus)``."""
    e_plus, e_minus = spectral_split(eps)
    i1, _ = invariants(eps)
    _, i2p = invariants(e_plus)
    _, i2m = invariants(e_minus)
    K = np.asarray(p.K)
    mu = np.asarray(p.mu)
    i1p = macaulay_plus(i1)
    i1m = macaulay_minus(i1)
    psi_p = 0.5 * K * i1p**2 - mu * (i1p**2 / 3.0 - i2p)
    psi_m = 0.5 * K * i1m**2 - mu * (i1m**2 / 3.0 - i2m)
    return psi_p, psi_m


def degradation(d: ArrayLike, kappa: float) -> np.ndarray:
    """``g(d) = (1 - kappa) d+^2 + kappa`` with ``d+ = clip(d, 0, 1)``."""
    dp = np.clip(d, 0.0, 1.0)
    return (1.0 - kappa) * dp**2 + kappa


def w_bulk(eps: np.ndarray, d: ArrayLike, p: MaterialParams) -> np.ndarray:
    psi_p, psi_m = split_energies(eps, p)
    return degradation(d, p.kappa) * psi_p + psi_m


def split_stresses(eps: np.ndarray, p: MaterialParams) -> Tuple[np.ndarray, np.ndarray]:
    """Derivatives of ``psi_plus`` and ``psi_minus`` with respect to the strain."""
    e_plus, e_minus = spectral_split(eps)
    i1, _ = invariants(eps)
    lam = np.asarray(p.lame)[..., None]
    mu = np.asarray(p.mu)[..., None]
    eye = np.array([1.0, 1.0, 0.0])
    s_plus = lam * macaulay_plus(i1)[..., None] * eye + 2.0 * mu * e_plus
    s_minus = lam * macaulay_minus(i1)[..., None] * eye + 2.0 * mu * e_minus
    return s_plus, s_minus


def stress(eps: np.ndarray, d: ArrayLike, p: MaterialParams) -> np.ndarray:
    """Degraded Cauchy stress ``g(d) sigma+ + sigma-`` in kN/mm^2."""
    s_plus, s_minus = split_stresses(eps, p)
    g = np.asarray(degradation(d, p.kappa))[..., None]
    return g * s_plus + s_minus


def _projection_tangents(eps: np.ndarray):
    """Mandel matrices of the fourth-order projections d eps+/d eps and d eps-/d eps."""
    lam1, lam2, theta, half_gap = _eigen(eps)
    m1, m2 = _projectors(theta)
    gap = lam1 - lam2
    ident = np.eye(3)
    outer11 = m1[..., :, None] * m1[..., None, :]
    outer22 = m2[..., :, None] * m2[..., None, :]
    rest = ident - outer11 - outer22

    def step_plus(x):
        return np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))

    close = gap < COINCIDENCE_TOL
    safe_gap = np.where(close, 1.0, gap)
    divided = np.where(
        close,
        step_plus(0.5 * (lam1 + lam2)),
        (macaulay_plus(lam1) - macaulay_plus(lam2)) / safe_gap,
    )
    p_plus = (
        step_plus(lam1)[..., None, None] * outer11
        + step_plus(lam2)[..., None, None] * outer22
        + divided[..., None, None] * rest
    )
    return p_plus, ident - p_plus


def tangent(eps: np.ndarray, d: ArrayLike, p: MaterialParams) -> np.ndarray:
    """Consistent tangent ``d sigma / d eps`` in Voigt form, shape ``(..., 3, 3)``."""
    e = np.asarray(eps, dtype=float)
    p_plus, p_minus = _projection_tangents(e)
    i1, _ = invariants(e)
    h_plus = np.where(i1 > 0, 1.0, 0.0)[..., None, None]
    ii = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    lam = np.asarray(p.lame)[..., None, None]
    mu = np.asarray(p.mu)[..., None, None]
    g = np.asarray(degradation(d, p.kappa))[..., None, None]
    c_plus = lam * h_plus * ii + 2.0 * mu * p_plus
    c_minus = lam * (1.0 - h_plus) * ii + 2.0 * mu * p_minus
    mandel = g * c_plus + c_minus
    # Mandel -> Voigt: D_v = S D_m S with S = diag(1, 1, 1/sqrt2)
    s = np.array([1.0, 1.0, 1.0 / _SQRT2])
    return mandel * s[:, None] * s[None, :]


def elastic_tangent(p: MaterialParams) -> np.ndarray:
    """Unsplit plane-strain stiffness in Voigt form."""
    lam = float(np.mean(p.lame))
    mu = float(np.mean(p.mu))
    return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


def crack_driving(psi_plus: ArrayLike, p: MaterialParams) -> np.ndarray:
    """Dimensionless driving state ``ell * psi_plus / Gc``."""
    return p.ell * np.asarray(psi_plus) / np.asarray(p.Gc)


def update_history(h_old: ArrayLike, d_tilde: ArrayLike) -> np.ndarray:
    return np.maximum(h_old, d_tilde)
