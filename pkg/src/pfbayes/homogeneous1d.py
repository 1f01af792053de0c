"""Homogeneous one-dimensional AT-2 response under monotone uniaxial strain.

For a bar with uniform strain the phase-field equation has no gradient term
and the damage follows in closed form from the driving state. This gives an
analytic stress-strain law used to study the residual stiffness ``kappa``.

Units are SI here (Pa, N/m, m), unlike the finite-element modules which work
in kN and mm; see :func:`si_to_kn_mm` and :func:`kn_mm_to_si`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

PA_PER_KN_MM2 = 1e9
N_PER_M_PER_KN_MM = 1e6
M_PER_MM = 1e-3


@dataclass(frozen=True)
class Homogeneous1DParams:
    """Young's modulus ``E`` (Pa), ``Gc`` (N/m), length scale ``ell`` (m), ``kappa``."""

    E: float
    Gc: float
    ell: float
    kappa: float = 0.0

    def __post_init__(self):
        for name in ("E", "Gc", "ell"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")


CONCRETE = Homogeneous1DParams(E=29e9, Gc=70.0, ell=0.0105, kappa=0.0)


def si_to_kn_mm(E_pa: float, Gc_n_per_m: float, ell_m: float):
    """Convert ``(E, Gc, ell)`` from (Pa, N/m, m) to (kN/mm^2, kN/mm, mm)."""
    return E_pa / PA_PER_KN_MM2, Gc_n_per_m / N_PER_M_PER_KN_MM, ell_m / M_PER_MM


def kn_mm_to_si(E: float, Gc: float, ell: float):
    """Inverse of :func:`si_to_kn_mm`."""
    return E * PA_PER_KN_MM2, Gc * N_PER_M_PER_KN_MM, ell * M_PER_MM


def driving_state(eps, p: Homogeneous1DParams):
    eps = np.asarray(eps, dtype=float)
    return p.ell * 0.5 * p.E * eps**2 / p.Gc


def d_homo(eps, p: Homogeneous1DParams):
    """Damage ``1 / (1 + 2 (1 - kappa) D)`` for loading strain ``eps >= 0``."""
    return 1.0 / (1.0 + 2.0 * (1.0 - p.kappa) * driving_state(eps, p))


def sigma_homo(eps, p: Homogeneous1DParams):
    """Degraded stress ``((1 - kappa) d^2 + kappa) E eps`` in Pa."""
    eps = np.asarray(eps, dtype=float)
    d = d_homo(eps, p)
    return ((1.0 - p.kappa) * d**2 + p.kappa) * p.E * eps


def closed_form_peak(p: Homogeneous1DParams):
    """Peak strain and stress of the ``kappa = 0`` law.

    Returns
    -------
    eps_star, sigma_c : float
        ``sqrt(Gc / (3 ell E))`` and ``(9/16) sqrt(E Gc / (3 ell))``.
    """
    eps_star = np.sqrt(p.Gc / (3.0 * p.ell * p.E))
    sigma_c = 9.0 / 16.0 * np.sqrt(p.E * p.Gc / (3.0 * p.ell))
    return float(eps_star), float(sigma_c)


@dataclass(frozen=True)
class PeakResult:
    eps_star: float
    sigma_c: float
    interior: bool


def peak_stress(p: Homogeneous1DParams, upper_factor: float = 10.0, n_grid: int = 200, tol: float = 1e-12):
    """Maximize ``sigma_homo`` over ``(0, upper_factor * eps_guess]``.

    A coarse grid locates the bracket, then golden-section search refines it.
    If the maximum sits on the right end of the interval (e.g. ``kappa = 1``,
    where the law is linear) the endpoint is returned with ``interior=False``.
    """
    if not p.kappa < 1.0:
        upper = upper_factor * closed_form_peak(p)[0]
        return PeakResult(upper, float(sigma_homo(upper, p)), False)
    eps_guess, _ = closed_form_peak(p)
    grid = np.linspace(0.0, upper_factor * eps_guess, n_grid + 1)
    values = sigma_homo(grid, p)
    i = int(np.argmax(values))
    if i == len(grid) - 1:
        return PeakResult(float(grid[-1]), float(values[-1]), False)
    i = max(i, 1)
    res = optimize.minimize_scalar(
        lambda e: -sigma_homo(e, p),
        bracket=(grid[i - 1], grid[i], grid[i + 1]),
        method="golden",
        tol=tol,
    )
    return PeakResult(float(res.x), float(-res.fun), True)


def kappa_deviation(kappa: float, p: Homogeneous1DParams = CONCRETE, span: float = 3.0, n: int = 20001):
    """Sup-norm of ``sigma_kappa - sigma_0`` over ``[0, span * eps_star]``, relative to ``sigma_c``."""
    eps_star, sigma_c = closed_form_peak(p)
    eps = np.linspace(0.0, span * eps_star, n)
    p0 = Homogeneous1DParams(p.E, p.Gc, p.ell, 0.0)
    pk = Homogeneous1DParams(p.E, p.Gc, p.ell, kappa)
    return float(np.max(np.abs(sigma_homo(eps, pk) - sigma_homo(eps, p0))) / sigma_c)


def stress_strain_table(p: Homogeneous1DParams, span: float = 3.0, n: int = 301):
    """``(eps, sigma)`` samples over ``[0, span * eps_star]``."""
    eps_star, _ = closed_form_peak(p)
    eps = np.linspace(0.0, span * eps_star, n)
    return eps, sigma_homo(eps, p)
