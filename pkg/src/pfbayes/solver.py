"""Staggered displacement / phase-field solver with load stepping.

The displacement subproblem is solved by Newton's method, the phase-field
subproblem is linear once the history field is fixed. Both are alternated at a
fixed load level until the combined residual has dropped by ``tol_stag``
relative to its value at the start of the step. Irreversibility is carried by
the history field ``H``, which is committed once per converged load step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import constitutive as cm
from .constitutive import MaterialParams
from .fem import Discretization, SparsePattern
from .mesh import Mesh2D

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    """An iterative solve hit its iteration cap."""

    def __init__(self, what: str, iterations: int, residual: float, step: Optional[int] = None):
        self.what = what
        self.iterations = iterations
        self.residual = residual
        self.step = step
        where = "" if step is None else f" at load step {step}"
        super().__init__(f"{what} did not converge{where}: {iterations} iterations, residual {residual:.3e}")


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    tol_newton: float = 1e-8
    tol_stag: float = 1e-4
    tol_load: float = 1e-3
    n_max: int = 1000
    du_bar: float = 1e-4
    max_newton: int = 50
    max_stag: int = 2000
    d_broken: float = 0.01
    # "step": commit H after staggered convergence; "iteration": commit inside the loop
    history_update: str = "step"
    min_peak_steps: int = 3
    # absolute Newton floor, as a fraction of (max stiffness) * max|u| * sqrt(n_elements)
    newton_floor: float = 1e-13

    def __post_init__(self):
        for name in ("tol_newton", "tol_stag", "tol_load", "du_bar"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_max < 1 or self.max_newton < 1 or self.max_stag < 1:
            raise ValueError("iteration limits must be at least 1")
        if self.history_update not in ("step", "iteration"):
            raise ValueError(f"history_update must be 'step' or 'iteration', got {self.history_update!r}")


@dataclass
class DirichletBC:
    """Displacement constraints: ``fixed`` dofs held at zero, ``loaded`` dofs set to ``u_bar``.

    ``reaction_dofs`` are summed to form the reaction force.
    """

    fixed: np.ndarray
    loaded: np.ndarray
    reaction_dofs: np.ndarray
    u_bar: float = 0.0

    @property
    def constrained(self) -> np.ndarray:
        return np.concatenate([self.fixed, self.loaded])

    def apply(self, u: np.ndarray) -> None:
        u[self.fixed] = 0.0
        u[self.loaded] = self.u_bar


def tension_bc(mesh: Mesh2D, top_horizontal: str = "free") -> DirichletBC:
    """Bottom clamped, top pulled vertically.

    ``top_horizontal`` is ``"free"`` (only the vertical component is imposed on
    the top edge) or ``"fixed"`` (the top edge is also held at ``u_x = 0``).
    """
    if top_horizontal not in ("free", "fixed"):
        raise ValueError(f"top_horizontal must be 'free' or 'fixed', got {top_horizontal!r}")
    active = mesh.active_nodes
    bottom = mesh.boundary_sets["bottom"]
    top = mesh.boundary_sets["top"]
    bottom = bottom[active[bottom]]
    top = top[active[top]]
    parts = [2 * bottom, 2 * bottom + 1]
    if top_horizontal == "fixed":
        parts.append(2 * top)
    loaded = 2 * top + 1
    return DirichletBC(fixed=np.sort(np.concatenate(parts)), loaded=loaded, reaction_dofs=loaded)


@dataclass
class FieldState:
    """Nodal displacement and phase field plus Gauss-point history."""

    u: np.ndarray
    d: np.ndarray
    H: np.ndarray

    @classmethod
    def initial(cls, disc: Discretization) -> "FieldState":
        d = np.ones(disc.n_nodes)
        d[disc.mesh.crack_nodes] = 0.0
        return cls(u=np.zeros(2 * disc.n_nodes), d=d, H=np.zeros((disc.n_el, 4)))

    def copy(self) -> "FieldState":
        return FieldState(self.u.copy(), self.d.copy(), self.H.copy())


@dataclass
class LoadDispCurve:
    """Imposed displacement versus reaction force, one entry per load step."""

    u_bar: List[float] = field(default_factory=list)
    F: List[float] = field(default_factory=list)
    first_peak: Optional[int] = None
    failure: Optional[int] = None

    def append(self, u_bar: float, F: float) -> None:
        self.u_bar.append(float(u_bar))
        self.F.append(float(F))

    def __len__(self) -> int:
        return len(self.F)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(len(self.F))

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.u_bar), np.asarray(self.F)

    def peaks(self, min_steps: int = 3) -> List[int]:
        return find_peaks(self.F, min_steps)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("step,u_bar,F,is_peak,is_failure\n")
            peaks = set(self.peaks())
            for n, (ub, f) in enumerate(zip(self.u_bar, self.F)):
                fh.write(f"{n},{ub:.17g},{f:.17g},{int(n in peaks)},{int(n == self.failure)}\n")

    @classmethod
    def from_csv(cls, path) -> "LoadDispCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        curve = cls(u_bar=data[:, 1].tolist(), F=data[:, 2].tolist())
        peaks = curve.peaks()
        curve.first_peak = peaks[0] if peaks else None
        if data.shape[1] > 4 and data[:, 4].any():
            curve.failure = int(np.flatnonzero(data[:, 4])[0])
        return curve


def find_peaks(values, min_steps: int = 3) -> List[int]:
    """Indices ``n >= min_steps`` with ``F[n-1] < F[n] > F[n+1]``.

    A plateau at the top of a rise counts once, at its first index.
    """
    f = np.asarray(values, dtype=float)
    peaks = []
    n = max(min_steps, 1)
    while n < len(f) - 1:
        if f[n - 1] < f[n]:
            m = n
            while m + 1 < len(f) and f[m + 1] == f[n]:
                m += 1
            if m + 1 < len(f) and f[m + 1] < f[n]:
                peaks.append(n)
            n = m + 1
        else:
            n += 1
    return peaks


class PhaseFieldSolver:
    """Forward solver for one mesh, parameter set and boundary condition.

    Not safe to share across threads mid-solve; create one instance per chain.
    """

    def __init__(
        self,
        mesh: Mesh2D,
        params: MaterialParams,
        cfg: Optional[SolverConfig] = None,
        bc: Optional[DirichletBC] = None,
        disc: Optional[Discretization] = None,
    ):
        self.mesh = mesh
        self.cfg = cfg or SolverConfig()
        self.disc = disc or Discretization(mesh)
        self.params = self.disc.gp_params(params)
        self.bc = bc or tension_bc(mesh)

        disc = self.disc
        inactive = np.flatnonzero(~disc.node_mask)
        u_free = np.zeros(2 * disc.n_nodes, dtype=bool)
        touched = np.flatnonzero(disc.node_mask)
        u_free[2 * touched] = True
        u_free[2 * touched + 1] = True
        u_free[self.bc.constrained] = False
        self.u_pattern = SparsePattern(disc.u_dofs, u_free)

        d_free = disc.node_mask.copy()
        d_free[mesh.crack_nodes] = False
        self.d_pattern = SparsePattern(disc.elems, d_free)
        self.inactive = inactive
        self._d_monitor = disc.node_mask.copy()
        self._d_monitor[mesh.crack_nodes] = False
        self._stiffness = float(np.max(np.asarray(self.params.lame) + 2.0 * np.asarray(self.params.mu)))

    # ------------------------------------------------------------------
    # displacement subproblem
    # ------------------------------------------------------------------
    def residual_u(self, u: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Full internal-force vector (reactions on constrained dofs included)."""
        eps = self.disc.strains(u)
        dg = self.disc.interpolate(d)
        sig = cm.stress(eps, dg, self.params)
        return self.disc.internal_force(sig)

    def _u_system(self, u: np.ndarray, d: np.ndarray):
        eps = self.disc.strains(u)
        dg = self.disc.interpolate(d)
        sig = cm.stress(eps, dg, self.params)
        D = cm.tangent(eps, dg, self.params)
        r = self.disc.internal_force(sig)
        if not np.all(np.isfinite(r)):
            raise SolverError("non-finite entries in the displacement residual")
        return r, self.disc.stiffness_blocks(D)

    def _roundoff_scale(self, u: np.ndarray) -> float:
        # element forces are of order stiffness * displacement; roundoff follows that size
        return self._stiffness * float(np.max(np.abs(u))) * np.sqrt(self.disc.n_el)

    def assemble_u(self, u: np.ndarray, d: np.ndarray):
        """Full residual vector and the tangent reduced to free dofs (CSR)."""
        r, blocks = self._u_system(u, d)
        return r, self.u_pattern.matrix(blocks)

    def solve_u(self, u: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, int]:
        """Newton iteration for equilibrium at fixed ``d``; returns ``(u, iterations)``."""
        u = u.copy()
        self.bc.apply(u)
        u[2 * self.inactive] = 0.0
        u[2 * self.inactive + 1] = 0.0
        free = self.u_pattern.free_idx
        r, blocks = self._u_system(u, d)
        r0 = np.linalg.norm(r[free])
        res = r0
        for it in range(self.cfg.max_newton + 1):
            if res <= self.cfg.tol_newton * r0 or res <= self.cfg.newton_floor * self._roundoff_scale(u):
                return u, it
            if it == self.cfg.max_newton:
                break
            u[free] -= self.u_pattern.solve(blocks, r[free])
            r, blocks = self._u_system(u, d)
            res = np.linalg.norm(r[free])
        raise NonConvergence("Newton (displacement)", self.cfg.max_newton, res)

    # ------------------------------------------------------------------
    # phase-field subproblem
    # ------------------------------------------------------------------
    def driving_force(self, u: np.ndarray) -> np.ndarray:
        eps = self.disc.strains(u)
        psi_p, _ = cm.split_energies(eps, self.params)
        return cm.crack_driving(psi_p, self.params)

    def _d_blocks(self, H: np.ndarray) -> np.ndarray:
        coef = (1.0 + 2.0 * (1.0 - self.params.kappa) * H) * self.disc.wdet
        return np.einsum("eq,qab->eab", coef, self.disc.NN) + self.params.ell**2 * self.disc.lap

    def _d_rhs(self) -> np.ndarray:
        return self.disc.scalar_vector(self.disc.load)

    def residual_d(self, d: np.ndarray, H: np.ndarray) -> np.ndarray:
        """Residual of the phase-field equation on free nodes."""
        Ae = self._d_blocks(H)
        ke = np.einsum("eab,eb->ea", Ae, d[self.disc.elems])
        r = self.disc.scalar_vector(ke) - self._d_rhs()
        return r[self.d_pattern.free_idx]

    def solve_d(self, H: np.ndarray, d_template: Optional[np.ndarray] = None) -> np.ndarray:
        """Solve the linear phase-field equation for a given history field."""
        d = np.ones(self.disc.n_nodes) if d_template is None else d_template.copy()
        d[self.mesh.crack_nodes] = 0.0
        d[self.inactive] = 1.0
        free = self.d_pattern.free_idx
        # contributions of the fixed crack values (d = 0) vanish, inactive nodes are detached
        rhs = self._d_rhs()[free]
        sol = self.d_pattern.solve(self._d_blocks(H), rhs)
        if not np.all(np.isfinite(sol)):
            raise SolverError("phase-field system is singular; check crack and void tagging")
        d[free] = sol
        return d

    # ------------------------------------------------------------------
    # coupled step
    # ------------------------------------------------------------------
    def staggered_step(
        self, state: FieldState, u_bar: float, u_guess: Optional[np.ndarray] = None
    ) -> Tuple[FieldState, int]:
        """Alternate d and u solves at load level ``u_bar``.

        Returns the new state and the number of staggered iterations. The raw
        (unclamped) phase-field range is kept in ``last_d_range``.
        """
        cfg = self.cfg
        self.bc.u_bar = u_bar
        u = state.u.copy() if u_guess is None else u_guess.copy()
        self.bc.apply(u)
        d = state.d.copy()
        H_commit = state.H.copy()
        free_u = self.u_pattern.free_idx

        def stag_residual(u, d, H_trial):
            r_u = self.residual_u(u, d)[free_u]
            r_d = self.residual_d(d, H_trial)
            return np.linalg.norm(r_d) + np.linalg.norm(r_u)

        res0 = stag_residual(u, d, np.maximum(H_commit, self.driving_force(u)))
        scale = np.linalg.norm(self.residual_u(u, d))
        res = res0
        for k in range(1, cfg.max_stag + 1):
            H_trial = np.maximum(H_commit, self.driving_force(u))
            if cfg.history_update == "iteration":
                H_commit = H_trial
            d = self.solve_d(H_trial, d)
            u, _ = self.solve_u(u, d)
            H_new = np.maximum(H_commit, self.driving_force(u))
            res = stag_residual(u, d, H_new)
            if res <= cfg.tol_stag * res0 or res <= 1e-14 * max(scale, 1.0) or res0 == 0.0:
                break
        else:
            raise NonConvergence("staggered iteration", cfg.max_stag, res / max(res0, 1e-300))

        H = np.maximum(H_commit, self.driving_force(u))
        live = self._d_monitor
        self.last_d_range = (float(d[live].min()), float(d[live].max()))
        self.last_iterations = k
        return FieldState(u=u, d=np.clip(d, 0.0, 1.0), H=H), k

    def reaction_force(self, state: FieldState) -> float:
        r = self.residual_u(state.u, state.d)
        return float(np.sum(r[self.bc.reaction_dofs]))

    def broken(self, d: np.ndarray) -> bool:
        return bool(np.any(d[self._d_monitor] <= self.cfg.d_broken))

    def run(
        self,
        callback: Optional[Callable[[int, FieldState, float], None]] = None,
        state: Optional[FieldState] = None,
    ) -> Tuple[LoadDispCurve, FieldState]:
        """Monotonic displacement-controlled loading until failure or ``n_max``."""
        cfg = self.cfg
        state = state or FieldState.initial(self.disc)
        curve = LoadDispCurve()
        curve.append(0.0, 0.0)
        prev_u_bar = 0.0
        self.step_log = []
        for n in range(1, cfg.n_max + 1):
            u_bar = n * cfg.du_bar
            # scale the previous displacement to the new load level as predictor
            guess = state.u * (u_bar / prev_u_bar) if prev_u_bar > 0 else None
            try:
                new, iters = self.staggered_step(state, u_bar, guess)
            except NonConvergence as exc:
                raise NonConvergence(exc.what, exc.iterations, exc.residual, step=n) from exc
            self.step_log.append(
                {"step": n, "iterations": iters, "dH_min": float(np.min(new.H - state.H)),
                 "d_min": self.last_d_range[0], "d_max": self.last_d_range[1]}
            )
            state = new
            prev_u_bar = u_bar
            F = self.reaction_force(state)
            curve.append(u_bar, F)
            log.debug("step %d u_bar=%.4e F=%.6e stag=%d", n, u_bar, F, iters)
            if callback is not None:
                callback(n, state, F)
            if self.broken(state.d) and abs(F) < cfg.tol_load:
                curve.failure = n
                break
        peaks = curve.peaks(cfg.min_peak_steps)
        curve.first_peak = peaks[0] if peaks else None
        return curve, state

    # ------------------------------------------------------------------
    # diagnostics
    # ------------------------------------------------------------------
    def gamma_integral(self, d: np.ndarray) -> float:
        return gamma_integral(d, self.disc, self.params.ell)


def gamma_integral(d: np.ndarray, disc: Discretization, ell: float) -> float:
    """Regularized crack length ``int (1-d)^2/(2 ell) + ell/2 |grad d|^2``."""
    dq = disc.interpolate(d)
    gq = disc.gradient(d)
    dens = (1.0 - dq) ** 2 / (2.0 * ell) + 0.5 * ell * np.sum(gq**2, axis=-1)
    return disc.integrate(dens)


def run_load_stepping(
    mesh: Mesh2D,
    params: MaterialParams,
    cfg: Optional[SolverConfig] = None,
    callback=None,
) -> Tuple[LoadDispCurve, FieldState]:
    return PhaseFieldSolver(mesh, params, cfg).run(callback)
