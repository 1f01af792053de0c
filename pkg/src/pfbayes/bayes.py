"""Bayesian calibration of (mu, K, Gc) against load-displacement curves.

Parameters are sampled in log space, ``theta = (log mu, log K, log Gc)``.
Priors are stated on the physical values and transformed, Jacobian included,
so that a uniform box on ``mu`` becomes the density ``exp(theta) / (b - a)``
on ``theta = log mu``.

Proposals and priors are small duck-typed objects: a proposal has
``sample(current, rng)`` and ``logpdf(to, frm)``; a prior has ``logpdf(theta)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .constitutive import MaterialParams
from .fem import Discretization
from .mesh import Mesh2D
from .randomfield import KLBasis, realize_lognormal
from .solver import LoadDispCurve, NonConvergence, PhaseFieldSolver, SolverConfig, SolverError, tension_bc

log = logging.getLogger(__name__)

PARAM_NAMES = ("mu", "K", "Gc")
LOG_NAMES = ("mu_star", "K_star", "Gc_star")


class ForwardFailure(RuntimeError):
    """The forward model could not produce a curve for a proposal."""


# ----------------------------------------------------------------------
# likelihood
# ----------------------------------------------------------------------
def _forces(curve) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Force and displacement samples for steps ``n >= 1``.

    A :class:`LoadDispCurve` carries the unloaded step 0, which is dropped;
    plain arrays are taken to start at step 1 already.
    """
    if isinstance(curve, LoadDispCurve):
        ub, F = curve.as_arrays()
        return F[1:], ub[1:]
    return np.asarray(curve, dtype=float), None


def log_likelihood(sim, obs, sigma2: float = 1e-3, missing_penalty: float = 0.0) -> float:
    """Gaussian log-likelihood of the observed forces given a simulated curve.

    Curves are compared on their common steps ``n = 1 .. n_bar`` with
    ``n_bar = min(len(sim), len(obs))``; each step present in only one curve
    costs ``missing_penalty``.
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    f_sim, u_sim = _forces(sim)
    f_obs, u_obs = _forces(obs)
    n_bar = min(len(f_sim), len(f_obs))
    if n_bar == 0:
        raise ValueError("simulated and observed curves have no steps in common")
    if u_sim is not None and u_obs is not None and not np.allclose(u_sim[:n_bar], u_obs[:n_bar], rtol=1e-9, atol=0):
        raise ValueError("curves were computed with different displacement increments")
    resid = f_obs[:n_bar] - f_sim[:n_bar]
    value = -0.5 * n_bar * math.log(2.0 * math.pi * sigma2) - float(resid @ resid) / (2.0 * sigma2)
    return value - missing_penalty * abs(len(f_sim) - len(f_obs))


def curve_misfit(a, b) -> float:
    """L2 distance between two force sequences; the shorter one is extended with zero force."""
    fa, _ = _forces(a)
    fb, _ = _forces(b)
    n = max(len(fa), len(fb))
    pa = np.zeros(n)
    pb = np.zeros(n)
    pa[: len(fa)] = fa
    pb[: len(fb)] = fb
    return float(np.linalg.norm(pa - pb))


# ----------------------------------------------------------------------
# priors and proposals
# ----------------------------------------------------------------------
def _box(lower, upper):
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    if lo.shape != hi.shape:
        raise ValueError("lower and upper bounds differ in length")
    if np.any(lo <= 0) or np.any(hi < lo) or not np.all(np.isfinite(hi)):
        raise ValueError(f"bounds must satisfy 0 < lower <= upper < inf, got {lo}, {hi}")
    return lo, hi


def _log_uniform_density(theta, lo, hi) -> float:
    """Log-density of ``log X`` for ``X ~ U(lo, hi)``; degenerate components are point masses."""
    theta = np.asarray(theta, dtype=float)
    x = np.exp(theta)
    width = hi - lo
    point = width == 0
    tol = 1e-12 * hi
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        return -np.inf
    if np.any(point & (np.abs(x - lo) > tol)):
        return -np.inf
    live = ~point
    return float(np.sum(theta[live] - np.log(width[live])))


@dataclass
class UniformPrior:
    """Independent uniform priors on the physical parameters."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower, self.upper = _box(self.lower, self.upper)

    def logpdf(self, theta) -> float:
        return _log_uniform_density(theta, self.lower, self.upper)

    @property
    def mean_physical(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def mean_log(self) -> np.ndarray:
        """Log of the physical prior mean (the chain's default start)."""
        return np.log(self.mean_physical)


@dataclass
class GaussianLogPrior:
    """Independent normal priors on the log-parameters."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if np.any(self.std <= 0):
            raise ValueError("prior standard deviations must be positive")

    def logpdf(self, theta) -> float:
        z = (np.asarray(theta, dtype=float) - self.mean) / self.std
        return float(-0.5 * z @ z - np.sum(np.log(self.std)) - 0.5 * len(z) * math.log(2 * math.pi))

    @property
    def mean_log(self) -> np.ndarray:
        return self.mean


@dataclass
class UniformProposal:
    """Independence proposal drawing the physical parameters uniformly from a box.

    Only components flagged in ``free`` move; the others are copied.
    """

    lower: np.ndarray
    upper: np.ndarray
    free: Optional[np.ndarray] = None

    def __post_init__(self):
        self.lower, self.upper = _box(self.lower, self.upper)
        if self.free is None:
            self.free = np.ones(len(self.lower), dtype=bool)

    def sample(self, current, rng: np.random.Generator) -> np.ndarray:
        out = np.array(current, dtype=float)
        draw = np.log(rng.uniform(self.lower, self.upper))
        out[self.free] = draw[self.free]
        return out

    def logpdf(self, to, frm) -> float:
        f = self.free
        return _log_uniform_density(np.asarray(to)[f], self.lower[f], self.upper[f])

    def restrict(self, free) -> "UniformProposal":
        return UniformProposal(self.lower, self.upper, np.asarray(free, dtype=bool))


@dataclass
class NormalProposal:
    """Gaussian random walk in log space; symmetric."""

    step: np.ndarray
    free: Optional[np.ndarray] = None

    def __post_init__(self):
        self.step = np.atleast_1d(np.asarray(self.step, dtype=float))
        if np.any(self.step < 0):
            raise ValueError("proposal step widths must be non-negative")
        if self.free is None:
            self.free = np.ones(len(self.step), dtype=bool)

    def sample(self, current, rng: np.random.Generator) -> np.ndarray:
        out = np.array(current, dtype=float)
        z = rng.standard_normal(len(out))
        out[self.free] += (self.step * z)[self.free]
        return out

    def logpdf(self, to, frm) -> float:
        f = self.free & (self.step > 0)
        z = (np.asarray(to)[f] - np.asarray(frm)[f]) / self.step[f]
        return float(-0.5 * z @ z - np.sum(np.log(self.step[f])) - 0.5 * f.sum() * math.log(2 * math.pi))

    def restrict(self, free) -> "NormalProposal":
        return NormalProposal(self.step, np.asarray(free, dtype=bool))


def propose_uniform(lower, upper, rng: np.random.Generator) -> np.ndarray:
    """One independent draw from the uniform box, returned in log space."""
    lo, hi = _box(lower, upper)
    return UniformProposal(lo, hi).sample(np.log(lo), rng)


def propose_normal(current, step_sigma, rng: np.random.Generator) -> np.ndarray:
    return NormalProposal(step_sigma).sample(current, rng)


# ----------------------------------------------------------------------
# Metropolis-Hastings
# ----------------------------------------------------------------------
@dataclass
class MHStep:
    theta: np.ndarray
    logpost: float
    accepted: bool
    proposal: np.ndarray
    proposal_logpost: float


def mh_step(
    current,
    proposal,
    target_logpdf: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    current_logpdf: Optional[float] = None,
) -> MHStep:
    """One Metropolis-Hastings transition.

    The log acceptance ratio is the change in ``target_logpdf`` plus the
    proposal correction ``log q(current | new) - log q(new | current)``. A
    proposal with ``target_logpdf = -inf`` (outside the prior support, or a
    failed forward solve) is rejected without drawing.
    """
    current = np.asarray(current, dtype=float)
    lp_cur = target_logpdf(current) if current_logpdf is None else current_logpdf
    if not np.isfinite(lp_cur):
        raise ValueError("target log-density is not finite at the current state")
    new = proposal.sample(current, rng)
    lp_new = target_logpdf(new)
    u = rng.uniform()
    if not np.isfinite(lp_new):
        return MHStep(current, lp_cur, False, new, lp_new)
    log_alpha = lp_new - lp_cur + proposal.logpdf(current, new) - proposal.logpdf(new, current)
    if math.log(u) < log_alpha:
        return MHStep(new, lp_new, True, new, lp_new)
    return MHStep(current, lp_cur, False, new, lp_new)


def run_mh(
    target_logpdf: Callable[[np.ndarray], float],
    proposal,
    theta0,
    n_steps: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Plain MH chain; returns ``(samples, accepted)`` with ``n_steps`` rows."""
    theta = np.atleast_1d(np.asarray(theta0, dtype=float))
    lp = target_logpdf(theta)
    samples = np.empty((n_steps, len(theta)))
    accepted = np.zeros(n_steps, dtype=bool)
    for i in range(n_steps):
        step = mh_step(theta, proposal, target_logpdf, rng, lp)
        theta, lp = step.theta, step.logpost
        samples[i] = theta
        accepted[i] = step.accepted
    return samples, accepted


# ----------------------------------------------------------------------
# forward models
# ----------------------------------------------------------------------
def _cache_key(theta) -> Tuple[float, ...]:
    return tuple(float(f"{x:.10e}") for x in np.ravel(theta))


class ForwardModel:
    """Spatially constant parameters: ``theta`` is ``(log mu, log K, log Gc)``.

    Curves are memoized on ``theta`` rounded to 1e-10 relative, which only
    saves time when a sampler revisits a point.
    """

    def __init__(
        self,
        mesh: Mesh2D,
        cfg: Optional[SolverConfig] = None,
        kappa: float = 1e-8,
        ell: Optional[float] = None,
        top_horizontal: str = "free",
        cache: bool = True,
    ):
        self.mesh = mesh
        self.cfg = cfg or SolverConfig()
        self.kappa = kappa
        self.ell = 2.0 * mesh.h if ell is None else ell
        self.top_horizontal = top_horizontal
        self.disc = Discretization(mesh)
        self._cache: Optional[Dict[tuple, LoadDispCurve]] = {} if cache else None
        self.n_solves = 0

    def params(self, theta) -> MaterialParams:
        mu, K, Gc = np.exp(np.asarray(theta, dtype=float))
        return MaterialParams(mu=mu, K=K, Gc=Gc, kappa=self.kappa, ell=self.ell)

    def solve(self, params: MaterialParams) -> LoadDispCurve:
        bc = tension_bc(self.mesh, self.top_horizontal)
        solver = PhaseFieldSolver(self.mesh, params, self.cfg, bc=bc, disc=self.disc)
        self.n_solves += 1
        curve, _ = solver.run()
        return curve

    def __call__(self, theta) -> LoadDispCurve:
        key = _cache_key(theta)
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        try:
            curve = self.solve(self.params(theta))
        except (NonConvergence, SolverError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            raise ForwardFailure(str(exc)) from exc
        if self._cache is not None:
            self._cache[key] = curve
        return curve


class FieldForwardModel(ForwardModel):
    """Log-normal parameter fields sharing one KL basis.

    ``update="mean"``: ``theta`` holds the three log-means and the KL
    coefficients ``xi`` (shape ``(3, n_kl)``) stay fixed. ``update="xi"``:
    ``theta`` is the flattened coefficient array and the means stay fixed.
    Element values are taken at the centroids of the nodal realizations.
    """

    def __init__(self, mesh: Mesh2D, basis: KLBasis, xi, mean_log, update: str = "mean", **kwargs):
        super().__init__(mesh, **kwargs)
        if update not in ("mean", "xi"):
            raise ValueError(f"update must be 'mean' or 'xi', got {update!r}")
        self.basis = basis
        self.xi = np.asarray(xi, dtype=float).reshape(3, basis.n_kl)
        self.mean_log = np.asarray(mean_log, dtype=float).reshape(3)
        self.update = update

    def fields(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.update == "mean":
            means, xi = theta, self.xi
        else:
            means, xi = self.mean_log, theta.reshape(3, self.basis.n_kl)
        return [self.disc.centroid_values(realize_lognormal(self.basis, means[i], xi[i])) for i in range(3)]

    def params(self, theta) -> MaterialParams:
        mu, K, Gc = self.fields(theta)
        return MaterialParams(mu=mu, K=K, Gc=Gc, kappa=self.kappa, ell=self.ell)


# ----------------------------------------------------------------------
# inversion driver
# ----------------------------------------------------------------------
@dataclass
class Chain:
    """Samples in log space with per-step acceptance and log-likelihood.

    ``stage`` labels the one-dimensional mode's sub-chains (0 for the
    elastic pair, 1 for ``Gc``); it is all zeros in multi-dimensional mode.
    ``free`` marks which components were sampled at each step.
    """

    samples: np.ndarray
    accepted: np.ndarray
    loglik: np.ndarray
    stage: np.ndarray
    free: np.ndarray
    n_failures: int = 0
    names: Tuple[str, ...] = LOG_NAMES

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if len(self) else float("nan")

    def stage_acceptance(self) -> Dict[int, float]:
        return {int(s): float(np.mean(self.accepted[self.stage == s])) for s in np.unique(self.stage)}

    def select(self, stage: int) -> "Chain":
        m = self.stage == stage
        return Chain(self.samples[m], self.accepted[m], self.loglik[m], self.stage[m], self.free[m], 0, self.names)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("i," + ",".join(self.names) + ",accepted,loglik\n")
            for i, (th, a, ll) in enumerate(zip(self.samples, self.accepted, self.loglik)):
                vals = ",".join(f"{x:.17g}" for x in th)
                fh.write(f"{i},{vals},{int(a)},{ll:.17g}\n")

    @classmethod
    def from_csv(cls, path) -> "Chain":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = len(data)
        k = data.shape[1] - 3
        return cls(
            samples=data[:, 1 : 1 + k],
            accepted=data[:, 1 + k].astype(bool),
            loglik=data[:, 2 + k],
            stage=np.zeros(n, dtype=int),
            free=np.ones((n, k), dtype=bool),
        )


class _Target:
    """Log-posterior with the most recent log-likelihood remembered."""

    def __init__(self, forward, obs, prior, sigma2, missing_penalty):
        self.forward = forward
        self.obs = obs
        self.prior = prior
        self.sigma2 = sigma2
        self.missing_penalty = missing_penalty
        self.last_loglik = -np.inf
        self.n_failures = 0

    def __call__(self, theta) -> float:
        lp = self.prior.logpdf(theta)
        self.last_loglik = -np.inf
        if not np.isfinite(lp):
            return -np.inf
        try:
            curve = self.forward(theta)
        except ForwardFailure as exc:
            self.n_failures += 1
            log.warning("forward solve failed at theta=%s: %s", np.round(np.exp(theta), 6), exc)
            return -np.inf
        self.last_loglik = log_likelihood(curve, self.obs, self.sigma2, self.missing_penalty)
        return lp + self.last_loglik


def _sample(target, proposal, theta, lp, ll, n, rng, stage, out):
    for _ in range(n):
        step = mh_step(theta, proposal, target, rng, lp)
        if step.accepted:
            ll = target.last_loglik
        theta, lp = step.theta, step.logpost
        out["samples"].append(theta.copy())
        out["accepted"].append(step.accepted)
        out["loglik"].append(ll)
        out["stage"].append(stage)
        out["free"].append(np.asarray(proposal.free, dtype=bool).copy())
    return theta, lp, ll


def run_inversion(
    forward: Callable[[np.ndarray], LoadDispCurve],
    obs: LoadDispCurve,
    prior,
    proposal,
    n_samples: int,
    rng: np.random.Generator,
    mode: str = "multi",
    theta0=None,
    sigma2: float = 1e-3,
    missing_penalty: float = 0.0,
    burn_in: float = 0.2,
) -> Chain:
    """Sample the posterior of the log-parameters.

    Parameters
    ----------
    mode : {"multi", "one"}
        ``"multi"`` moves all three components together. ``"one"`` first
        runs ``n_samples`` steps on ``(mu*, K*)`` with ``Gc*`` held at its
        start value, then ``n_samples`` steps on ``Gc*`` with the pair fixed
        at its post-burn-in posterior mean.
    theta0 : array, optional
        Start of the chain; defaults to ``prior.mean_log``.

    Forward-solve failures count as rejections and are tallied in
    ``Chain.n_failures``.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be at least 1, got {n_samples}")
    if mode not in ("multi", "one"):
        raise ValueError(f"mode must be 'multi' or 'one', got {mode!r}")
    theta = np.array(prior.mean_log if theta0 is None else theta0, dtype=float)
    target = _Target(forward, obs, prior, sigma2, missing_penalty)
    lp = target(theta)
    if not np.isfinite(lp):
        raise ValueError(f"log-posterior is not finite at the start point {np.exp(theta)}")
    ll = target.last_loglik
    out = {"samples": [], "accepted": [], "loglik": [], "stage": [], "free": []}

    if mode == "multi":
        _sample(target, proposal, theta, lp, ll, n_samples, rng, 0, out)
    else:
        pair = np.array([True, True, False])
        theta, lp, ll = _sample(target, proposal.restrict(pair), theta, lp, ll, n_samples, rng, 0, out)
        first = np.asarray(out["samples"])
        start = min(int(burn_in * len(first)), len(first) - 1)
        theta = theta.copy()
        theta[:2] = first[start:, :2].mean(axis=0)
        lp = target(theta)
        if not np.isfinite(lp):
            # the averaged pair failed to solve; keep the last state of the first stage
            theta = first[-1].copy()
            lp = target(theta)
        ll = target.last_loglik
        _sample(target, proposal.restrict(~pair), theta, lp, ll, n_samples, rng, 1, out)

    samples = np.asarray(out["samples"])
    names = LOG_NAMES if samples.shape[1] == 3 else tuple(f"theta_{j}" for j in range(samples.shape[1]))
    chain = Chain(
        samples=samples,
        accepted=np.asarray(out["accepted"], dtype=bool),
        loglik=np.asarray(out["loglik"]),
        stage=np.asarray(out["stage"], dtype=int),
        free=np.asarray(out["free"], dtype=bool),
        n_failures=target.n_failures,
        names=names,
    )
    log.info("inversion finished: acceptance %.3f, %d forward failures", chain.acceptance_rate, chain.n_failures)
    return chain


# ----------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------
def acf(x, tau: int) -> float:
    """Sample autocorrelation ``R(tau)`` normalized by the lag-0 sum of squares."""
    x = np.asarray(x, dtype=float)
    if not 0 <= tau < len(x):
        raise ValueError(f"lag {tau} outside [0, {len(x)})")
    c = x - x.mean()
    denom = float(c @ c)
    if denom == 0.0:
        raise ValueError("autocorrelation undefined for a constant chain")
    return float(c[: len(x) - tau] @ c[tau:]) / denom


def acf_curve(x, max_lag: int) -> np.ndarray:
    max_lag = min(max_lag, len(x) - 1)
    return np.array([acf(x, t) for t in range(max_lag + 1)])


def acf_slope(x, max_lag: int = 50) -> float:
    """Least-squares slope of ``R(tau)`` over ``tau = 0 .. max_lag``."""
    r = acf_curve(x, max_lag)
    return float(np.polyfit(np.arange(len(r)), r, 1)[0])


@dataclass
class Histogram:
    edges: np.ndarray
    mass: np.ndarray

    @property
    def mode(self) -> float:
        i = int(np.argmax(self.mass))
        return 0.5 * (self.edges[i] + self.edges[i + 1])


@dataclass
class PosteriorSummary:
    """Post-burn-in statistics.

    ``mean_physical`` is the mean of the exponentiated samples and
    ``exp_mean_log`` the exponentiated mean of the log samples; both are
    reported because they differ for skewed posteriors.
    """

    n_used: int
    mean_log: np.ndarray
    mean_physical: np.ndarray
    exp_mean_log: np.ndarray
    histograms: List[Histogram]
    joint_edges: Tuple[np.ndarray, np.ndarray]
    joint_mass: np.ndarray
    names: Tuple[str, ...] = PARAM_NAMES


def posterior_summary(chain: Union[Chain, np.ndarray], burn_in: float = 0.2, bins: int = 40) -> PosteriorSummary:
    """Means, marginal histograms of the physical values and the joint (mu, K) histogram."""
    if not 0.0 <= burn_in <= 0.9:
        raise ValueError(f"burn_in must lie in [0, 0.9], got {burn_in}")
    samples = chain.samples if isinstance(chain, Chain) else np.atleast_2d(np.asarray(chain, dtype=float))
    start = int(burn_in * len(samples))
    post = samples[start:]
    if len(post) == 0:
        raise ValueError("no samples left after burn-in")
    phys = np.exp(post)
    hists = []
    for j in range(phys.shape[1]):
        counts, edges = np.histogram(phys[:, j], bins=bins)
        hists.append(Histogram(edges, counts / counts.sum()))
    if phys.shape[1] >= 2:
        counts2, ex, ey = np.histogram2d(phys[:, 0], phys[:, 1], bins=bins)
        joint = counts2 / counts2.sum()
    else:
        ex = ey = np.zeros(0)
        joint = np.zeros((0, 0))
    return PosteriorSummary(
        n_used=len(post),
        mean_log=post.mean(axis=0),
        mean_physical=phys.mean(axis=0),
        exp_mean_log=np.exp(post.mean(axis=0)),
        histograms=hists,
        joint_edges=(ex, ey),
        joint_mass=joint,
    )
