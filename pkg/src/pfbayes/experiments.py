"""Experiment configuration and the commands behind the command-line interface.

A config is a nested YAML mapping. Every field has a default, so a minimal
file only names the geometry, the mesh density and what to run::

    geometry: sent
    n: 20
    inversion:
      reference: ref/curve.csv

Metadata sidecars written next to each artifact embed the full resolved
config under ``config``; passing a sidecar as ``--config`` reruns the same
experiment.
"""

from __future__ import annotations

import dataclasses
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from . import homogeneous1d as h1d
from .bayes import (
    PARAM_NAMES,
    FieldForwardModel,
    ForwardModel,
    GaussianLogPrior,
    NormalProposal,
    UniformPrior,
    UniformProposal,
    acf_curve,
    acf_slope,
    curve_misfit,
    posterior_summary,
    run_inversion,
)
from .constitutive import MaterialParams
from .io import code_version, read_metadata, write_csv, write_metadata, write_vtk
from .mesh import Mesh2D, build
from .randomfield import RandomFieldSpec, cached_kl_decompose, sample_xi
from .solver import LoadDispCurve, PhaseFieldSolver, SolverConfig, tension_bc

log = logging.getLogger(__name__)

GEOMETRIES = ("sent", "dent", "voids")

# prior boxes on (mu, K, Gc) in kN/mm^2 and kN/mm
DEFAULT_BOUNDS = {
    "sent": {"mu": (60.0, 100.0), "K": (140.0, 200.0), "Gc": (2.1e-3, 3.3e-3)},
    "voids": {"mu": (60.0, 100.0), "K": (140.0, 200.0), "Gc": (2.1e-3, 3.3e-3)},
    "dent": {"mu": (6.0, 10.0), "K": (10.0, 14.0), "Gc": (8e-5, 12e-5)},
}
DEFAULT_MATERIAL = {
    "sent": (80.0, 170.0, 2.7e-3),
    "voids": (80.0, 170.0, 2.7e-3),
    "dent": (8.0, 12.0, 1e-4),
}


class ConfigError(ValueError):
    pass


@dataclass
class MaterialConfig:
    """Material constants; ``None`` picks the geometry default, ``ell=None`` means ``2h``."""

    mu: Optional[float] = None
    K: Optional[float] = None
    Gc: Optional[float] = None
    kappa: float = 1e-8
    ell: Optional[float] = None


@dataclass
class FieldConfig:
    enabled: bool = False
    sigma: float = 0.25
    zeta: float = 2.0
    n_kl: int = 100
    update: str = "mean"
    cache_dir: Optional[str] = None


@dataclass
class InversionConfig:
    mode: str = "multi"
    n_samples: int = 200
    proposal: str = "uniform"
    step: List[float] = field(default_factory=lambda: [0.05, 0.05, 0.05])
    prior: str = "uniform"
    bounds: Optional[Dict[str, List[float]]] = None
    sigma2: float = 1e-3
    burn_in: float = 0.2
    bins: int = 40
    missing_penalty: float = 0.0
    acf_max_lag: int = 50
    reference: Optional[str] = None
    compare_modes: bool = False
    verify: bool = True


@dataclass
class OutputConfig:
    vtk_stride: int = 0
    vtk_final: bool = True


@dataclass
class HomogeneousConfig:
    E: float = 29e9
    Gc: float = 70.0
    ell: float = 0.0105
    kappas: List[float] = field(default_factory=lambda: [0.0, 1e-4, 1e-8])
    span: float = 3.0
    n_points: int = 301


@dataclass
class SweepConfig:
    parameter: str = "Gc"
    values: List[float] = field(default_factory=lambda: [2.1e-3, 2.7e-3, 3.3e-3])


@dataclass
class ExperimentConfig:
    geometry: str = "sent"
    n: int = 20
    seed: int = 0
    top_horizontal: str = "free"
    dent_left_height: float = 3.5
    dent_right_height: float = 5.5
    material: MaterialConfig = field(default_factory=MaterialConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    random_field: FieldConfig = field(default_factory=FieldConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    homogeneous: HomogeneousConfig = field(default_factory=HomogeneousConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    # ------------------------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "ExperimentConfig":
        cfg = _build(cls, data or {}, "")
        cfg.validate()
        return cfg

    # ------------------------------------------------------------------
    def validate(self) -> None:
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        self.mesh()
        if self.top_horizontal not in ("free", "fixed"):
            raise ConfigError(f"top_horizontal must be 'free' or 'fixed', got {self.top_horizontal!r}")
        inv = self.inversion
        if inv.n_samples < 1:
            raise ConfigError(f"inversion.n_samples must be at least 1, got {inv.n_samples}")
        if inv.mode not in ("multi", "one"):
            raise ConfigError(f"inversion.mode must be 'multi' or 'one', got {inv.mode!r}")
        if inv.proposal not in ("uniform", "normal"):
            raise ConfigError(f"inversion.proposal must be 'uniform' or 'normal', got {inv.proposal!r}")
        if inv.prior not in ("uniform", "gaussian"):
            raise ConfigError(f"inversion.prior must be 'uniform' or 'gaussian', got {inv.prior!r}")
        if len(inv.step) != 3 or any(s <= 0 for s in inv.step):
            raise ConfigError(f"inversion.step needs three positive widths, got {inv.step}")
        if inv.sigma2 <= 0:
            raise ConfigError(f"inversion.sigma2 must be positive, got {inv.sigma2}")
        if not 0 <= inv.burn_in <= 0.9:
            raise ConfigError(f"inversion.burn_in must lie in [0, 0.9], got {inv.burn_in}")
        lo, hi = self.bounds()
        if np.any(lo <= 0) or np.any(hi < lo):
            raise ConfigError(f"invalid prior bounds {lo}, {hi}")
        if self.random_field.update not in ("mean", "xi"):
            raise ConfigError(f"random_field.update must be 'mean' or 'xi', got {self.random_field.update!r}")
        if not self.homogeneous.kappas:
            raise ConfigError("homogeneous.kappas must not be empty")
        if self.sweep.parameter not in PARAM_NAMES:
            raise ConfigError(f"sweep.parameter must be one of {PARAM_NAMES}, got {self.sweep.parameter!r}")
        if self.outputs.vtk_stride < 0:
            raise ConfigError("outputs.vtk_stride must be non-negative")

    # ------------------------------------------------------------------
    def mesh(self, n: Optional[int] = None) -> Mesh2D:
        n = self.n if n is None else n
        kw = {}
        if self.geometry == "dent":
            kw = {"left_height": self.dent_left_height, "right_height": self.dent_right_height}
        try:
            return build(self.geometry, n, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def material_params(self, mesh: Mesh2D) -> MaterialParams:
        m = self.material
        defaults = DEFAULT_MATERIAL[self.geometry]
        mu, K, Gc = (d if v is None else v for v, d in zip((m.mu, m.K, m.Gc), defaults))
        ell = 2.0 * mesh.h if m.ell is None else m.ell
        return MaterialParams(mu=mu, K=K, Gc=Gc, kappa=m.kappa, ell=ell)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        b = dict(DEFAULT_BOUNDS[self.geometry])
        if self.inversion.bounds:
            unknown = set(self.inversion.bounds) - set(PARAM_NAMES)
            if unknown:
                raise ConfigError(f"unknown parameters in inversion.bounds: {sorted(unknown)}")
            b.update({k: tuple(v) for k, v in self.inversion.bounds.items()})
        lo = np.array([b[k][0] for k in PARAM_NAMES], dtype=float)
        hi = np.array([b[k][1] for k in PARAM_NAMES], dtype=float)
        return lo, hi


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {prefix or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc


class _ConfigLoader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-4`` (no decimal point) as a float."""


_ConfigLoader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def load_config(path) -> ExperimentConfig:
    """Read a YAML config, or the ``config`` entry of a metadata sidecar."""
    with open(path) as fh:
        data = yaml.load(fh, Loader=_ConfigLoader) or {}
    if isinstance(data, dict) and "config" in data and "code_version" in data:
        data = data["config"]
    return ExperimentConfig.from_dict(data)


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def _metadata(cfg: ExperimentConfig, mesh: Mesh2D, **extra) -> Dict[str, Any]:
    meta = {
        "geometry": cfg.geometry,
        "n": cfg.n,
        "h": mesh.h,
        "du_bar": cfg.solver.du_bar,
        "mesh_digest": mesh.digest(),
        "code_version": code_version(),
        "config": cfg.to_dict(),
    }
    meta.update(extra)
    return meta


def _params_dict(p: MaterialParams) -> Dict[str, Any]:
    def val(v):
        a = np.asarray(v)
        return float(a) if a.ndim == 0 else {"min": float(a.min()), "max": float(a.max()), "mean": float(a.mean())}

    return {"mu": val(p.mu), "K": val(p.K), "Gc": val(p.Gc), "kappa": p.kappa, "ell": p.ell}


def forward_curve(
    cfg: ExperimentConfig,
    params: Optional[MaterialParams] = None,
    n: Optional[int] = None,
    out_dir: Optional[Path] = None,
    tag: str = "",
) -> Tuple[LoadDispCurve, PhaseFieldSolver]:
    """Run one load-stepping simulation, optionally emitting VTK snapshots."""
    mesh = cfg.mesh(n)
    params = params or cfg.material_params(mesh)
    solver = PhaseFieldSolver(mesh, params, cfg.solver, bc=tension_bc(mesh, cfg.top_horizontal))
    stride = cfg.outputs.vtk_stride
    snapshots = out_dir is not None and stride > 0

    def callback(step, state, F):
        if snapshots and step % stride == 0:
            _snapshot(out_dir / f"field{tag}_{step:05d}.vtk", mesh, state, step)

    curve, state = solver.run(callback=callback)
    if out_dir is not None and cfg.outputs.vtk_final:
        _snapshot(out_dir / f"field{tag}_final.vtk", mesh, state, len(curve) - 1)
    return curve, solver


def _snapshot(path, mesh, state, step):
    write_vtk(path, mesh, point_scalars={"d": state.d}, point_vectors={"u": state.u}, title=f"step {step}")


def _curve_meta(curve: LoadDispCurve) -> Dict[str, Any]:
    return {"first_peak": curve.first_peak, "failure": curve.failure, "peaks": curve.peaks(), "n_steps": len(curve) - 1}


def cmd_forward(cfg: ExperimentConfig, out_dir) -> Dict[str, Any]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = cfg.mesh()
    params = cfg.material_params(mesh)
    t0 = time.perf_counter()
    curve, _ = forward_curve(cfg, params, out_dir=out)
    elapsed = time.perf_counter() - t0
    curve.to_csv(out / "curve.csv")
    meta = _metadata(cfg, mesh, params=_params_dict(params), runtime_s=elapsed, **_curve_meta(curve))
    write_metadata(out / "curve.json", meta)
    log.info("forward run: %d steps, peaks %s, failure %s, %.1f s", len(curve) - 1, curve.peaks(), curve.failure, elapsed)
    return meta


def load_reference(cfg: ExperimentConfig) -> Tuple[LoadDispCurve, Dict[str, Any]]:
    ref = cfg.inversion.reference
    if not ref:
        raise ConfigError("inversion.reference must name a reference curve CSV")
    path = Path(ref)
    if not path.exists():
        raise ConfigError(f"reference curve {path} does not exist")
    meta_path = path.with_suffix(".json")
    meta = read_metadata(meta_path) if meta_path.exists() else {}
    if meta:
        if meta.get("geometry") != cfg.geometry:
            raise ConfigError(f"reference geometry {meta.get('geometry')!r} does not match config {cfg.geometry!r}")
        if meta.get("n", 0) <= cfg.n:
            raise ConfigError(f"reference mesh n={meta.get('n')} is not finer than the forward mesh n={cfg.n}")
        if not np.isclose(meta.get("du_bar", cfg.solver.du_bar), cfg.solver.du_bar):
            raise ConfigError("reference and forward runs use different displacement increments")
    return LoadDispCurve.from_csv(path), meta


def build_inverse_problem(cfg: ExperimentConfig, rng: np.random.Generator):
    """Forward model, prior and proposal for the configured geometry."""
    mesh = cfg.mesh()
    base = cfg.material_params(mesh)
    lo, hi = cfg.bounds()
    inv = cfg.inversion
    kw = dict(cfg=cfg.solver, kappa=base.kappa, ell=base.ell, top_horizontal=cfg.top_horizontal)
    if cfg.random_field.enabled:
        spec = RandomFieldSpec(sigma=cfg.random_field.sigma, zeta=cfg.random_field.zeta, n_kl=cfg.random_field.n_kl)
        basis = cached_kl_decompose(mesh, spec, cfg.random_field.cache_dir)
        xi = np.stack([sample_xi(spec.n_kl, rng) for _ in range(3)])
        mean_log = np.log(0.5 * (lo + hi))
        forward = FieldForwardModel(mesh, basis, xi, mean_log, update=cfg.random_field.update, **kw)
        if cfg.random_field.update == "xi":
            dim = 3 * spec.n_kl
            prior = GaussianLogPrior(np.zeros(dim), np.ones(dim))
            proposal = NormalProposal(np.full(dim, float(np.mean(inv.step))))
            return forward, prior, proposal
    else:
        forward = ForwardModel(mesh, **kw)
    if inv.prior == "uniform":
        prior = UniformPrior(lo, hi)
    else:
        # the box spans roughly +-2 standard deviations in log space
        prior = GaussianLogPrior(np.log(0.5 * (lo + hi)), np.maximum((np.log(hi) - np.log(lo)) / 4.0, 1e-12))
    proposal = UniformProposal(lo, hi) if inv.proposal == "uniform" else NormalProposal(inv.step)
    return forward, prior, proposal


def cmd_invert(cfg: ExperimentConfig, out_dir) -> Dict[str, Any]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    obs, ref_meta = load_reference(cfg)
    modes = [cfg.inversion.mode]
    if cfg.inversion.compare_modes:
        modes = ["multi", "one"]
    report: Dict[str, Any] = {"reference": cfg.inversion.reference, "modes": {}}
    for mode in modes:
        rng = np.random.default_rng(cfg.seed)
        forward, prior, proposal = build_inverse_problem(cfg, rng)
        t0 = time.perf_counter()
        chain = run_inversion(
            forward,
            obs,
            prior,
            proposal,
            cfg.inversion.n_samples,
            rng,
            mode=mode,
            sigma2=cfg.inversion.sigma2,
            missing_penalty=cfg.inversion.missing_penalty,
            burn_in=cfg.inversion.burn_in,
        )
        elapsed = time.perf_counter() - t0
        suffix = "" if len(modes) == 1 else f"_{mode}"
        chain.to_csv(out / f"chain{suffix}.csv")
        entry = _emit_chain_outputs(cfg, chain, out, suffix)
        entry.update(
            acceptance_rate=chain.acceptance_rate,
            stage_acceptance=chain.stage_acceptance(),
            forward_failures=chain.n_failures,
            forward_solves=forward.n_solves,
            runtime_s=elapsed,
        )
        if cfg.inversion.verify and chain.samples.shape[1] == 3:
            entry.update(_verify(cfg, forward, prior, chain, obs, out, suffix))
        report["modes"][mode] = entry
    meta = _metadata(cfg, cfg.mesh(), reference_meta={k: ref_meta.get(k) for k in ("geometry", "n", "h")}, **report)
    write_metadata(out / "report.json", meta)
    return meta


def _emit_chain_outputs(cfg, chain, out: Path, suffix: str) -> Dict[str, Any]:
    inv = cfg.inversion
    entry: Dict[str, Any] = {}
    rows = []
    for burn in sorted({inv.burn_in, 0.0}):
        s = posterior_summary(chain, burn, inv.bins)
        for j, name in enumerate(chain.names):
            label = PARAM_NAMES[j] if chain.samples.shape[1] == 3 else name
            rows.append((burn, label, s.mean_log[j], s.mean_physical[j], s.exp_mean_log[j]))
        if burn == inv.burn_in:
            entry["posterior_mean_physical"] = s.mean_physical.tolist()
            entry["posterior_exp_mean_log"] = s.exp_mean_log.tolist()
            if chain.samples.shape[1] == 3:
                for j, name in enumerate(PARAM_NAMES):
                    h = s.histograms[j]
                    write_csv(
                        out / f"hist_{name}{suffix}.csv",
                        ("bin_lo", "bin_hi", "mass"),
                        zip(h.edges[:-1], h.edges[1:], h.mass),
                    )
                ex, ey = s.joint_edges
                write_csv(
                    out / f"joint_mu_K{suffix}.csv",
                    ("mu_lo", "mu_hi", "K_lo", "K_hi", "mass"),
                    [(ex[i], ex[i + 1], ey[k], ey[k + 1], s.joint_mass[i, k]) for i in range(len(ex) - 1) for k in range(len(ey) - 1)],
                )
    write_csv(out / f"posterior_summary{suffix}.csv", ("burn_in", "parameter", "mean_log", "mean_physical", "exp_mean_log"), rows)

    lag_rows = []
    cols = []
    slopes = {}
    for j in range(min(3, chain.samples.shape[1])):
        x = chain.samples[:, j]
        if np.ptp(x) == 0:
            cols.append(None)
            continue
        cols.append(acf_curve(x, inv.acf_max_lag))
        slopes[chain.names[j]] = acf_slope(x, inv.acf_max_lag)
    n_lag = max((len(c) for c in cols if c is not None), default=0)
    for t in range(n_lag):
        lag_rows.append([t] + [("" if c is None or t >= len(c) else c[t]) for c in cols])
    write_csv(out / f"acf{suffix}.csv", ["tau"] + [f"R_{chain.names[j]}" for j in range(len(cols))], lag_rows)
    entry["acf_slope"] = slopes
    return entry


def _verify(cfg, forward, prior, chain, obs, out: Path, suffix: str) -> Dict[str, Any]:
    """Forward runs at the posterior and prior means, with their misfits to the reference."""
    s = posterior_summary(chain, cfg.inversion.burn_in, cfg.inversion.bins)
    result = {}
    for label, theta in (("posterior_mean", s.mean_log), ("prior_mean", np.asarray(prior.mean_log))):
        curve = forward(theta)
        curve.to_csv(out / f"curve_{label}{suffix}.csv")
        result[f"misfit_{label}"] = curve_misfit(curve, obs)
        result[f"first_peak_{label}"] = curve.first_peak
        result[f"peak_load_step_{label}"] = int(np.argmax(curve.F))
    result["first_peak_reference"] = obs.first_peak
    result["peak_load_step_reference"] = int(np.argmax(obs.F))
    return result


def cmd_homogeneous(cfg: ExperimentConfig, out_dir) -> Dict[str, Any]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hc = cfg.homogeneous
    rows = []
    for kappa in hc.kappas:
        p = h1d.Homogeneous1DParams(E=hc.E, Gc=hc.Gc, ell=hc.ell, kappa=kappa)
        eps, sig = h1d.stress_strain_table(p, hc.span, hc.n_points)
        write_csv(out / f"homogeneous_kappa_{kappa:g}.csv", ("eps", "sigma"), zip(eps, sig))
        peak = h1d.peak_stress(p)
        rows.append((kappa, peak.eps_star, peak.sigma_c, peak.interior))
    write_csv(out / "peak_table.csv", ("kappa", "eps_star", "sigma_c", "interior"), rows)
    meta = {"code_version": code_version(), "config": cfg.to_dict(), "peaks": [list(r) for r in rows]}
    write_metadata(out / "homogeneous.json", meta)
    return meta


def cmd_sweep(cfg: ExperimentConfig, out_dir) -> Dict[str, Any]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = cfg.mesh()
    base = cfg.material_params(mesh)
    name = cfg.sweep.parameter
    rows = []
    for value in cfg.sweep.values:
        params = base.with_(**{name: float(value)})
        curve, _ = forward_curve(cfg, params)
        curve.to_csv(out / f"sweep_{name}_{value:g}.csv")
        F = np.asarray(curve.F)
        rows.append((value, curve.first_peak, float(F.max()), curve.failure))
    write_csv(out / "sweep_summary.csv", (name, "first_peak", "max_F", "failure"), rows)
    meta = _metadata(cfg, mesh, sweep=[list(r) for r in rows])
    write_metadata(out / "sweep.json", meta)
    return meta


COMMANDS = {
    "forward": cmd_forward,
    "invert": cmd_invert,
    "homogeneous": cmd_homogeneous,
    "sweep": cmd_sweep,
}
