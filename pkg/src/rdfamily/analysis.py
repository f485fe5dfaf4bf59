"""
Post-processing of trajectories: spatial inhomogeneity, healing/chronic
classification and the leveling criterion ``sigma = lambda * d_min - M``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from .grid_ops import Grid, chi_theta, neumann_eigenvalue
from .mechanisms import eval_term_derivative
from .model_family import ModelDefinition
from .requirements import SampleSpec, component_bound
from .solver import Trajectory


def inhomogeneity_index(f: np.ndarray) -> float:
    """``(max - min) / max`` of a field, 0 when the maximum is not positive."""
    f = np.asarray(f, dtype=float)
    hi = float(np.max(f))
    if hi <= 0:
        return 0.0
    return float(np.clip((hi - float(np.min(f))) / hi, 0.0, 1.0))


@dataclass(frozen=True)
class ClassifierThresholds:
    healing: float = 1e-3
    settle: float = 1e-3
    persistence: float = 1e-2
    inhomogeneity: float = 0.05
    tail_fraction: float = 0.2


@dataclass
class CourseClassification:
    label: str  # "Healing" | "Chronic" | "Undetermined"
    metrics: dict[str, float]
    thresholds: ClassifierThresholds
    diagnostic: str = ""

    def to_text(self) -> str:
        lines = [f"label={self.label}"]
        lines += [f"{k}={v:.10g}" for k, v in self.metrics.items()]
        lines += [f"threshold_{k}={v:g}" for k, v in asdict(self.thresholds).items()]
        if self.diagnostic:
            lines.append(f"diagnostic={self.diagnostic}")
        return "\n".join(lines) + "\n"


def tail_drift(times: np.ndarray, series: np.ndarray, fraction: float = 0.2) -> float:
    """Relative change of ``series`` between the start of the tail window and the end."""
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    t_start = times[-1] - fraction * (times[-1] - times[0])
    start = float(np.interp(t_start, times, series))
    end = float(series[-1])
    if end == 0:
        return 0.0 if start == 0 else np.inf
    return abs(end - start) / abs(end)


def classify(
    traj: Trajectory,
    thresholds: ClassifierThresholds | None = None,
    virus: str | None = None,
) -> CourseClassification:
    """Label a trajectory as a healing or chronic course.

    Healing means the virus has practically vanished everywhere.  Chronic
    means the virus persists, its total amount has settled over the tail
    window, and the final state is spatially inhomogeneous; the inhomogeneity
    is the largest index over all components, since a portal-driven T-cell
    profile is as much a sign of the inhomogeneous steady state as the virus
    profile.
    """
    th = thresholds or ClassifierThresholds()
    virus = virus or traj.components[0]
    times = np.asarray(traj.times)
    final = traj.states[-1]
    metrics = {
        "final_virus_linf": float(traj.linf(virus)[-1]),
        "final_virus_l1": float(traj.l1(virus)[-1]),
        "virus_inhomogeneity": inhomogeneity_index(final[virus]),
        "inhomogeneity": max(inhomogeneity_index(final[c]) for c in traj.components),
    }
    tail_start = times[-1] - th.tail_fraction * (times[-1] - times[0])
    in_tail = np.count_nonzero(times >= tail_start)
    if len(times) < 2 or in_tail < 2:
        metrics["tail_drift"] = float("nan")
        return CourseClassification("Undetermined", metrics, th, "trajectory shorter than the tail window")
    metrics["tail_drift"] = tail_drift(times, traj.l1(virus), th.tail_fraction)

    if metrics["final_virus_linf"] < th.healing:
        label = "Healing"
    elif (metrics["tail_drift"] < th.settle
          and metrics["final_virus_linf"] >= th.persistence
          and metrics["inhomogeneity"] >= th.inhomogeneity):
        label = "Chronic"
    else:
        label = "Undetermined"
    return CourseClassification(label, metrics, th)


@dataclass
class SigmaReport:
    lambda_: float
    lambda_discrete: float
    d_min: float
    M_est: float
    sigma: float
    applicable: bool
    samples: int
    box: dict[str, float] = field(default_factory=dict)
    truncated: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"lambda={self.lambda_:.10g}",
            f"lambda_discrete={self.lambda_discrete:.10g}",
            f"d_min={self.d_min:.10g}",
            f"M_est={self.M_est:.10g}",
            f"sigma={self.sigma:.10g}",
            f"applicable={str(self.applicable).lower()}",
            f"samples={self.samples}",
        ]
        lines += [f"box_{c}={v:g}" for c, v in self.box.items()]
        lines += [f"truncated_{c}={v:g}" for c, v in self.truncated.items()]
        lines += [f"note={n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def _diffusivity(model: ModelDefinition, grid: Grid) -> dict[str, float]:
    """Smallest diffusion eigenvalue of each component's combined flux."""
    _, taxis = model.resolved_terms()
    out = {c: 0.0 for c in model.components}
    for t in taxis:
        if t.kind == "Diffusion":
            out[t.target] += t.d
        elif t.kind == "AnisoDiffusion" and t.d > 0:
            out[t.target] += t.d * t.anisotropy.min_eigenvalue(grid)
    return out


def sigma_criterion(
    model: ModelDefinition,
    sample_budget: int = 4096,
    seed: int = 0,
    grid: Grid | None = None,
) -> SigmaReport:
    """Leveling criterion with a sampled bound on the reaction Jacobian.

    ``M_est`` is the running maximum of the spectral norm of the pointwise
    reaction Jacobian over quasi-random states in the invariant box.  Global
    terms are replaced by their pointwise density bound: the virus integral
    is set to ``C1 * |domain|``, the portal density to its peak, and the
    derivative with respect to the integral counts as a derivative with
    respect to the local virus.  Components without a capacity are truncated
    at the bound found by the requirement checker's bound search.
    """
    if sample_budget < 1:
        raise ValueError("sample_budget must be positive")
    grid = grid or Grid.square(21)
    reaction, taxis = model.resolved_terms()
    notes = []
    applicable = not any(t.kind in ("Chemotaxis", "LinearChemotaxis") for t in taxis)
    if not applicable:
        notes.append("chemotaxis present: the leveling theorem does not cover this model")

    comps = model.components
    box, truncated = {}, {}
    spec = SampleSpec(grid_n=grid.nx, seed=seed)
    for c in comps:
        caps = [t.capacity() for t in reaction if t.target == c and t.capacity() is not None]
        if caps:
            box[c] = min(caps)
        else:
            bound = component_bound(model, c, spec)
            if bound is None:
                bound = spec.unbounded_factor
                notes.append(f"no bound found for {c}; box truncated at {bound:g}")
            box[c] = truncated[c] = bound

    chi_peak = float(np.max(chi_theta(grid, model.theta)))
    if any(t.info.nonlocal_ for t in reaction):
        notes.append("global terms replaced by their pointwise density bound")

    engine = qmc.Halton(d=len(comps), scramble=True, seed=seed)
    u = engine.random(sample_budget)
    state = {c: u[:, k] * box[c] for k, c in enumerate(comps)}
    n = sample_budget
    jac = np.zeros((n, len(comps), len(comps)))
    for t in reaction:
        a = comps.index(t.target)
        extra = None
        if t.info.nonlocal_:
            extra = {"virus_integral": box[t.bind["virus"]] * 1.0, "chi": chi_peak}
        for b, c in enumerate(comps):
            jac[:, a, b] += np.broadcast_to(eval_term_derivative(t, c, state, nonlocal_values=extra), (n,))
    norms = np.linalg.svd(jac, compute_uv=False)[:, 0] if len(comps) else np.zeros(n)
    m_est = float(np.max(norms)) if n else 0.0

    d = _diffusivity(model, grid)
    d_min = min(d.values())
    lam = float(np.pi ** 2)
    return SigmaReport(
        lambda_=lam,
        lambda_discrete=neumann_eigenvalue(grid.nx),
        d_min=d_min,
        M_est=m_est,
        sigma=lam * d_min - m_est,
        applicable=applicable,
        samples=n,
        box=box,
        truncated=truncated,
        notes=notes,
    )
