"""
Numeric verification of the feasibility rules a model of the family must meet.

Rules are grouped by component role: ``R.1.*`` for the virus, ``R.2.*`` for
T cells and ``R.3.*`` for cytokines.  Inequalities are checked on quasi-random
(scrambled Halton, fixed seed) samples of a state box, so a pass is evidence
rather than proof; a fail always carries a witness point that reproduces it.

The state box of a component is ``[0, C]`` where ``C`` is the capacity of the
production term feeding it.  Components without a capacity are sampled on
``[0, unbounded_factor * largest capacity]``.  Global terms see the surrogate
integral ``q_virus * |domain|`` and the peak portal-field density.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .grid_ops import Grid, chi_theta
from .mechanisms import ConfigError, MechanismTerm, eval_term, eval_term_derivative
from .model_family import ModelDefinition

RULES = (
    "R.1.1", "R.1.2", "R.1.3", "R.1.4", "R.1.5", "R.1.6",
    "R.2.1", "R.2.2", "R.2.3", "R.2.4", "R.2.5", "R.2.6", "R.2.7",
    "R.3.1", "R.3.2", "R.3.3", "R.3.4", "R.3.5", "R.3.6",
)
RULE_ROLE = {"1": "virus", "2": "tcell", "3": "cytokine"}

SIGN_TOL = 1e-8
ANCHOR_TOL = 1e-10


@dataclass(frozen=True)
class SampleSpec:
    """Sampling budget for the checker.

    ``n_samples`` points are drawn per rule (and per candidate bound in the
    bound searches).  ``grid_n`` fixes the grid on which the portal-field
    density peak is measured.
    """

    n_samples: int = 1024
    seed: int = 0
    unbounded_factor: float = 10.0
    grid_n: int = 21
    max_doublings: int = 40

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("sampler budget must be at least one point per rule")
        if self.unbounded_factor <= 0:
            raise ConfigError("unbounded_factor must be positive")


@dataclass(frozen=True)
class RuleResult:
    rule: str
    verdict: str  # "pass" | "fail" | "not-applicable"
    samples_used: int = 0
    witness: dict | None = None
    value: float | None = None
    note: str = ""

    def line(self) -> str:
        parts = [f"{self.rule} {self.verdict}", f"samples={self.samples_used}"]
        if self.witness is not None:
            point = " ".join(f"{k}={v:.6g}" for k, v in self.witness.items())
            parts.append(f"witness: {point} value={self.value:.6g}")
        if self.note:
            parts.append(f"({self.note})")
        return "  ".join(parts)


@dataclass
class RequirementReport:
    model: str
    results: dict[str, RuleResult] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        out = {"pass": 0, "fail": 0, "not-applicable": 0}
        for r in self.results.values():
            out[r.verdict] += 1
        return out

    @property
    def all_passed(self) -> bool:
        return not any(r.verdict == "fail" for r in self.results.values())

    @property
    def failed(self) -> list[str]:
        return [k for k, r in self.results.items() if r.verdict == "fail"]

    def __getitem__(self, rule: str) -> RuleResult:
        return self.results[rule]

    def to_text(self) -> str:
        c = self.counts()
        lines = [f"# requirements for {self.model}"]
        lines += [self.results[k].line() for k in RULES]
        lines.append(f"# pass={c['pass']} fail={c['fail']} not-applicable={c['not-applicable']}")
        return "\n".join(lines) + "\n"


class _Context:
    """Resolved terms, sample boxes and vectorised evaluators for one model."""

    def __init__(self, model: ModelDefinition, spec: SampleSpec):
        model.validate()
        self.model = model
        self.spec = spec
        self.reaction, self.taxis = model.resolved_terms()
        self.roles = model.roles()
        self.components = model.components
        self.chi_peak = float(np.max(chi_theta(Grid.square(spec.grid_n), model.theta)))
        self.capacity = {}
        for c in self.components:
            caps = [t.capacity() for t in self.reaction if t.target == c and t.capacity() is not None]
            self.capacity[c] = min(caps) if caps else None
        known = [v for v in self.capacity.values() if v is not None]
        default = spec.unbounded_factor * (max(known) if known else 1.0)
        self.upper = {c: (v if v is not None else default) for c, v in self.capacity.items()}
        self._draws = 0

    # --- sampling -------------------------------------------------------
    def sample(self, n: int | None = None) -> dict[str, np.ndarray]:
        """Quasi-random points in [0, upper) for every component."""
        n = n or self.spec.n_samples
        dim = len(self.components)
        # Each call gets its own deterministic stream so rule order is irrelevant.
        self._draws += 1
        engine = qmc.Halton(d=dim, scramble=True, seed=np.random.default_rng([self.spec.seed, self._draws]))
        u = engine.random(n)
        return {c: u[:, k] * self.upper[c] for k, c in enumerate(self.components)}

    # --- term evaluation ------------------------------------------------
    def _nonlocal(self, term, state):
        if not term.info.nonlocal_:
            return None
        return {"virus_integral": np.asarray(state[term.bind["virus"]]) * 1.0, "chi": self.chi_peak}

    def value(self, terms, state) -> np.ndarray:
        n = len(next(iter(state.values())))
        total = np.zeros(n)
        for t in terms:
            total = total + eval_term(t, state, nonlocal_values=self._nonlocal(t, state))
        return total

    def derivative(self, terms, wrt, state) -> np.ndarray:
        n = len(next(iter(state.values())))
        total = np.zeros(n)
        for t in terms:
            total = total + eval_term_derivative(t, wrt, state, nonlocal_values=self._nonlocal(t, state))
        return total

    def with_component(self, c: str) -> list[MechanismTerm]:
        return [t for t in self.reaction if t.target == c]


def _witness(state: dict[str, np.ndarray], idx: int) -> dict[str, float]:
    return {k: float(v[idx]) for k, v in state.items()}


def _check_sign(rule, values, state, sign, n, note=""):
    """``sign=+1`` demands values >= -tol, ``sign=-1`` values <= tol."""
    bad = np.flatnonzero(sign * values < -SIGN_TOL)
    if bad.size:
        i = bad[np.argmin(sign * values[bad])]
        return RuleResult(rule, "fail", n, _witness(state, i), float(values[i]), note)
    return RuleResult(rule, "pass", n, note=note)


def _combine(rule, results: list[RuleResult], note_if_empty: str) -> RuleResult:
    """Aggregate per-component results of one rule (first failure wins)."""
    if not results:
        return RuleResult(rule, "pass", 0, note=note_if_empty)
    used = sum(r.samples_used for r in results)
    for r in results:
        if r.verdict == "fail":
            return RuleResult(rule, "fail", used, r.witness, r.value, r.note)
    notes = "; ".join(dict.fromkeys(r.note for r in results if r.note))
    return RuleResult(rule, "pass", used, note=notes)


def _anchor(ctx, rule, terms, state, mode, n):
    vals = ctx.value(terms, state)
    if mode == "zero":
        bad = np.flatnonzero(np.abs(vals) > ANCHOR_TOL)
    else:
        bad = np.flatnonzero(vals < -ANCHOR_TOL)
    if bad.size:
        i = bad[np.argmax(np.abs(vals[bad]))]
        return RuleResult(rule, "fail", n, _witness(state, i), float(vals[i]))
    return RuleResult(rule, "pass", n)


def _pd_rule(ctx, rule, role):
    grid = Grid.square(ctx.spec.grid_n)
    out = []
    for t in ctx.taxis:
        if t.kind == "AnisoDiffusion" and ctx.roles.get(t.target) == role:
            ok = t.anisotropy.is_positive_definite(grid)
            out.append(RuleResult(rule, "pass" if ok else "fail", grid.size,
                                  None if ok else {t.target: float("nan")},
                                  None if ok else t.anisotropy.min_eigenvalue(grid)))
    return _combine(rule, out, "no anisotropic flux")


def bound_search(ctx: _Context, component: str) -> tuple[float | None, int, dict | None, float | None]:
    """Smallest tried ``C`` with non-positive net reaction on ``[C, 10 C]``.

    Candidates are ``base * 2**k`` with ``base`` the component capacity (or 1).
    The other components are sampled over their boxes, except that the virus
    only takes levels at which its own reaction is not decaying under the
    sampled load (plus zero), since larger virus loads cannot be sustained
    while the tested component sits above the bound.
    """
    base = ctx.capacity[component] or 1.0
    terms = ctx.with_component(component)
    viruses = [c for c in ctx.components if ctx.roles[c] == "virus" and c != component]
    used = 0
    worst = None
    for k in range(ctx.spec.max_doublings + 1):
        C = base * 2.0 ** k
        state = ctx.sample()
        n = len(state[component])
        u = np.linspace(0.0, 1.0, n, endpoint=True)
        state[component] = C * (1.0 + 9.0 * u)
        for v in viruses:
            growth = ctx.value(ctx.with_component(v), state)
            state[v] = np.where(growth >= 0, state[v], 0.0)
        vals = ctx.value(terms, state)
        used += n
        bad = np.flatnonzero(vals > SIGN_TOL)
        if not bad.size:
            return C, used, None, None
        i = bad[np.argmax(vals[bad])]
        worst = (_witness(state, i), float(vals[i]))
    return None, used, worst[0], worst[1]


def _bound_rule(ctx, rule, role):
    out = []
    for c in ctx.components:
        if ctx.roles[c] != role:
            continue
        C, used, wit, val = bound_search(ctx, c)
        if C is None:
            out.append(RuleResult(rule, "fail", used, wit, val, f"no bound found for {c}"))
        else:
            out.append(RuleResult(rule, "pass", used, note=f"{c} bounded by {C:g}"))
    return _combine(rule, out, "")


def _rules_virus(ctx: _Context) -> dict[str, RuleResult]:
    res = {}
    n = ctx.spec.n_samples
    viruses = [c for c in ctx.components if ctx.roles[c] == "virus"]

    r11, r12, r13, r14, r15 = [], [], [], [], []
    for v in viruses:
        m1 = [t for t in ctx.with_component(v) if t.mechanism == "M1"]
        m5 = [t for t in ctx.with_component(v) if t.mechanism == "M5"]
        eps = max([t.params.get("eps", 0.0) for t in m1], default=0.0)
        cap = ctx.capacity[v]
        top = cap if cap is not None else ctx.upper[v]

        # R.1.1: growth is non-negative above the Allee threshold and up to capacity.
        s = ctx.sample()
        u = np.linspace(0.0, 1.0, n, endpoint=False)
        s[v] = top - u * (top - eps)
        r11.append(_check_sign("R.1.1", ctx.value(m1, s), s, +1, n, "checked on (eps, C1]"))

        s = ctx.sample()
        s[v] = np.zeros(n)
        r12.append(_anchor(ctx, "R.1.2", m1, s, "zero", n))

        if cap is None and m1:
            s = ctx.sample(1)
            s[v] = np.array([ctx.upper[v]])
            val = ctx.value(m1, s)
            r13.append(RuleResult("R.1.3", "fail", 1, _witness(s, 0), float(val[0]), f"{v} growth has no capacity"))
        else:
            s = ctx.sample()
            s[v] = np.full(n, top)
            r13.append(_anchor(ctx, "R.1.3", m1, s, "zero", n))

        # R.1.4: probe the canonical point (other components at 1) before sampling.
        probe = {c: np.array([1.0]) for c in ctx.components}
        probe[v] = np.array([0.0])
        val = ctx.value(m5, probe)
        if val[0] < -ANCHOR_TOL:
            r14.append(RuleResult("R.1.4", "fail", 1, _witness(probe, 0), float(val[0])))
        else:
            s = ctx.sample()
            s[v] = np.zeros(n)
            r14.append(_anchor(ctx, "R.1.4", m5, s, "nonneg", n + 1))

        killers = sorted({t.bind["killer"] for t in m5})
        for k in killers:
            s = ctx.sample()
            r15.append(_check_sign("R.1.5", ctx.derivative(m5, k, s), s, -1, n))

    res["R.1.1"] = _combine("R.1.1", r11, "")
    res["R.1.2"] = _combine("R.1.2", r12, "")
    res["R.1.3"] = _combine("R.1.3", r13, "")
    res["R.1.4"] = _combine("R.1.4", r14, "")
    res["R.1.5"] = _combine("R.1.5", r15, "no killing term")
    res["R.1.6"] = _pd_rule(ctx, "R.1.6", "virus")
    return res


def _rules_tcell(ctx: _Context) -> dict[str, RuleResult]:
    res = {}
    n = ctx.spec.n_samples
    cells = [c for c in ctx.components if ctx.roles[c] == "tcell"]
    r21, r22, r23, r24 = [], [], [], []
    for c in cells:
        m2 = [t for t in ctx.with_component(c) if t.mechanism == "M2"]
        m6 = [t for t in ctx.with_component(c) if t.mechanism == "M6"]
        for v in sorted({t.bind["virus"] for t in m2}):
            s = ctx.sample()
            r21.append(_check_sign("R.2.1", ctx.derivative(m2, v, s), s, +1, n))
        s = ctx.sample()
        r22.append(_check_sign("R.2.2", ctx.value(m2, s), s, +1, n))
        s = ctx.sample()
        r23.append(_check_sign("R.2.3", ctx.derivative(m6, c, s), s, -1, n))
        s = ctx.sample()
        s[c] = np.zeros(n)
        r24.append(_anchor(ctx, "R.2.4", m6, s, "nonneg", n))
    res["R.2.1"] = _combine("R.2.1", r21, "no recruitment term")
    res["R.2.2"] = _combine("R.2.2", r22, "")
    res["R.2.3"] = _combine("R.2.3", r23, "")
    res["R.2.4"] = _combine("R.2.4", r24, "")
    res["R.2.5"] = _bound_rule(ctx, "R.2.5", "tcell")
    res["R.2.6"] = _pd_rule(ctx, "R.2.6", "tcell")
    r27 = []
    for t in ctx.taxis:
        if t.kind in ("Chemotaxis", "LinearChemotaxis") and ctx.roles.get(t.target) == "tcell":
            if t.carrier_dependent:
                r27.append(RuleResult("R.2.7", "pass", 1))
            else:
                r27.append(RuleResult("R.2.7", "fail", 1, {t.target: 0.0}, t.d,
                                      f"chemotactic flux of {t.target} does not scale with {t.target}"))
    res["R.2.7"] = _combine("R.2.7", r27, "no chemotaxis")
    return res


def _rules_cytokine(ctx: _Context) -> dict[str, RuleResult]:
    res = {}
    n = ctx.spec.n_samples
    r31, r32, r33, r34 = [], [], [], []
    skipped_r33 = False
    for c in [c for c in ctx.components if ctx.roles[c] == "cytokine"]:
        m3 = [t for t in ctx.with_component(c) if t.mechanism == "M3"]
        nd = [t for t in ctx.with_component(c) if t.mechanism == "ND"]
        sources = sorted({t.bind[r] for t in m3 for r in ("virus", "helper") if r in t.bind})
        for src in sources:
            s = ctx.sample()
            r31.append(_check_sign("R.3.1", ctx.derivative(m3, src, s), s, +1, n))
        s = ctx.sample()
        r32.append(_check_sign("R.3.2", ctx.value(m3, s), s, +1, n))
        # The constant decay jumps at zero, so it has no derivative to check.
        smooth = [t for t in nd if t.kind != "ND_Constant"]
        if smooth:
            s = ctx.sample()
            r33.append(_check_sign("R.3.3", ctx.value(smooth, s), s, -1, n))
        elif nd:
            skipped_r33 = True
        s = ctx.sample()
        s[c] = np.zeros(n)
        r34.append(_anchor(ctx, "R.3.4", nd, s, "zero", n))
    res["R.3.1"] = _combine("R.3.1", r31, "no production term")
    res["R.3.2"] = _combine("R.3.2", r32, "")
    if skipped_r33 and not r33:
        res["R.3.3"] = RuleResult("R.3.3", "not-applicable", note="constant decay is discontinuous at zero")
    else:
        res["R.3.3"] = _combine("R.3.3", r33, "")
    res["R.3.4"] = _combine("R.3.4", r34, "")
    res["R.3.5"] = _bound_rule(ctx, "R.3.5", "cytokine")
    res["R.3.6"] = _pd_rule(ctx, "R.3.6", "cytokine")
    return res


_GROUPS: dict[str, Callable[[_Context], dict[str, RuleResult]]] = {
    "virus": _rules_virus,
    "tcell": _rules_tcell,
    "cytokine": _rules_cytokine,
}


def check_requirements(model: ModelDefinition, sampler: SampleSpec | None = None) -> RequirementReport:
    """Evaluate every rule on ``model``; rules for an absent role are not applicable."""
    spec = sampler or SampleSpec()
    ctx = _Context(model, spec)
    report = RequirementReport(model.name)
    present = set(ctx.roles.values())
    for role, group in _GROUPS.items():
        if role in present:
            report.results.update(group(ctx))
        else:
            for rule in RULES:
                if RULE_ROLE[rule[2]] == role:
                    report.results[rule] = RuleResult(rule, "not-applicable", note=f"no {role} component")
    report.results = {k: report.results[k] for k in RULES}
    return report


def component_bound(model: ModelDefinition, component: str, sampler: SampleSpec | None = None) -> float | None:
    """Bound ``C`` beyond which the component's net reaction is non-positive, if found."""
    ctx = _Context(model, sampler or SampleSpec())
    if component not in ctx.components:
        raise ConfigError(f"unknown component {component!r}")
    if ctx.capacity[component] is not None:
        return ctx.capacity[component]
    return bound_search(ctx, component)[0]
