"""
Model definitions, the three published presets, and right-hand-side assembly
for the method of lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .grid_ops import (
    DEFAULT_THETA,
    AnisotropyMap,
    Grid,
    Region,
    aniso_diffusion,
    chemotaxis_div,
    chi_theta,
    integrate_domain,
    laplacian_neumann,
)
from .mechanisms import ConfigError, MechanismTerm

TAXIS_KINDS = ("Diffusion", "AnisoDiffusion", "Chemotaxis", "LinearChemotaxis")


@dataclass(frozen=True)
class TaxisTerm:
    """Transport term of one component.

    ``Chemotaxis`` is the carrier-dependent flux ``d * target * grad(attractant)``;
    ``LinearChemotaxis`` is the carrier-free flux ``d * grad(attractant)``, kept
    in the catalog so that models using it can be built and rejected by the
    requirement checker.
    """

    kind: str
    target: str
    d: float | str
    attractant: str | None = None
    anisotropy: AnisotropyMap | None = None

    def __post_init__(self):
        if self.kind not in TAXIS_KINDS:
            raise ConfigError(f"unknown taxis kind {self.kind!r}")
        if self.kind in ("Chemotaxis", "LinearChemotaxis") and not self.attractant:
            raise ConfigError(f"{self.kind} on {self.target} needs an attractant")
        if self.kind in ("Diffusion", "AnisoDiffusion") and self.attractant:
            raise ConfigError(f"{self.kind} does not take an attractant")
        if self.kind == "AnisoDiffusion" and self.anisotropy is None:
            object.__setattr__(self, "anisotropy", AnisotropyMap.identity())
        if not isinstance(self.d, str) and self.d < 0:
            raise ConfigError(f"{self.kind} on {self.target}: coefficient must be non-negative")

    @property
    def carrier_dependent(self) -> bool:
        return self.kind == "Chemotaxis"

    def resolve(self, table: Mapping[str, float]) -> "TaxisTerm":
        d = self.d
        if isinstance(d, str):
            if d not in table:
                raise ConfigError(f"{self.kind} on {self.target}: parameter reference {d!r} is undefined")
            d = table[d]
        return replace(self, d=float(d))


@dataclass(frozen=True)
class ModelDefinition:
    name: str
    components: tuple[str, ...]
    reaction_terms: tuple[MechanismTerm, ...]
    taxis_terms: tuple[TaxisTerm, ...]
    theta: Region = DEFAULT_THETA
    parameters: Mapping[str, float] = field(default_factory=dict)
    initial: Mapping[str, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "reaction_terms", tuple(self.reaction_terms))
        object.__setattr__(self, "taxis_terms", tuple(self.taxis_terms))
        object.__setattr__(self, "parameters", {k: float(v) for k, v in self.parameters.items()})
        if self.initial is not None:
            object.__setattr__(self, "initial", {k: float(v) for k, v in self.initial.items()})

    def problems(self) -> list[str]:
        """Every violated structural invariant, in a stable order."""
        out = []
        comps = set(self.components)
        if len(comps) != len(self.components):
            out.append("duplicate component names")
        if not self.components:
            out.append("model declares no components")
        for t in self.reaction_terms:
            if t.target not in comps:
                out.append(f"{t.kind}: target {t.target!r} is not a declared component")
            for name in t.inputs:
                if name not in comps:
                    out.append(f"{t.kind} on {t.target}: input {name!r} is not a declared component")
            try:
                t.resolve(self.parameters)
            except ConfigError as exc:
                out.append(str(exc))
        chem_targets = []
        for t in self.taxis_terms:
            if t.target not in comps:
                out.append(f"{t.kind}: target {t.target!r} is not a declared component")
            if t.attractant is not None and t.attractant not in comps:
                out.append(f"{t.kind} on {t.target}: attractant {t.attractant!r} is not a declared component")
            if t.kind in ("Chemotaxis", "LinearChemotaxis"):
                chem_targets.append(t.target)
            try:
                r = t.resolve(self.parameters)
                if r.d < 0:
                    out.append(f"{t.kind} on {t.target}: coefficient must be non-negative")
            except ConfigError as exc:
                out.append(str(exc))
        for name in sorted(set(chem_targets)):
            if chem_targets.count(name) > 1:
                out.append(f"component {name!r} has more than one chemotaxis term")
        if self.initial is not None:
            for name, v in self.initial.items():
                if name not in comps:
                    out.append(f"initial value for undeclared component {name!r}")
                elif v < 0:
                    out.append(f"initial value of {name!r} is negative")
        return out

    def validate(self) -> "ModelDefinition":
        problems = self.problems()
        if problems:
            raise ConfigError(f"model {self.name!r} is invalid:\n  " + "\n  ".join(problems))
        return self

    def resolved_terms(self) -> tuple[list[MechanismTerm], list[TaxisTerm]]:
        return (
            [t.resolve(self.parameters) for t in self.reaction_terms],
            [t.resolve(self.parameters) for t in self.taxis_terms],
        )

    def terms_for(self, component: str) -> tuple[list[MechanismTerm], list[TaxisTerm]]:
        reac, tax = self.resolved_terms()
        return [t for t in reac if t.target == component], [t for t in tax if t.target == component]

    def with_overrides(self, overrides: Mapping[str, float]) -> "ModelDefinition":
        unknown = sorted(set(overrides) - set(self.parameters))
        if unknown:
            raise ConfigError(f"unknown parameter(s) {unknown}; known: {sorted(self.parameters)}")
        params = dict(self.parameters)
        params.update({k: float(v) for k, v in overrides.items()})
        return replace(self, parameters=params)

    def roles(self) -> dict[str, str]:
        """Biological role of each component, inferred from the terms feeding it."""
        roles = {}
        for t in self.reaction_terms:
            roles.setdefault(t.target, t.info.target_role)
        for t in self.reaction_terms:
            for role, name in t.bind.items():
                roles.setdefault(name, "tcell" if role in ("helper", "killer") else role)
        return {c: roles.get(c, "other") for c in self.components}

    def component_with_role(self, role: str) -> list[str]:
        return [c for c, r in self.roles().items() if r == role]

    @property
    def virus(self) -> str:
        found = self.component_with_role("virus")
        return found[0] if found else self.components[0]

    def initial_values(self) -> dict[str, float]:
        defaults = {"virus": 1.0, "tcell": 0.0, "cytokine": 0.1}
        roles = self.roles()
        out = {c: defaults.get(roles[c], 0.0) for c in self.components}
        if self.initial:
            out.update(self.initial)
        return out


@dataclass
class SystemState:
    t: float
    fields: dict[str, np.ndarray]
    grid: Grid

    def __post_init__(self):
        for name, f in self.fields.items():
            if np.shape(f) != self.grid.shape:
                raise ValueError(f"field {name!r} has shape {np.shape(f)}, grid is {self.grid.shape}")

    def min_value(self) -> float:
        return min(float(np.min(f)) for f in self.fields.values())

    def copy(self) -> "SystemState":
        return SystemState(self.t, {k: np.array(v) for k, v in self.fields.items()}, self.grid)


class RhsFunction:
    """Semi-discrete right-hand side over named component fields.

    ``evaluate(t, fields, nonlocal)`` returns the time derivative of every
    component.  ``nonlocal_fn(fields)`` computes the global scalars the
    reaction terms need; the solver may freeze them while building a sparse
    Jacobian approximation.
    """

    def __init__(
        self,
        grid: Grid,
        components: tuple[str, ...] | list[str],
        evaluate: Callable[[float, dict, dict | None], dict],
        nonlocal_fn: Callable[[dict], dict] | None = None,
        name: str = "",
    ):
        self.grid = grid
        self.components = tuple(components)
        self._evaluate = evaluate
        self._nonlocal_fn = nonlocal_fn
        self.name = name

    @property
    def size(self) -> int:
        return len(self.components) * self.grid.size

    def unpack(self, y: np.ndarray) -> dict[str, np.ndarray]:
        blocks = np.asarray(y).reshape(len(self.components), *self.grid.shape)
        return dict(zip(self.components, blocks))

    def pack(self, fields: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(fields[c], dtype=float).ravel() for c in self.components])

    def nonlocal_values(self, y: np.ndarray) -> dict | None:
        if self._nonlocal_fn is None:
            return None
        return self._nonlocal_fn(self.unpack(y))

    def flat(self, t: float, y: np.ndarray, frozen: dict | None = None) -> np.ndarray:
        fields = self.unpack(y)
        nl = frozen if frozen is not None else (self._nonlocal_fn(fields) if self._nonlocal_fn else None)
        return self.pack(self._evaluate(t, fields, nl))

    def __call__(self, state: SystemState) -> dict[str, np.ndarray]:
        nl = self._nonlocal_fn(state.fields) if self._nonlocal_fn else None
        return self._evaluate(state.t, state.fields, nl)

    @classmethod
    def from_linear(cls, grid: Grid, components, func: Callable[[dict], dict], name: str = "") -> "RhsFunction":
        """Wrap an autonomous ``fields -> derivatives`` map."""
        return cls(grid, components, lambda t, fields, nl: func(fields), name=name)


def assemble_rhs(model: ModelDefinition, grid: Grid) -> RhsFunction:
    model.validate()
    reaction, taxis = model.resolved_terms()
    chi = chi_theta(grid, model.theta) if any(t.info.nonlocal_ for t in reaction) else None
    integrated = sorted({t.bind["virus"] for t in reaction if t.info.nonlocal_})
    by_target = {c: [t for t in reaction if t.target == c] for c in model.components}
    transport = {c: [t for t in taxis if t.target == c and t.d > 0] for c in model.components}

    from .mechanisms import eval_term

    def nonlocal_fn(fields):
        return {name: integrate_domain(fields[name], grid) for name in integrated}

    def evaluate(t, fields, nl):
        out = {}
        for c in model.components:
            acc = np.zeros(grid.shape)
            for term in by_target[c]:
                extra = None
                if term.info.nonlocal_:
                    extra = {"virus_integral": nl[term.bind["virus"]], "chi": chi}
                acc = acc + eval_term(term, fields, nonlocal_values=extra)
            for tt in transport[c]:
                if tt.kind == "Diffusion":
                    acc = acc + tt.d * laplacian_neumann(fields[c], grid)
                elif tt.kind == "AnisoDiffusion":
                    acc = acc + aniso_diffusion(fields[c], tt.anisotropy, tt.d, grid)
                elif tt.kind == "Chemotaxis":
                    acc = acc + chemotaxis_div(fields[c], fields[tt.attractant], tt.d, grid)
                else:
                    acc = acc - tt.d * laplacian_neumann(fields[tt.attractant], grid)
            out[c] = acc
        return out

    return RhsFunction(grid, model.components, evaluate, nonlocal_fn if integrated else None, name=model.name)


def initial_state(model: ModelDefinition, grid: Grid) -> SystemState:
    values = model.initial_values()
    return SystemState(0.0, {c: grid.full(values[c]) for c in model.components}, grid)


# ---------------------------------------------------------------------------
# Presets

TABLE_1 = {
    "a1": 1.0,
    "C1": 1.0,
    "eps": 0.05,
    "kappa": 0.01,
    "d1_ctc": 0.6,
    "a2_h": 2.0,
    "C_Th": 8.0,
    "a6": 0.2,
    "dTh_diff": 0.9,
    "C_Tc": 15.0,
    "a3": 0.8,
    "a_nd": 0.6,
    "d3_diff": 0.5,
}

TABLE_2 = {
    (1, "healing"): {"a5": 2.0, "a2_c": 2.0, "dTc_chem": 1.0},
    (1, "chronic"): {"a5": 2.0, "a2_c": 2.0, "dTc_chem": 8.0},
    (2, "healing"): {"a5": 1.0, "a2": 2.0, "d2_chem": 1.0},
    (2, "chronic"): {"a5": 0.5, "a2": 2.0, "d2_chem": 1.0},
    (3, "healing"): {"a5": 0.5, "a2": 2.0},
    (3, "chronic"): {"a5": 0.5, "a2": 0.7},
}

ALLEE = {"a1": "a1", "C1": "C1", "eps": "eps", "kappa": "kappa"}


def _model_1(params):
    params.update({"d1_ecs": 0.0, "a6_h": params["a6"], "a6_c": params["a6"]})
    del params["a6"]
    reactions = [
        MechanismTerm("M1_Allee", "q1", {"virus": "q1"}, ALLEE),
        MechanismTerm("M5_Bilinear", "q1", {"virus": "q1", "killer": "Tc"}, {"a5": "a5"}),
        MechanismTerm("M2_GlobalSaturated", "Th", {"virus": "q1"}, {"a2": "a2_h", "C2": "C_Th"}),
        MechanismTerm("M6_VirusDependent", "Th", {"virus": "q1"}, {"a6": "a6_h", "C1": "C1"}),
        MechanismTerm("M2_GlobalSaturated", "Tc", {"virus": "q1"}, {"a2": "a2_c", "C2": "C_Tc"}),
        MechanismTerm("M6_VirusDependent", "Tc", {"virus": "q1"}, {"a6": "a6_c", "C1": "C1"}),
        MechanismTerm("M3_Product", "q3", {"virus": "q1", "helper": "Th"}, {"a3": "a3"}),
        MechanismTerm("ND_Linear", "q3", {}, {"a_nd": "a_nd"}),
    ]
    taxis = [
        TaxisTerm("Diffusion", "q1", "d1_ctc"),
        TaxisTerm("AnisoDiffusion", "q1", "d1_ecs", anisotropy=AnisotropyMap.identity()),
        TaxisTerm("Diffusion", "Th", "dTh_diff"),
        TaxisTerm("Chemotaxis", "Tc", "dTc_chem", attractant="q3"),
        TaxisTerm("Diffusion", "q3", "d3_diff"),
    ]
    keep = {"a1", "C1", "eps", "kappa", "d1_ctc", "d1_ecs", "a2_h", "C_Th", "a6_h", "a6_c", "dTh_diff",
            "C_Tc", "a3", "a_nd", "d3_diff", "a5", "a2_c", "dTc_chem"}
    return ("q1", "Th", "Tc", "q3"), reactions, taxis, keep


def _model_2(params):
    params["d2_diff"] = params["dTh_diff"]
    reactions = [
        MechanismTerm("M1_Allee", "q1", {"virus": "q1"}, ALLEE),
        MechanismTerm("M5_Bilinear", "q1", {"virus": "q1", "killer": "q2"}, {"a5": "a5"}),
        MechanismTerm("M2_Global", "q2", {"virus": "q1"}, {"a2": "a2"}),
        MechanismTerm("M6_VirusDependent", "q2", {"virus": "q1"}, {"a6": "a6", "C1": "C1"}),
        MechanismTerm("M3_VirusOnly", "q3", {"virus": "q1"}, {"a3": "a3"}),
        MechanismTerm("ND_Linear", "q3", {}, {"a_nd": "a_nd"}),
    ]
    taxis = [
        TaxisTerm("Diffusion", "q1", "d1_ctc"),
        TaxisTerm("Diffusion", "q2", "d2_diff"),
        TaxisTerm("Chemotaxis", "q2", "d2_chem", attractant="q3"),
        TaxisTerm("Diffusion", "q3", "d3_diff"),
    ]
    keep = {"a1", "C1", "eps", "kappa", "d1_ctc", "a2", "a6", "d2_diff", "d2_chem", "a3", "a_nd",
            "d3_diff", "a5"}
    return ("q1", "q2", "q3"), reactions, taxis, keep


def _model_3(params):
    params["d2_diff"] = params["dTh_diff"]
    reactions = [
        MechanismTerm("M1_Allee", "q1", {"virus": "q1"}, ALLEE),
        MechanismTerm("M5_Bilinear", "q1", {"virus": "q1", "killer": "q2"}, {"a5": "a5"}),
        MechanismTerm("M2_Global", "q2", {"virus": "q1"}, {"a2": "a2"}),
        MechanismTerm("M6_VirusDependent", "q2", {"virus": "q1"}, {"a6": "a6", "C1": "C1"}),
    ]
    taxis = [
        TaxisTerm("Diffusion", "q1", "d1_ctc"),
        TaxisTerm("Diffusion", "q2", "d2_diff"),
    ]
    keep = {"a1", "C1", "eps", "kappa", "d1_ctc", "a2", "a6", "d2_diff", "a5"}
    return ("q1", "q2"), reactions, taxis, keep


_BUILDERS = {1: _model_1, 2: _model_2, 3: _model_3}


def preset(model_id: int, course: str = "healing", theta: Region = DEFAULT_THETA) -> ModelDefinition:
    """Models 1-3 with the published parameter tables.

    Model 1 carries the extracellular anisotropic spread with ``d1_ecs = 0``.
    Models 2 and 3 use the T-helper diffusion coefficient for the T-cell
    diffusion ``d2_diff``, which the tables do not list separately.
    """
    try:
        model_id = int(model_id)
    except (TypeError, ValueError):
        raise ConfigError(f"unknown model id {model_id!r}") from None
    if model_id not in _BUILDERS:
        raise ConfigError(f"unknown model id {model_id!r}; choose 1, 2 or 3")
    if (model_id, course) not in TABLE_2:
        raise ConfigError(f"unknown course {course!r}; choose 'healing' or 'chronic'")
    params = dict(TABLE_1)
    params.update(TABLE_2[model_id, course])
    components, reactions, taxis, keep = _BUILDERS[model_id](params)
    params = {k: params[k] for k in sorted(keep)}
    return ModelDefinition(
        name=f"model{model_id}_{course}",
        components=components,
        reaction_terms=reactions,
        taxis_terms=taxis,
        theta=theta,
        parameters=params,
    ).validate()
