"""
Catalog of reaction-function variants for the inflammation model family.

Each :class:`MechanismTerm` is one concrete reaction function feeding one
component.  A term reads the state through *roles* (``virus``, ``tcell``,
``helper``, ``killer``, ``cytokine``) that are bound to component names, so
the same variant can serve ``q2``, ``Th`` or ``Tc``.

Evaluation is vectorised: state values may be scalars or arrays of any common
shape.  The global variants do not see the local virus value at all; they read
the domain integral of the virus and the portal-field density from the
``nonlocal_values`` mapping (keys ``"virus_integral"`` and ``"chi"``).  Their partial
derivative with respect to the virus role is the derivative with respect to
that integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


class ConfigError(ValueError):
    """Raised for malformed terms, models or run configurations."""


@dataclass(frozen=True)
class KindInfo:
    mechanism: str
    roles: tuple[str, ...]
    params: tuple[str, ...]
    target_role: str
    nonlocal_: bool = False


KINDS: dict[str, KindInfo] = {
    "M1_Unbounded": KindInfo("M1", ("virus",), ("a1",), "virus"),
    "M1_Logistic": KindInfo("M1", ("virus",), ("a1", "C1"), "virus"),
    "M1_Allee": KindInfo("M1", ("virus",), ("a1", "C1", "eps", "kappa"), "virus"),
    "M2_LocalUnbounded": KindInfo("M2", ("virus",), ("a2",), "tcell"),
    "M2_LocalBounded": KindInfo("M2", ("virus", "tcell"), ("a2", "C2"), "tcell"),
    "M2_Global": KindInfo("M2", ("virus",), ("a2",), "tcell", nonlocal_=True),
    "M2_GlobalSaturated": KindInfo("M2", ("virus", "tcell"), ("a2", "C2"), "tcell", nonlocal_=True),
    "M3_VirusOnly": KindInfo("M3", ("virus",), ("a3",), "cytokine"),
    "M3_HelperOnly": KindInfo("M3", ("helper",), ("a3",), "cytokine"),
    "M3_Product": KindInfo("M3", ("virus", "helper"), ("a3",), "cytokine"),
    "M3_HelperBounded": KindInfo("M3", ("helper", "cytokine"), ("a3", "C3"), "cytokine"),
    "M3_ProductBounded": KindInfo("M3", ("virus", "helper", "cytokine"), ("a3", "C3"), "cytokine"),
    "M5_Linear": KindInfo("M5", ("killer",), ("a5",), "virus"),
    "M5_Bilinear": KindInfo("M5", ("virus", "killer"), ("a5",), "virus"),
    "M6_NaturalDecay": KindInfo("M6", ("tcell",), ("a6",), "tcell"),
    "M6_VirusDependent": KindInfo("M6", ("virus", "tcell"), ("a6", "C1"), "tcell"),
    "ND_Linear": KindInfo("ND", ("cytokine",), ("a_nd",), "cytokine"),
    "ND_Constant": KindInfo("ND", ("cytokine",), ("a_nd",), "cytokine"),
}

# Slots that must be strictly positive; all other slots are rates and may be 0.
CAPACITY_SLOTS = {"C1", "C2", "C3", "kappa", "eps"}


@dataclass(frozen=True)
class MechanismTerm:
    """One reaction function.

    ``params`` maps slot names (``a1``, ``C1``, ...) to numbers, or to strings
    naming an entry of the owning model's parameter table.  ``bind`` maps the
    kind's roles to component names; the target role is always bound to
    ``target``.
    """

    kind: str
    target: str
    bind: Mapping[str, str]
    params: Mapping[str, float | str] = field(default_factory=dict)

    def __post_init__(self):
        info = KINDS.get(self.kind)
        if info is None:
            raise ConfigError(f"unknown mechanism kind {self.kind!r}")
        bind = dict(self.bind)
        bind.setdefault(info.target_role, self.target)
        if bind.get(info.target_role) != self.target:
            raise ConfigError(
                f"{self.kind}: role {info.target_role!r} must be bound to the target {self.target!r}"
            )
        missing = [r for r in info.roles if r not in bind]
        if missing:
            raise ConfigError(f"{self.kind}: unbound roles {missing}")
        extra = set(bind) - set(info.roles) - {info.target_role}
        if extra:
            raise ConfigError(f"{self.kind}: roles {sorted(extra)} are not read by this kind")
        missing = [p for p in info.params if p not in self.params]
        if missing:
            raise ConfigError(f"{self.kind}: missing parameters {missing}")
        extra = set(self.params) - set(info.params)
        if extra:
            raise ConfigError(f"{self.kind}: unexpected parameters {sorted(extra)}")
        object.__setattr__(self, "bind", bind)
        object.__setattr__(self, "params", dict(self.params))
        if self.is_resolved:
            _check_values(self)

    @property
    def info(self) -> KindInfo:
        return KINDS[self.kind]

    @property
    def mechanism(self) -> str:
        return self.info.mechanism

    @property
    def inputs(self) -> tuple[str, ...]:
        """Component names read by the term (target included when read)."""
        return tuple(dict.fromkeys(self.bind[r] for r in self.info.roles))

    @property
    def is_resolved(self) -> bool:
        return all(not isinstance(v, str) for v in self.params.values())

    def resolve(self, table: Mapping[str, float]) -> "MechanismTerm":
        params = {}
        for slot, v in self.params.items():
            if isinstance(v, str):
                if v not in table:
                    raise ConfigError(f"{self.kind}: parameter reference {v!r} is undefined")
                v = table[v]
            params[slot] = float(v)
        return MechanismTerm(self.kind, self.target, self.bind, params)

    def capacity(self) -> float | None:
        """Upper bound the term imposes on its target, if any."""
        slot = {"M1": "C1", "M2": "C2", "M3": "C3"}.get(self.mechanism)
        if slot is None or slot not in self.params or isinstance(self.params[slot], str):
            return None
        return float(self.params[slot])


def _check_values(term: MechanismTerm) -> None:
    p = term.params
    for slot, v in p.items():
        if not np.isfinite(v):
            raise ConfigError(f"{term.kind}: parameter {slot} is not finite")
        if slot in CAPACITY_SLOTS:
            if v <= 0:
                raise ConfigError(f"{term.kind}: parameter {slot} must be positive, got {v}")
        elif v < 0:
            raise ConfigError(f"{term.kind}: rate {slot} must be non-negative, got {v}")
    if term.kind == "M1_Allee" and not p["eps"] < p["C1"]:
        raise ConfigError(f"M1_Allee needs 0 < eps < C1, got eps={p['eps']}, C1={p['C1']}")


def _role_values(term: MechanismTerm, state: Mapping[str, object]) -> dict[str, object]:
    out = {}
    for role in term.info.roles:
        name = term.bind[role]
        if name not in state:
            raise ConfigError(f"{term.kind}: state lacks component {name!r} (role {role})")
        out[role] = state[name]
    return out


def _nonlocal(term: MechanismTerm, nonlocal_values: Mapping[str, object] | None) -> tuple[object, object]:
    if nonlocal_values is None or "virus_integral" not in nonlocal_values or "chi" not in nonlocal_values:
        raise ConfigError(f"{term.kind} needs nonlocal values 'virus_integral' and 'chi'")
    return nonlocal_values["virus_integral"], nonlocal_values["chi"]


def eval_term(
    term: MechanismTerm,
    state: Mapping[str, object],
    x: object = None,
    nonlocal_values: Mapping[str, object] | None = None,
):
    """Reaction rate of ``term`` at the given state.

    ``x`` is accepted for signature symmetry with space-dependent terms; the
    only spatial dependence in the catalog is the portal-field density, which
    callers pass through ``nonlocal_values["chi"]``.
    """
    if not term.is_resolved:
        raise ConfigError(f"{term.kind}: parameters reference a table, resolve the term first")
    p = term.params
    v = _role_values(term, state)
    k = term.kind

    if k == "M1_Unbounded":
        return p["a1"] * v["virus"]
    if k == "M1_Logistic":
        q = v["virus"]
        return p["a1"] * q * (p["C1"] - q)
    if k == "M1_Allee":
        q = v["virus"]
        return p["a1"] * q * (p["C1"] - q) * (q - p["eps"]) / (q + p["kappa"])
    if k == "M2_LocalUnbounded":
        return p["a2"] * v["virus"]
    if k == "M2_LocalBounded":
        return p["a2"] * v["virus"] * (p["C2"] - v["tcell"])
    if k == "M2_Global":
        total, chi = _nonlocal(term, nonlocal_values)
        return p["a2"] * chi * total
    if k == "M2_GlobalSaturated":
        total, chi = _nonlocal(term, nonlocal_values)
        return p["a2"] * chi * (p["C2"] - v["tcell"]) * total
    if k == "M3_VirusOnly":
        return p["a3"] * v["virus"]
    if k == "M3_HelperOnly":
        return p["a3"] * v["helper"]
    if k == "M3_Product":
        return p["a3"] * v["virus"] * v["helper"]
    if k == "M3_HelperBounded":
        return p["a3"] * v["helper"] * (p["C3"] - v["cytokine"])
    if k == "M3_ProductBounded":
        return p["a3"] * v["helper"] * v["virus"] * (p["C3"] - v["cytokine"])
    if k == "M5_Linear":
        return -p["a5"] * v["killer"]
    if k == "M5_Bilinear":
        return -p["a5"] * v["virus"] * v["killer"]
    if k == "M6_NaturalDecay":
        return -p["a6"] * v["tcell"]
    if k == "M6_VirusDependent":
        return -p["a6"] * v["tcell"] * (p["C1"] - v["virus"])
    if k == "ND_Linear":
        return -p["a_nd"] * v["cytokine"]
    if k == "ND_Constant":
        q = np.asarray(v["cytokine"])
        out = np.where(q > 0, -p["a_nd"], 0.0)
        return out if out.ndim else float(out)
    raise ConfigError(f"unhandled kind {k}")  # pragma: no cover


def eval_term_derivative(
    term: MechanismTerm,
    wrt: str,
    state: Mapping[str, object],
    x: object = None,
    nonlocal_values: Mapping[str, object] | None = None,
):
    """Analytic partial derivative of ``term`` with respect to component ``wrt``.

    Components the term does not read give zero.  ``ND_Constant`` is
    differentiated away from its jump at zero (derivative zero).
    """
    if not term.is_resolved:
        raise ConfigError(f"{term.kind}: parameters reference a table, resolve the term first")
    p = term.params
    v = _role_values(term, state)
    k = term.kind
    roles = [r for r in term.info.roles if term.bind[r] == wrt]
    if not roles:
        return 0.0 * np.asarray(state[wrt]) if wrt in state else 0.0

    total = 0.0
    for role in roles:
        total = total + _partial(k, p, v, role, term, nonlocal_values)
    return total


def _partial(k, p, v, role, term, nonlocal_values):
    if k == "M1_Unbounded":
        return p["a1"] + 0.0 * v["virus"]
    if k == "M1_Logistic":
        return p["a1"] * (p["C1"] - 2 * v["virus"])
    if k == "M1_Allee":
        q = v["virus"]
        a, C, e, kap = p["a1"], p["C1"], p["eps"], p["kappa"]
        num = q * (C - q) * (q - e)
        dnum = (C - q) * (q - e) - q * (q - e) + q * (C - q)
        return a * (dnum * (q + kap) - num) / (q + kap) ** 2
    if k == "M2_LocalUnbounded":
        return p["a2"] + 0.0 * v["virus"]
    if k == "M2_LocalBounded":
        if role == "virus":
            return p["a2"] * (p["C2"] - v["tcell"])
        return -p["a2"] * v["virus"]
    if k == "M2_Global":
        _, chi = _nonlocal(term, nonlocal_values)
        return p["a2"] * chi
    if k == "M2_GlobalSaturated":
        total, chi = _nonlocal(term, nonlocal_values)
        if role == "virus":
            return p["a2"] * chi * (p["C2"] - v["tcell"])
        return -p["a2"] * chi * total
    if k == "M3_VirusOnly":
        return p["a3"] + 0.0 * v["virus"]
    if k == "M3_HelperOnly":
        return p["a3"] + 0.0 * v["helper"]
    if k == "M3_Product":
        return p["a3"] * (v["helper"] if role == "virus" else v["virus"])
    if k == "M3_HelperBounded":
        if role == "helper":
            return p["a3"] * (p["C3"] - v["cytokine"])
        return -p["a3"] * v["helper"]
    if k == "M3_ProductBounded":
        if role == "virus":
            return p["a3"] * v["helper"] * (p["C3"] - v["cytokine"])
        if role == "helper":
            return p["a3"] * v["virus"] * (p["C3"] - v["cytokine"])
        return -p["a3"] * v["helper"] * v["virus"]
    if k == "M5_Linear":
        return -p["a5"] + 0.0 * v["killer"]
    if k == "M5_Bilinear":
        return -p["a5"] * (v["killer"] if role == "virus" else v["virus"])
    if k == "M6_NaturalDecay":
        return -p["a6"] + 0.0 * v["tcell"]
    if k == "M6_VirusDependent":
        if role == "virus":
            return p["a6"] * v["tcell"]
        return -p["a6"] * (p["C1"] - v["virus"])
    if k == "ND_Linear":
        return -p["a_nd"] + 0.0 * v["cytokine"]
    if k == "ND_Constant":
        return 0.0 * v["cytokine"]
    raise ConfigError(f"unhandled kind {k}")  # pragma: no cover
