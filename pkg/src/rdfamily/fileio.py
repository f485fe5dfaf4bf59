"""
Text formats: model description files, field snapshots and norm tables.

Model files are flat sections of ``key = value`` lines::

    [model]
    name = my_model
    components = q1, q2
    theta = 0.8, 1.0, 0.0, 0.2

    [parameters]
    a1 = 1.0

    [term]
    kind = M1_Logistic
    target = q1
    a1 = $a1          # "$name" refers to the parameter table
    C1 = 1.0

    [taxis]
    kind = Chemotaxis
    target = q2
    d = 1.0
    attractant = q3

Roles other than the target role are bound with ``bind.<role> = <component>``;
anisotropic diffusion takes ``a11``, ``a12``, ``a22``.  ``[term]`` and
``[taxis]`` may repeat; ``[initial]`` optionally sets constant initial values.
Comments start with ``#``.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .grid_ops import AnisotropyMap, Grid, Region
from .mechanisms import KINDS, ConfigError, MechanismTerm
from .model_family import ModelDefinition, TaxisTerm
from .solver import Trajectory

SECTIONS = ("model", "parameters", "term", "taxis", "initial")


class ModelFileError(ConfigError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None, source: str = "<model>"):
        where = source if line is None else f"{source}:{line}"
        if key:
            where += f" [{key}]"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.key = key


def _blocks(text: str, source: str):
    """Yield ``(section, start_line, {key: (value, line)})`` in file order."""
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in SECTIONS:
                raise ModelFileError(f"unknown section [{name}]", lineno, source=source)
            if current is not None:
                yield current
            current = (name, lineno, {})
            continue
        if current is None:
            raise ModelFileError("key outside of any section", lineno, source=source)
        if "=" not in line:
            raise ModelFileError(f"expected 'key = value', got {line!r}", lineno, source=source)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ModelFileError("empty key", lineno, source=source)
        if key in current[2]:
            raise ModelFileError("duplicate key", lineno, key, source)
        current[2][key] = (value, lineno)
    if current is not None:
        yield current


def _number(value: str, line: int, key: str, source: str) -> float:
    try:
        v = float(value)
    except ValueError:
        raise ModelFileError(f"expected a number, got {value!r}", line, key, source) from None
    if not np.isfinite(v):
        raise ModelFileError("value must be finite", line, key, source)
    return v


def _param(value: str, line: int, key: str, source: str) -> float | str:
    if value.startswith("$"):
        ref = value[1:].strip()
        if not ref:
            raise ModelFileError("empty parameter reference", line, key, source)
        return ref
    return _number(value, line, key, source)


def parse_model(text: str, source: str = "<model>") -> ModelDefinition:
    """Parse a model file; every error names the line and key at fault."""
    header = None
    params: dict[str, float] = {}
    initial: dict[str, float] | None = None
    terms, taxis = [], []
    for section, start, entries in _blocks(text, source):
        if section == "model":
            if header is not None:
                raise ModelFileError("second [model] section", start, source=source)
            header = (entries, start)
        elif section == "parameters":
            for k, (v, ln) in entries.items():
                if k in params:
                    raise ModelFileError("parameter defined twice", ln, k, source)
                params[k] = _number(v, ln, k, source)
        elif section == "initial":
            initial = initial or {}
            for k, (v, ln) in entries.items():
                initial[k] = _number(v, ln, k, source)
        elif section == "term":
            terms.append(_parse_term(entries, start, source))
        else:
            taxis.append(_parse_taxis(entries, start, source))
    if header is None:
        raise ModelFileError("missing [model] section", source=source)
    entries, start = header
    for required in ("name", "components"):
        if required not in entries:
            raise ModelFileError(f"[model] needs '{required}'", start, required, source)
    unknown = set(entries) - {"name", "components", "theta"}
    if unknown:
        k = sorted(unknown)[0]
        raise ModelFileError("unknown key in [model]", entries[k][1], k, source)
    comps_value, comps_line = entries["components"]
    components = tuple(c.strip() for c in comps_value.split(",") if c.strip())
    if not components:
        raise ModelFileError("no components declared", comps_line, "components", source)
    theta = Region(0.8, 1.0, 0.0, 0.2)
    if "theta" in entries:
        v, ln = entries["theta"]
        parts = v.split(",")
        if len(parts) != 4:
            raise ModelFileError("theta needs x_min, x_max, y_min, y_max", ln, "theta", source)
        try:
            theta = Region(*(_number(p.strip(), ln, "theta", source) for p in parts))
        except ValueError as exc:
            if isinstance(exc, ModelFileError):
                raise
            raise ModelFileError(str(exc), ln, "theta", source) from None
    model = ModelDefinition(
        name=entries["name"][0],
        components=components,
        reaction_terms=terms,
        taxis_terms=taxis,
        theta=theta,
        parameters=params,
        initial=initial,
    )
    problems = model.problems()
    if problems:
        raise ModelFileError("invalid model:\n  " + "\n  ".join(problems), source=source)
    return model


def _parse_term(entries, start, source) -> MechanismTerm:
    if "kind" not in entries:
        raise ModelFileError("[term] needs 'kind'", start, "kind", source)
    if "target" not in entries:
        raise ModelFileError("[term] needs 'target'", start, "target", source)
    kind, kind_line = entries["kind"]
    info = KINDS.get(kind)
    if info is None:
        raise ModelFileError(f"unknown mechanism kind {kind!r}", kind_line, "kind", source)
    bind, params = {}, {}
    for k, (v, ln) in entries.items():
        if k in ("kind", "target"):
            continue
        if k.startswith("bind."):
            bind[k[5:]] = v
        elif k in info.params:
            params[k] = _param(v, ln, k, source)
        else:
            raise ModelFileError(f"{kind} has no parameter or role {k!r}", ln, k, source)
    try:
        return MechanismTerm(kind, entries["target"][0], bind, params)
    except ConfigError as exc:
        raise ModelFileError(str(exc), start, source=source) from None


def _parse_taxis(entries, start, source) -> TaxisTerm:
    for required in ("kind", "target", "d"):
        if required not in entries:
            raise ModelFileError(f"[taxis] needs '{required}'", start, required, source)
    allowed = {"kind", "target", "d", "attractant", "a11", "a12", "a22"}
    for k, (_, ln) in entries.items():
        if k not in allowed:
            raise ModelFileError("unknown key in [taxis]", ln, k, source)
    kind = entries["kind"][0]
    d_value, d_line = entries["d"]
    aniso = None
    if any(k in entries for k in ("a11", "a12", "a22")):
        vals = {k: _number(*entries[k], k, source) for k in ("a11", "a12", "a22") if k in entries}
        try:
            aniso = AnisotropyMap(vals.get("a11", 1.0), vals.get("a12", 0.0), vals.get("a22", 1.0))
        except ValueError as exc:
            raise ModelFileError(str(exc), start, "a11", source) from None
    try:
        return TaxisTerm(
            kind,
            entries["target"][0],
            _param(d_value, d_line, "d", source),
            attractant=entries["attractant"][0] if "attractant" in entries else None,
            anisotropy=aniso,
        )
    except ConfigError as exc:
        raise ModelFileError(str(exc), start, source=source) from None


def load_model(path: str | Path) -> ModelDefinition:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read model file {path}: {exc.strerror}") from None
    return parse_model(text, source=str(path))


def _fmt(v) -> str:
    return v if isinstance(v, str) else repr(float(v))


def _ref(v) -> str:
    return f"${v}" if isinstance(v, str) else repr(float(v))


def dump_model(model: ModelDefinition) -> str:
    """Serialize a model so that :func:`parse_model` returns an equal definition."""
    out = [
        "[model]",
        f"name = {model.name}",
        f"components = {', '.join(model.components)}",
        "theta = " + ", ".join(repr(float(v)) for v in model.theta.as_tuple()),
        "",
        "[parameters]",
    ]
    out += [f"{k} = {_fmt(v)}" for k, v in model.parameters.items()]
    if model.initial:
        out += ["", "[initial]"] + [f"{k} = {_fmt(v)}" for k, v in model.initial.items()]
    for t in model.reaction_terms:
        out += ["", "[term]", f"kind = {t.kind}", f"target = {t.target}"]
        out += [f"bind.{r} = {c}" for r, c in t.bind.items() if r != t.info.target_role]
        out += [f"{k} = {_ref(v)}" for k, v in t.params.items()]
    for t in model.taxis_terms:
        out += ["", "[taxis]", f"kind = {t.kind}", f"target = {t.target}", f"d = {_ref(t.d)}"]
        if t.attractant:
            out.append(f"attractant = {t.attractant}")
        if t.anisotropy is not None:
            if not t.anisotropy.is_constant:
                raise ConfigError("only constant anisotropy tensors can be written to a model file")
            a = t.anisotropy
            out += [f"a11 = {_fmt(a.a11)}", f"a12 = {_fmt(a.a12)}", f"a22 = {_fmt(a.a22)}"]
    return "\n".join(out) + "\n"


# --- snapshots and norm tables -------------------------------------------------

def format_time(t: float) -> str:
    return f"{t:g}"


def write_snapshot(path: str | Path, t: float, component: str, values: np.ndarray, grid: Grid) -> None:
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValueError(f"snapshot shape {values.shape} does not match grid {grid.shape}")
    buf = io.StringIO()
    buf.write(f"# t={format_time(t)} component={component} nx={grid.nx} ny={grid.ny}\n")
    for row in values:
        buf.write(" ".join(f"{v:.12e}" for v in row) + "\n")
    Path(path).write_text(buf.getvalue())


def read_snapshot(path: str | Path) -> tuple[float, str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing snapshot header")
    meta = dict(item.split("=", 1) for item in lines[0][1:].split())
    nx, ny = int(meta["nx"]), int(meta["ny"])
    values = np.array([[float(v) for v in line.split()] for line in lines[1:] if line.strip()])
    if values.shape != (ny, nx):
        raise ValueError(f"{path}: expected {ny}x{nx} values, got {values.shape}")
    return float(meta["t"]), meta["component"], values


def snapshot_name(component: str, t: float) -> str:
    return f"snapshot_{component}_t{format_time(t)}.txt"


def write_norms(path: str | Path, traj: Trajectory) -> None:
    header = ["t"]
    for c in traj.components:
        header += [f"{c}_L1", f"{c}_Linf"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, t in enumerate(traj.times):
            row = [f"{t:.10g}"]
            for c in traj.components:
                row += [f"{traj.norms[c]['L1'][i]:.12e}", f"{traj.norms[c]['Linf'][i]:.12e}"]
            w.writerow(row)


def read_norms(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
