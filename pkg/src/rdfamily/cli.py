"""
Command-line front end.

``rdfamily run``    integrate a preset or model file and write norm tables,
                    snapshots, the requirement report and the classification.
``rdfamily check``  run the requirement checker only.
``rdfamily export`` write a preset as a model file.

Exit codes: 0 success, 1 requirement check failed, 2 configuration error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .analysis import classify, sigma_criterion
from .fileio import dump_model, load_model, snapshot_name, write_norms, write_snapshot
from .grid_ops import Grid
from .mechanisms import ConfigError
from .model_family import ModelDefinition, assemble_rhs, initial_state, preset
from .requirements import SampleSpec, check_requirements
from .solver import IntegrationError, SolverConfig, integrate

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("rdfamily")


@dataclass
class RunConfig:
    model_id: int | None = None
    course: str = "healing"
    model_file: str | None = None
    grid_n: int = 21
    t_end: float = 80.0
    snapshots: tuple[float, ...] = ()
    overrides: dict[str, float] = field(default_factory=dict)
    out: str = "."
    seed: int = 0
    sigma: bool = False
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    mode: str = "auto"

    def validate(self) -> None:
        if (self.model_id is None) == (self.model_file is None):
            raise ConfigError("give exactly one of --model or a model file")
        if self.grid_n < 3:
            raise ConfigError("--grid-n must be at least 3")
        if not self.t_end > 0:
            raise ConfigError("--t-end must be positive")
        bad = [t for t in self.snapshots if not 0 <= t <= self.t_end]
        if bad:
            raise ConfigError(f"snapshot times {bad} lie outside [0, t_end]")

    def load(self) -> ModelDefinition:
        model = preset(self.model_id, self.course) if self.model_file is None else load_model(self.model_file)
        if self.overrides:
            model = model.with_overrides(self.overrides).validate()
        return model


def _parse_set(items: list[str]) -> dict[str, float]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise ConfigError(f"--set expects name=value, got {item!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--set {name}: {value!r} is not a number") from None
    return out


def _parse_times(text: str | None) -> tuple[float, ...]:
    if not text:
        return ()
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"--snapshots expects a comma list of times, got {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdfamily", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def source_args(p):
        p.add_argument("model_file", nargs="?", help="model description file")
        p.add_argument("--model", type=int, choices=(1, 2, 3), help="preset model id")
        p.add_argument("--course", choices=("healing", "chronic"), default="healing")
        p.add_argument("--file", dest="file", help="model description file")
        p.add_argument("--set", action="append", default=[], metavar="NAME=VALUE",
                       help="override a parameter (repeatable)")
        p.add_argument("--seed", type=int, default=0, help="seed of the quasi-random samplers")

    run = sub.add_parser("run", help="integrate a model and write results")
    source_args(run)
    run.add_argument("--grid-n", type=int, default=21, help="nodes per axis (default 21, dx = 0.05)")
    run.add_argument("--t-end", type=float, default=80.0)
    run.add_argument("--snapshots", help="comma list of snapshot times")
    run.add_argument("--out", default=".", help="output directory")
    run.add_argument("--sigma", action="store_true", help="write the leveling criterion report")
    run.add_argument("--rel-tol", type=float, default=1e-6)
    run.add_argument("--abs-tol", type=float, default=1e-9)
    run.add_argument("--mode", choices=("auto", "adaptive_explicit", "implicit_stiff"), default="auto")

    check = sub.add_parser("check", help="verify the feasibility rules")
    source_args(check)
    check.add_argument("--out", default=None, help="directory for requirements.txt")

    export = sub.add_parser("export", help="write a preset as a model file")
    export.add_argument("--model", type=int, choices=(1, 2, 3), required=True)
    export.add_argument("--course", choices=("healing", "chronic"), default="healing")
    export.add_argument("--out", default=None, help="target file (default: stdout)")
    return parser


def _config(args) -> RunConfig:
    if args.model_file and args.file and args.model_file != args.file:
        raise ConfigError("model file given twice")
    cfg = RunConfig(
        model_id=args.model,
        course=args.course,
        model_file=args.file or args.model_file,
        overrides=_parse_set(args.set),
        seed=args.seed,
    )
    if args.command == "run":
        cfg.grid_n = args.grid_n
        cfg.t_end = args.t_end
        cfg.snapshots = _parse_times(args.snapshots)
        cfg.out = args.out
        cfg.sigma = args.sigma
        cfg.rel_tol = args.rel_tol
        cfg.abs_tol = args.abs_tol
        cfg.mode = args.mode
    elif args.out:
        cfg.out = args.out
    cfg.validate()
    return cfg


def run(cfg: RunConfig) -> int:
    model = cfg.load()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = Grid.square(cfg.grid_n)

    report = check_requirements(model, SampleSpec(seed=cfg.seed, grid_n=cfg.grid_n))
    (out / "requirements.txt").write_text(report.to_text())
    if not report.all_passed:
        log.warning("model violates %s", ", ".join(report.failed))
    if cfg.sigma:
        (out / "sigma.txt").write_text(sigma_criterion(model, seed=cfg.seed, grid=grid).to_text())

    solver_cfg = SolverConfig(
        t_end=cfg.t_end,
        rel_tol=cfg.rel_tol,
        abs_tol=cfg.abs_tol,
        mode=cfg.mode,
        output_times=tuple(sorted(set(cfg.snapshots))) + tuple(
            cfg.t_end * k / 200 for k in range(201)
        ),
    )
    status = EXIT_OK
    try:
        traj = integrate(assemble_rhs(model, grid), initial_state(model, grid), solver_cfg)
    except IntegrationError as exc:
        log.error("integration failed: %s", exc)
        traj = exc.trajectory
        status = EXIT_SOLVER
    if traj is None or not traj.times:
        return EXIT_SOLVER
    write_norms(out / "norms.csv", traj)
    for t in sorted(set(cfg.snapshots)):
        hits = [i for i, s in enumerate(traj.times) if abs(s - t) <= 1e-9 * max(1.0, t)]
        if not hits:
            continue
        for c in model.components:
            write_snapshot(out / snapshot_name(c, t), t, c, traj.states[hits[0]][c], grid)
    if status == EXIT_OK:
        result = classify(traj, virus=model.virus)
        (out / "classification.txt").write_text(result.to_text())
        log.info("%s: %s", model.name, result.label)
        print(f"{model.name}: {result.label}")
    return status


def check(cfg: RunConfig) -> int:
    model = cfg.load()
    report = check_requirements(model, SampleSpec(seed=cfg.seed))
    text = report.to_text()
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "requirements.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if report.all_passed else EXIT_CHECK_FAILED


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "export":
            text = dump_model(preset(args.model, args.course))
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        cfg = _config(args)
        if args.command == "check":
            return check(cfg)
        return run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
