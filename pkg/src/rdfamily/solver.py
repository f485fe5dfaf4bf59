"""
Time integration of the semi-discrete system.

Two steppers share one driver:

* an embedded Dormand-Prince 5(4) pair with first-same-as-last reuse, for the
  non-stiff phase;
* a variable-order (1-5) backward-differentiation method in quasi-constant
  step form, whose Newton systems are solved by GMRES on finite-difference
  Jacobian-vector products, preconditioned by a sparse LU of
  ``I - c J_local`` where ``J_local`` is a colored finite-difference Jacobian
  of the local (stencil) coupling.

In ``auto`` mode the driver starts explicit and switches to the implicit
stepper once the explicit step is stability limited.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, splu

from .grid_ops import integrate_domain
from .model_family import RhsFunction, SystemState

log = logging.getLogger(__name__)

MODES = ("adaptive_explicit", "implicit_stiff", "auto")
EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverConfig:
    t_end: float
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    dt_init: float = 1e-4
    dt_min: float = 1e-12
    dt_max: float = np.inf
    mode: str = "auto"
    output_times: tuple[float, ...] | None = None
    clip_negative: bool = True
    n_outputs: int = 201
    probe_interval: int = 50
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.output_times is not None:
            object.__setattr__(self, "output_times", tuple(float(t) for t in self.output_times))

    def sample_times(self) -> np.ndarray:
        if self.output_times is None:
            ts = np.linspace(0.0, self.t_end, self.n_outputs)
        else:
            ts = np.asarray(self.output_times, dtype=float)
            if np.any(ts < 0) or np.any(ts > self.t_end * (1 + 1e-12)):
                raise ValueError("output times must lie in [0, t_end]")
            ts = np.minimum(ts, self.t_end)
        return np.unique(np.concatenate([[0.0], ts, [self.t_end]]))


@dataclass
class Trajectory:
    """Sampled solution: times, per-component norm series and full states."""

    grid: object
    components: tuple[str, ...]
    times: list[float] = field(default_factory=list)
    states: list[dict[str, np.ndarray]] = field(default_factory=list)
    norms: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    step_stats: dict = field(default_factory=dict)
    status: str = "running"

    def append(self, t: float, fields: dict[str, np.ndarray]) -> None:
        self.times.append(float(t))
        self.states.append({k: np.array(v) for k, v in fields.items()})
        for c in self.components:
            f = fields[c]
            entry = self.norms.setdefault(c, {"L1": [], "Linf": []})
            entry["L1"].append(integrate_domain(np.abs(f), self.grid))
            entry["Linf"].append(float(np.max(np.abs(f))))

    def l1(self, component: str) -> np.ndarray:
        return np.asarray(self.norms[component]["L1"])

    def linf(self, component: str) -> np.ndarray:
        return np.asarray(self.norms[component]["Linf"])

    @property
    def t_end(self) -> float:
        return self.times[-1]

    def state_at(self, t: float) -> SystemState:
        """Stored sample closest to ``t``."""
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return SystemState(self.times[i], self.states[i], self.grid)

    def final_state(self) -> SystemState:
        return SystemState(self.times[-1], self.states[-1], self.grid)

    def min_value(self) -> float:
        return min(float(np.min(f)) for s in self.states for f in s.values())


class IntegrationError(RuntimeError):
    """Integration stopped early; ``trajectory`` holds the samples reached."""

    def __init__(self, message: str, trajectory: Trajectory | None = None, component: str | None = None):
        super().__init__(message)
        self.trajectory = trajectory
        self.component = component


class _Problem:
    """Flat view of an :class:`RhsFunction` with evaluation counting and NaN checks."""

    def __init__(self, rhs: RhsFunction):
        self.rhs = rhs
        self.n_evals = 0
        self.n_jac = 0

    def __call__(self, t, y, frozen=None):
        self.n_evals += 1
        out = self.rhs.flat(t, y, frozen)
        if not np.all(np.isfinite(out)):
            blocks = self.rhs.unpack(out)
            bad = next(c for c, b in blocks.items() if not np.all(np.isfinite(b)))
            raise _NonFinite(bad, t)
        return out

    def jvp(self, t, y, f0, v):
        nv = np.linalg.norm(v)
        if nv == 0:
            return np.zeros_like(v)
        h = np.sqrt(EPS) * (1.0 + np.linalg.norm(y)) / nv
        return (self(t, y + h * v) - f0) / h

    def local_jacobian(self, t, y) -> sp.csc_matrix:
        """Colored finite-difference Jacobian of the 3x3-stencil coupling.

        Nodes sharing ``(i mod 3, j mod 3)`` have disjoint neighbourhoods, so
        one perturbed evaluation per color and component recovers every
        entry.  Global scalars stay frozen at their value in ``y``.
        """
        self.n_jac += 1
        rhs = self.rhs
        ny, nx = rhs.grid.shape
        nn = nx * ny
        ncomp = len(rhs.components)
        frozen = rhs.nonlocal_values(y)
        f0 = self(t, y, frozen)
        jj, ii = np.divmod(np.arange(nn), nx)
        color = (ii % 3) + 3 * (jj % 3)
        h = 1.5e-8 * np.maximum(np.abs(y), 1.0)
        df = np.empty((ncomp, 9, ncomp * nn))
        for b in range(ncomp):
            for col in range(9):
                idx = b * nn + np.flatnonzero(color == col)
                yp = y.copy()
                yp[idx] += h[idx]
                df[b, col] = self(t, yp, frozen) - f0
        rows, cols, vals = [], [], []
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                qi, qj = ii + di, jj + dj
                ok = (qi >= 0) & (qi < nx) & (qj >= 0) & (qj < ny)
                p = np.flatnonzero(ok)
                q = qj[ok] * nx + qi[ok]
                for b in range(ncomp):
                    for a in range(ncomp):
                        r = a * nn + p
                        c = b * nn + q
                        vals.append(df[b, color[q], r] / h[c])
                        rows.append(r)
                        cols.append(c)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        keep = vals != 0
        n = ncomp * nn
        return sp.csc_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))


class _NonFinite(Exception):
    def __init__(self, component, t):
        self.component = component
        self.t = t


def _err_norm(err, scale):
    return float(np.max(np.abs(err) / scale)) if err.size else 0.0


# --- power iteration ---------------------------------------------------------

def _probe(problem: _Problem, t: float, y: np.ndarray, iterations: int = 20, seed: int = 0) -> float:
    f0 = problem(t, y)
    v = np.random.default_rng(seed).standard_normal(y.size)
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(iterations):
        w = problem.jvp(t, y, f0, v)
        rho = float(np.linalg.norm(w))
        if rho == 0 or not np.isfinite(rho):
            return 0.0 if rho == 0 else rho
        v = w / rho
    return rho


def stiffness_probe(rhs: RhsFunction, s: SystemState, iterations: int = 20, seed: int = 0) -> float:
    """Dominant Jacobian eigenvalue magnitude by power iteration on directional derivatives."""
    problem = _Problem(rhs)
    return _probe(problem, s.t, rhs.pack(s.fields), iterations, seed)


# --- Dormand-Prince 5(4) -----------------------------------------------------

_DP_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_DP_E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def _dp_attempt(problem, t, y, f, h):
    k = [f]
    for i in range(1, 7):
        yi = y + h * sum(a * kj for a, kj in zip(_DP_A[i], k) if a != 0)
        k.append(problem(t + _DP_C[i] * h, yi))
    y_new = y + h * sum(b * kj for b, kj in zip(_DP_B, k) if b != 0)
    err = h * sum(e * kj for e, kj in zip(_DP_E, k) if e != 0)
    return y_new, k[-1], err


# --- variable-order BDF ----------------------------------------------------

MAX_ORDER = 5
NEWTON_MAXITER = 4
_KAPPA = np.array([0, -0.1850, -1 / 9, -0.0823, -0.0415, 0])
_GAMMA = np.hstack((0, np.cumsum(1 / np.arange(1, MAX_ORDER + 1))))
_ALPHA = (1 - _KAPPA) * _GAMMA
_ERROR_CONST = _KAPPA * _GAMMA + 1 / np.arange(1, MAX_ORDER + 2)


def _step_change_matrix(order, factor):
    i = np.arange(1, order + 1)[:, None]
    j = np.arange(1, order + 1)
    m = np.zeros((order + 1, order + 1))
    m[1:, 1:] = (i - 1 - factor * j) / i
    m[0] = 1
    return np.cumprod(m, axis=0)


def _rescale_differences(D, order, factor):
    """Rewrite the backward differences for a step scaled by ``factor``."""
    ru = _step_change_matrix(order, factor) @ _step_change_matrix(order, 1)
    D[: order + 1] = ru.T @ D[: order + 1]


class _Bdf:
    def __init__(self, problem, t, y, h, cfg):
        self.problem = problem
        self.cfg = cfg
        self.t = t
        self.y = y
        self.h = h
        self.order = 1
        self.n_equal = 0
        self.D = np.zeros((MAX_ORDER + 3, y.size))
        self.D[0] = y
        self.D[1] = problem(t, y) * h
        self.jac = None
        self.jac_current = False
        self.lu = None
        self.lu_c = None
        self.newton_tol = max(10 * EPS / cfg.rel_tol, min(0.03, cfg.rel_tol ** 0.5))
        self.n_gmres = 0

    def _set_h(self, factor):
        _rescale_differences(self.D, self.order, factor)
        self.h *= factor
        self.n_equal = 0
        self.lu = None

    def _linear_solver(self, t_new, c):
        if self.jac is None:
            self.jac = self.problem.local_jacobian(t_new, self.D[: self.order + 1].sum(axis=0))
            self.jac_current = True
        # GMRES absorbs a moderately stale preconditioner, so refactor only on larger changes.
        if self.lu is None or abs(c - self.lu_c) > 0.3 * abs(self.lu_c):
            n = self.jac.shape[0]
            self.lu = splu((sp.identity(n, format="csc") - c * self.jac).tocsc())
            self.lu_c = c
        return self.lu

    def _newton(self, t_new, y_pred, c, psi, scale):
        problem = self.problem
        lu = self._linear_solver(t_new, c)
        n = y_pred.size
        precond = LinearOperator((n, n), matvec=lu.solve)
        d = np.zeros(n)
        y = y_pred.copy()
        old = None
        for k in range(NEWTON_MAXITER):
            f = problem(t_new, y)
            res = c * f - psi - d

            def matvec(v, y=y, f=f):
                return v - c * problem.jvp(t_new, y, f, v)

            op = LinearOperator((n, n), matvec=matvec)
            counter = [0]
            dy, info = gmres(op, res, x0=lu.solve(res), rtol=1e-4, atol=0.0, restart=20, maxiter=3,
                             M=precond, callback=lambda _: counter.__setitem__(0, counter[0] + 1),
                             callback_type="pr_norm")
            self.n_gmres += counter[0]
            if counter[0] > 6 and not self.jac_current:
                # Preconditioner has drifted too far from the true Jacobian.
                self.jac = None
            if info < 0 or not np.all(np.isfinite(dy)):
                return False, k + 1, y, d
            norm = _err_norm(dy, scale)
            rate = None if old is None else norm / old
            if rate is not None and (rate >= 1 or rate ** (NEWTON_MAXITER - k) / (1 - rate) * norm > self.newton_tol):
                return False, k + 1, y, d
            y = y + dy
            d = d + dy
            if norm == 0 or (rate is not None and rate / (1 - rate) * norm < self.newton_tol):
                return True, k + 1, y, d
            old = norm
        return False, NEWTON_MAXITER, y, d

    def step(self, t_limit, stats):
        """One accepted step not beyond ``t_limit``; returns ``(t_new, y_new)``."""
        cfg = self.cfg
        while True:
            if self.h > cfg.dt_max:
                self._set_h(cfg.dt_max / self.h)
            if self.h < cfg.dt_min:
                raise _StepUnderflow(self.t, self.h)
            t_new = self.t + self.h
            if t_new >= t_limit - 1e-14 * max(1.0, abs(t_limit)):
                t_new = t_limit
                self._set_h((t_new - self.t) / self.h)
            h = t_new - self.t
            order = self.order
            y_pred = self.D[: order + 1].sum(axis=0)
            scale = cfg.abs_tol + cfg.rel_tol * np.abs(y_pred)
            psi = self.D[1: order + 1].T @ _GAMMA[1: order + 1] / _ALPHA[order]
            c = h / _ALPHA[order]
            while True:
                ok, n_iter, y_new, d = self._newton(t_new, y_pred, c, psi, scale)
                if ok or self.jac_current:
                    break
                self.jac = None
                self.lu = None
            if not ok:
                stats["rejected"] += 1
                self._set_h(0.5)
                continue
            safety = 0.9 * (2 * NEWTON_MAXITER + 1) / (2 * NEWTON_MAXITER + n_iter)
            scale = cfg.abs_tol + cfg.rel_tol * np.abs(y_new)
            error_norm = _err_norm(_ERROR_CONST[order] * d, scale)
            if error_norm > 1:
                stats["rejected"] += 1
                self._set_h(max(0.2, safety * error_norm ** (-1 / (order + 1))))
                continue
            break

        self.n_equal += 1
        self.t = t_new
        self.y = y_new
        self.jac_current = False
        D = self.D
        D[order + 2] = d - D[order + 1]
        D[order + 1] = d
        for i in reversed(range(order + 1)):
            D[i] += D[i + 1]
        if self.n_equal >= order + 1:
            err_m = _err_norm(_ERROR_CONST[order - 1] * D[order], scale) if order > 1 else np.inf
            err_p = _err_norm(_ERROR_CONST[order + 1] * D[order + 2], scale) if order < MAX_ORDER else np.inf
            norms = np.array([err_m, error_norm, err_p])
            with np.errstate(divide="ignore"):
                factors = norms ** (-1 / np.arange(order, order + 3))
            self.order = order + int(np.argmax(factors)) - 1
            self._set_h(min(10.0, safety * float(np.max(factors))))
        return t_new, y_new

    def replace_state(self, y):
        """Adopt a clamped state without restarting the difference history."""
        self.D[0] += y - self.y
        self.y = y


class _StepUnderflow(Exception):
    def __init__(self, t, h):
        self.t = t
        self.h = h


# --- driver -------------------------------------------------------------------

def _hermite(t0, y0, f0, t1, y1, f1, t):
    h = t1 - t0
    s = (t - t0) / h
    h10 = s ** 3 - 2 * s ** 2 + s
    h01 = -2 * s ** 3 + 3 * s ** 2
    h11 = s ** 3 - s ** 2
    # Increment form keeps a constant solution bit-exact.
    return y0 + h01 * (y1 - y0) + h * (h10 * f0 + h11 * f1)


def integrate(rhs: RhsFunction, s0: SystemState, cfg: SolverConfig) -> Trajectory:
    """Advance ``s0`` to ``cfg.t_end`` and sample the solution at the output times.

    Raises
    ------
    IntegrationError
        On step-size underflow or a non-finite right-hand side; the partial
        trajectory is attached.
    """
    y = rhs.pack(s0.fields)
    if not np.all(np.isfinite(y)):
        raise IntegrationError("initial state is not finite")
    problem = _Problem(rhs)
    grid = rhs.grid
    ncomp = len(rhs.components)
    weights = np.tile(grid.weights().ravel(), ncomp)
    traj = Trajectory(grid, rhs.components)
    stats = {
        "accepted": 0, "rejected": 0, "rhs_evals": 0, "jacobians": 0, "gmres_iterations": 0,
        "switches": [], "mode": "implicit_stiff" if cfg.mode == "implicit_stiff" else "adaptive_explicit",
        "clamped_mass": {c: 0.0 for c in rhs.components}, "min_value": float(np.min(y)),
        "stiffness_estimates": [],
    }
    traj.step_stats = stats
    samples = cfg.sample_times()
    next_sample = 0

    def clamp(vec, account):
        if not cfg.clip_negative:
            return vec
        mask = (vec < 0) & (vec >= -cfg.abs_tol)
        if not mask.any():
            return vec
        if account:
            lost = np.where(mask, -vec * weights, 0.0).reshape(ncomp, -1).sum(axis=1)
            for c, m in zip(rhs.components, lost):
                stats["clamped_mass"][c] += float(m)
            log.debug("clamped %d undershooting values", int(mask.sum()))
        return np.where(mask, 0.0, vec)

    def emit(t0, y0, f0, t1, y1, f1):
        nonlocal next_sample
        while next_sample < len(samples) and samples[next_sample] <= t1 + 1e-12 * max(1.0, t1):
            ts = samples[next_sample]
            if t1 == t0 or ts >= t1:
                ys = y1
            else:
                ys = clamp(_hermite(t0, y0, f0, t1, y1, f1, ts), account=False)
            traj.append(ts, rhs.unpack(ys))
            next_sample += 1

    def finish(status):
        stats["rhs_evals"] = problem.n_evals
        stats["jacobians"] = problem.n_jac
        if bdf is not None:
            stats["gmres_iterations"] = bdf.n_gmres
        traj.status = status

    bdf = None
    t = 0.0 if s0.t is None else float(s0.t)
    if t != 0.0:
        samples = samples + t
    t_end = t + cfg.t_end
    try:
        f = problem(t, y)
        emit(t, y, f, t, y, f)
        h = min(cfg.dt_init, cfg.dt_max)
        implicit = cfg.mode == "implicit_stiff"
        if implicit:
            bdf = _Bdf(problem, t, y, h, cfg)
        consecutive_rejects = 0
        steps = 0
        while t < t_end - 1e-14 * max(1.0, t_end):
            steps += 1
            if steps > cfg.max_steps:
                raise _StepUnderflow(t, h)
            if implicit:
                t_new, y_new = bdf.step(t_end, stats)
                y_clamped = clamp(y_new, account=True)
                if y_clamped is not y_new:
                    bdf.replace_state(y_clamped)
                y_new = y_clamped
                f_new = problem(t_new, y_new)
            else:
                h = min(h, cfg.dt_max, t_end - t)
                if h < cfg.dt_min and t_end - t > cfg.dt_min:
                    raise _StepUnderflow(t, h)
                y_new, f_new, err = _dp_attempt(problem, t, y, f, h)
                scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
                err_norm = _err_norm(err, scale)
                if err_norm > 1:
                    stats["rejected"] += 1
                    consecutive_rejects += 1
                    h *= max(0.2, 0.9 * err_norm ** -0.2)
                    if cfg.mode == "auto" and consecutive_rejects > 20 and h <= 2 * cfg.dt_min:
                        implicit = True
                        stats["switches"].append((t, "rejects"))
                        bdf = _Bdf(problem, t, y, max(h, cfg.dt_min), cfg)
                    continue
                consecutive_rejects = 0
                t_new = t + h
                if t_end - t_new < 1e-14 * max(1.0, t_end):
                    t_new = t_end
                growth = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
                h_used = h
                h *= growth
                y_clamped = clamp(y_new, account=True)
                if y_clamped is not y_new:
                    y_new = y_clamped
                    f_new = problem(t_new, y_new)
            stats["accepted"] += 1
            stats["min_value"] = min(stats["min_value"], float(np.min(y_new)))
            emit(t, y, f, t_new, y_new, f_new)
            t, y, f = t_new, y_new, f_new

            if (cfg.mode == "auto" and not implicit
                    and (stats["accepted"] == 10 or stats["accepted"] % cfg.probe_interval == 0)):
                rho = _probe(problem, t, y)
                stats["stiffness_estimates"].append((t, rho))
                if rho * h_used > 2.5:
                    implicit = True
                    stats["switches"].append((t, "stability"))
                    bdf = _Bdf(problem, t, y, h_used, cfg)
            if implicit:
                stats["mode"] = "implicit_stiff"
    except _StepUnderflow as exc:
        finish("failed")
        raise IntegrationError(
            f"step size fell below dt_min={cfg.dt_min:g} at t={exc.t:.6g}", traj
        ) from None
    except _NonFinite as exc:
        finish("failed")
        raise IntegrationError(
            f"right-hand side of {exc.component!r} is not finite at t={exc.t:.6g}", traj, exc.component
        ) from None
    finish("ok")
    return traj
