import numpy as np
import pytest

from rdfamily import (
    Grid,
    IntegrationError,
    RhsFunction,
    SolverConfig,
    SystemState,
    assemble_rhs,
    integrate,
    integrate_domain,
    laplacian_neumann,
    preset,
    stiffness_probe,
)
from rdfamily.grid_ops import neumann_eigenvalue
from rdfamily.solver import _Problem

MODES = ["adaptive_explicit", "implicit_stiff", "auto"]


def decay(grid):
    return RhsFunction.from_linear(grid, ["q"], lambda f: {"q": -f["q"]})


def diffusion(grid, d):
    return RhsFunction.from_linear(grid, ["q"], lambda f: {"q": d * laplacian_neumann(f["q"], grid)})


def cosine_start(grid):
    X, _ = grid.mesh()
    return SystemState(0.0, {"q": 1 + 0.5 * np.cos(np.pi * X)}, grid)


def mode_amplitude(q):
    return 0.5 * (q[0, 0] - q[0, -1])


def heat_error(grid, rel_tol, mode="auto"):
    traj = integrate(diffusion(grid, 0.5), cosine_start(grid), SolverConfig(1.0, rel_tol=rel_tol, mode=mode))
    exact = 0.5 * np.exp(-0.5 * neumann_eigenvalue(grid.nx))
    return abs(mode_amplitude(traj.states[-1]["q"]) - exact) / exact


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(t_end=0.0),
        dict(t_end=1.0, rel_tol=0.0),
        dict(t_end=1.0, dt_min=1e-3, dt_init=1e-4),
        dict(t_end=1.0, dt_init=1.0, dt_max=0.1),
        dict(t_end=1.0, mode="magic"),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(**kwargs)

    def test_sample_times(self):
        ts = SolverConfig(2.0, output_times=(1.5, 0.5, 0.5)).sample_times()
        assert list(ts) == [0.0, 0.5, 1.5, 2.0]


@pytest.mark.parametrize("mode", MODES)
def test_exponential_decay(grid21, mode):
    traj = integrate(decay(grid21), SystemState(0.0, {"q": grid21.full(1.0)}, grid21),
                     SolverConfig(1.0, rel_tol=1e-8, mode=mode))
    q = traj.states[-1]["q"]
    assert np.max(np.abs(q - np.exp(-1.0))) / np.exp(-1.0) <= 1e-6


@pytest.mark.parametrize("mode", MODES)
def test_heat_mode_matches_oracle(grid21, mode):
    traj = integrate(diffusion(grid21, 0.5), cosine_start(grid21), SolverConfig(1.0, mode=mode))
    q = traj.states[-1]["q"]
    assert abs(integrate_domain(q, grid21) - 1.0) <= 1e-8
    # Oracle: the cosine mode is an exact eigenvector of the discrete operator.
    exact = 0.5 * np.exp(-0.5 * neumann_eigenvalue(21))
    assert exact == pytest.approx(0.00363258434768, rel=1e-10)
    assert abs(mode_amplitude(q) - exact) / exact <= 1e-3


def test_tolerance_monotonicity(grid21):
    errors = [heat_error(grid21, 1e-6 / 2 ** k) for k in range(5)]
    assert all(b <= a for a, b in zip(errors, errors[1:])), errors


@pytest.mark.parametrize("mode", MODES)
def test_zero_rhs(grid21, mode):
    f0 = np.random.default_rng(0).random(grid21.shape)
    rhs = RhsFunction.from_linear(grid21, ["q"], lambda f: {"q": np.zeros_like(f["q"])})
    traj = integrate(rhs, SystemState(0.0, {"q": f0}, grid21), SolverConfig(3.0, mode=mode))
    assert traj.step_stats["rejected"] == 0
    assert all(np.array_equal(s["q"], f0) for s in traj.states)


@pytest.mark.parametrize("mode", MODES)
def test_mass_conservation(mode):
    g = Grid.square(21)
    rng = np.random.default_rng(4)
    fields = {"a": rng.random(g.shape), "b": rng.random(g.shape)}
    rhs = RhsFunction.from_linear(
        g, ["a", "b"], lambda f: {"a": 0.6 * laplacian_neumann(f["a"], g), "b": 0.05 * laplacian_neumann(f["b"], g)}
    )
    traj = integrate(rhs, SystemState(0.0, fields, g), SolverConfig(10.0, mode=mode))
    for c in ("a", "b"):
        assert abs(traj.l1(c)[-1] - traj.l1(c)[0]) <= 1e-8


def test_trajectory_layout(grid21):
    traj = integrate(diffusion(grid21, 0.5), cosine_start(grid21), SolverConfig(2.0, n_outputs=11))
    t = np.asarray(traj.times)
    assert np.all(np.diff(t) > 0) and t[-1] == 2.0 and len(t) == 11
    for i in (0, 5, 10):
        assert traj.l1("q")[i] == integrate_domain(np.abs(traj.states[i]["q"]), grid21)


def test_deterministic(grid21):
    model = preset(2, "chronic")
    from rdfamily import initial_state
    runs = [integrate(assemble_rhs(model, grid21), initial_state(model, grid21), SolverConfig(3.0)) for _ in range(2)]
    assert runs[0].times == runs[1].times
    assert all(np.array_equal(a[c], b[c]) for a, b in zip(runs[0].states, runs[1].states) for c in a)


def test_auto_switches_on_stiff_diffusion(grid21):
    traj = integrate(diffusion(grid21, 0.9), cosine_start(grid21), SolverConfig(5.0))
    assert traj.step_stats["switches"] and traj.step_stats["mode"] == "implicit_stiff"


def test_explicit_mode_never_switches(grid21):
    traj = integrate(diffusion(grid21, 0.1), cosine_start(grid21), SolverConfig(0.5, mode="adaptive_explicit"))
    assert not traj.step_stats["switches"]


def test_nan_reports_component(grid21):
    rhs = RhsFunction.from_linear(
        grid21, ["a", "b"], lambda f: {"a": -f["a"], "b": np.where(f["a"] < 0.5, np.nan, 0.0)}
    )
    with pytest.raises(IntegrationError) as exc:
        integrate(rhs, SystemState(0.0, {"a": grid21.full(1.0), "b": grid21.zeros()}, grid21),
                  SolverConfig(2.0, n_outputs=21))
    assert exc.value.component == "b"
    assert exc.value.trajectory.times and exc.value.trajectory.times[-1] < np.log(2) + 0.1


@pytest.mark.parametrize("mode", ["adaptive_explicit", "implicit_stiff"])
def test_step_underflow_keeps_partial_trajectory(grid21, mode):
    # q' = q^2 from q = 1 blows up at t = 1.
    rhs = RhsFunction.from_linear(grid21, ["q"], lambda f: {"q": np.minimum(f["q"], 1e150) ** 2})
    with pytest.raises(IntegrationError) as exc:
        integrate(rhs, SystemState(0.0, {"q": grid21.full(1.0)}, grid21),
                  SolverConfig(2.0, dt_min=1e-6, mode=mode, n_outputs=41))
    partial = exc.value.trajectory
    assert partial.status == "failed" and 0.9 <= partial.times[-1] < 1.0


class TestStiffnessProbe:
    def test_decay(self, grid21):
        rho = stiffness_probe(decay(grid21), SystemState(0.0, {"q": grid21.full(0.3)}, grid21))
        assert rho == pytest.approx(1.0, rel=0.1)

    def test_diffusion(self, grid21):
        rho = stiffness_probe(diffusion(grid21, 0.6), SystemState(0.0, {"q": grid21.zeros()}, grid21))
        # Largest magnitude of the 2D operator: twice the top 1D eigenvalue, 2 * 4 / dx^2.
        top = 2 * neumann_eigenvalue(21, 20)
        assert top == pytest.approx(3200.0)
        assert rho == pytest.approx(0.6 * top, rel=0.15)

    def test_zero(self, grid21):
        rhs = RhsFunction.from_linear(grid21, ["q"], lambda f: {"q": np.zeros_like(f["q"])})
        assert stiffness_probe(rhs, SystemState(0.0, {"q": grid21.full(1.0)}, grid21)) == 0.0


def test_colored_jacobian_matches_dense(grid21):
    g = Grid.square(7)
    model = preset(1, "chronic")
    rhs = assemble_rhs(model, g)
    rng = np.random.default_rng(8)
    y = rhs.pack({c: rng.uniform(0.1, 1.0, g.shape) for c in model.components})
    problem = _Problem(rhs)
    sparse = problem.local_jacobian(0.0, y).toarray()
    frozen = rhs.nonlocal_values(y)
    f0 = rhs.flat(0.0, y, frozen)
    dense = np.empty((y.size, y.size))
    for j in range(y.size):
        yp = y.copy()
        h = 1.5e-8 * max(1.0, abs(y[j]))
        yp[j] += h
        dense[:, j] = (rhs.flat(0.0, yp, frozen) - f0) / h
    assert np.max(np.abs(sparse - dense)) <= 1e-6 * max(1.0, np.max(np.abs(dense)))


@pytest.mark.parametrize("model_id, course", [(m, c) for m in (1, 2, 3) for c in ("healing", "chronic")])
def test_clamp_accounting(runs, model_id, course):
    _, traj = runs(model_id, course)
    t_end = traj.times[-1]
    for mass in traj.step_stats["clamped_mass"].values():
        assert mass <= 10 * 1e-9 * t_end
