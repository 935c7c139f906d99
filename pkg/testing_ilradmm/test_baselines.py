import numpy as np
import pytest

from ilradmm.base import IterateRecorderCallback
from ilradmm.baselines import (ALGORITHMS, BaselineConfig, DirectADMM,
                               InLoopADMM, direct_admm_step, inloop_admm_step,
                               make_solver, run_baseline)
from ilradmm.diagnostics import grid_prox_oracle
from ilradmm.experiments.instances import make_dense_instance
from ilradmm.logging.logging import LOGGER_STRING_IO
from ilradmm.operators import ConstraintSystem, DenseOperator, ScaledIdentity
from ilradmm.penalties import AbsInner, LogOuter, PowerOuter, SquareInner
from ilradmm.problem import ProblemSpec, QuadraticLoss, SolverState
from ilradmm.solver import ILRADMM, y_update
from ilradmm.trace import CSV_COLUMNS, RunStatus


def _problem(outer, inner=AbsInner(), B=None, n=4, seed=0):
    rng = np.random.default_rng(seed)
    loss = QuadraticLoss(DenseOperator(rng.normal(size=(n, n)) + 3 * np.eye(n)), rng.normal(size=n))
    B = B if B is not None else ScaledIdentity(n, -1.0)
    return ProblemSpec(loss, ConstraintSystem(DenseOperator(np.eye(n)), B, np.zeros(n)), outer, inner)


def _random_state(solver, seed=1, alpha=2.0):
    rng = np.random.default_rng(seed)
    n = solver.problem.A.in_dim
    return solver.initial_state(rng.normal(size=n), rng.normal(size=n), rng.normal(size=n)).with_updates(
        alpha=alpha, r=solver.config.r_for(alpha, solver.b_norm))


def test_direct_admm_without_penalty_is_the_shifted_point():
    # Given
    solver = DirectADMM(_problem(PowerOuter(0.5, 0.0, scale=0.0)))
    state = _random_state(solver)

    # When
    y = solver.update_y(state)

    # Then
    expected = solver.problem.A.apply(state.x) - solver.problem.c + state.p / state.alpha
    assert np.allclose(y, expected, rtol=0, atol=1e-14)


def test_direct_admm_keeps_a_zero_shifted_entry_at_zero():
    solver = DirectADMM(_problem(PowerOuter(0.5, 0.0, scale=0.1)))
    x = np.array([0.0, 1.0, 2.0, -3.0])
    state = SolverState(x=x, y=np.zeros(4), p=np.zeros(4), alpha=1.0, r=1.0)

    y = solver.update_y(state)

    assert y[0] == 0.0


def test_direct_admm_y_update_is_the_global_minimizer():
    # Given
    outer = PowerOuter(0.5, 0.0, scale=0.3)
    solver = DirectADMM(_problem(outer, seed=5))
    state = _random_state(solver, seed=6, alpha=1.3)
    z = solver.shifted_point(state)

    # When
    y = solver.update_y(state)

    # Then
    for i in range(len(y)):
        def objective(t, z_i=z[i]):
            return 0.3 * np.abs(t) ** 0.5 + 0.5 * state.alpha * (t - z_i) ** 2
        expected = grid_prox_oracle(objective, (-abs(z[i]) - 1, abs(z[i]) + 1), 1e-4)
        assert objective(y[i]) <= objective(expected) + 1e-8


@pytest.mark.parametrize("problem_kwargs", [
    dict(outer=LogOuter(1e-3, 0.1)),
    dict(outer=PowerOuter(0.5, 1e-3, 0.1), inner=SquareInner()),
    dict(outer=PowerOuter(0.5, 1e-3, 0.1), B=DenseOperator(-np.eye(4))),
    dict(outer=PowerOuter(0.5, 1e-3, 0.1), B=ScaledIdentity(4, 0.0)),
])
def test_direct_admm_rejects_unsupported_problems(problem_kwargs):
    with pytest.raises(ValueError):
        DirectADMM(_problem(**problem_kwargs))


def test_inloop_with_one_inner_iteration_is_the_ilr_y_update():
    problem = _problem(PowerOuter(0.5, 1e-3, 0.1), seed=2)
    solver = InLoopADMM(problem, BaselineConfig(inner_iters=1))
    state = _random_state(solver, seed=3)

    assert np.array_equal(solver.update_y(state), y_update(state, problem))


def test_inloop_with_one_inner_iteration_matches_ilr_steps():
    instance = make_dense_instance(m=6, n=6, seed=4)
    config = BaselineConfig(inner_iters=1)
    inloop = InLoopADMM(instance.problem, config)
    ilr = ILRADMM(instance.problem, config)
    left = right = instance.initial_state(ilr)
    for _ in range(5):
        left, right = inloop.step(left), ilr.step(right)

        assert np.array_equal(left.x, right.x)
        assert np.array_equal(left.y, right.y)
        assert np.array_equal(left.p, right.p)


def test_inner_objective_does_not_increase():
    # Given
    problem = _problem(LogOuter(1e-2, 0.5), seed=7)
    solver = InLoopADMM(problem, BaselineConfig(inner_iters=20))
    state = _random_state(solver, seed=8)

    # When
    v, objectives = solver.inner_loop(state)

    # Then
    assert len(objectives) == 20
    assert all(b <= a + 1e-12 * (1 + abs(a)) for a, b in zip(objectives, objectives[1:]))
    assert solver.inner_objective(state, v) == pytest.approx(objectives[-1])


def test_more_inner_iterations_end_no_worse():
    problem = _problem(PowerOuter(0.5, 1e-3, 0.5), seed=9)
    solver = InLoopADMM(problem, BaselineConfig(inner_iters=10))
    state = _random_state(solver, seed=10)

    v_one, _ = solver.inner_loop(state, inner_iters=1)
    v_ten, _ = solver.inner_loop(state)

    assert solver.inner_objective(state, v_ten) <= solver.inner_objective(state, v_one) + 1e-12


def test_step_functions_advance_the_state():
    instance = make_dense_instance(m=5, n=5, seed=11)
    state = instance.initial_state(ILRADMM(instance.problem))
    n_histories = len(LOGGER_STRING_IO)

    for _ in range(50):
        direct = direct_admm_step(state, instance.problem)
        inloop = inloop_admm_step(state, instance.problem, BaselineConfig(inner_iters=2))

    assert direct.k == inloop.k == 1
    assert direct.weights is not None
    assert len(LOGGER_STRING_IO) == n_histories


@pytest.mark.parametrize("kind", ['direct', 'inloop'])
def test_run_baseline_writes_the_same_trace_columns(kind):
    instance = make_dense_instance(m=8, n=8, seed=12)
    config = BaselineConfig(max_iter=15, primal_tol=0.0, step_tol=0.0, inner_iters=3)

    _, trace = run_baseline(kind, instance.problem, config)

    assert trace.algorithm == kind
    assert len(trace) == 15
    assert trace.status == RunStatus.MAX_ITER
    assert list(trace.to_dataframe().columns) == list(CSV_COLUMNS)


def test_run_baseline_stops_at_default_cap():
    instance = make_dense_instance(m=4, n=4, seed=13)

    _, trace = run_baseline('direct', instance.problem, BaselineConfig(primal_tol=0.0, step_tol=0.0))

    assert len(trace) == 200


def test_unknown_algorithms_are_rejected():
    instance = make_dense_instance(m=4, n=4, seed=0)
    with pytest.raises(ValueError):
        make_solver('sgd', instance.problem)
    with pytest.raises(ValueError):
        run_baseline('ilr', instance.problem)


def test_convex_penalty_makes_the_three_algorithms_agree():
    # Given q = 1, the y-subproblems of the three algorithms coincide up to r - alpha
    instance = make_dense_instance(seed=14, q=1.0)
    config = BaselineConfig(r_margin=1e-12, max_iter=30, primal_tol=0.0, step_tol=0.0, inner_iters=3)
    sequences = {}

    # When
    for kind in ALGORITHMS:
        recorder = IterateRecorderCallback()
        solver = make_solver(kind, instance.problem, config, callbacks=[recorder])
        solver.run(instance.initial_state(solver))
        sequences[kind] = recorder.iterates

    # Then
    for kind in ('direct', 'inloop'):
        assert len(sequences[kind]) == 30
        for reference, other in zip(sequences['ilr'], sequences[kind]):
            for a, b in zip(reference, other):
                assert np.max(np.abs(a - b)) <= 1e-8


def test_direct_y_update_is_no_worse_than_ilr_on_the_exact_subproblem():
    problem = _problem(PowerOuter(0.5, 1e-7, scale=0.3), seed=15)
    direct = DirectADMM(problem)
    for seed in range(50):
        state = _random_state(direct, seed=100 + seed, alpha=float(np.random.default_rng(seed).uniform(0.5, 5.0)))

        def objective(y):
            residual = problem.constraints.residual(state.x, y)
            return problem.penalty(y) + float(state.p @ problem.B.apply(y)) + 0.5 * state.alpha * float(residual @ residual)

        y_direct = direct.update_y(state)
        y_ilr = y_update(state, problem)

        assert objective(y_direct) <= objective(y_ilr) + 1e-9 * (1 + abs(objective(y_ilr)))
