import numpy as np
import pytest

from ilradmm.config import parse_config_text
from ilradmm.diagnostics import constants_for, estimate_delta
from ilradmm.experiments.instances import (instance_from_config,
                                           make_dense_instance)
from ilradmm.solver import ILRADMM, SolverConfig


def test_dense_instance_has_the_requested_spectra():
    instance = make_dense_instance(m=8, n=12, seed=1, a_min_sv=0.5, a_max_sv=3.0, loss_min_sv=0.2, loss_max_sv=2.0)
    problem = instance.problem

    a_sv = np.linalg.svd(problem.A.to_dense(), compute_uv=False)
    loss_sv = np.linalg.svd(problem.loss.operator.to_dense(), compute_uv=False)

    assert problem.A.shape == (8, 12)
    assert a_sv[0] == pytest.approx(3.0) and a_sv[-1] == pytest.approx(0.5)
    assert loss_sv[0] == pytest.approx(2.0) and loss_sv[-1] == pytest.approx(0.2)
    assert problem.loss.delta == pytest.approx(0.04)
    assert problem.loss.lipschitz == pytest.approx(4.0)


def test_dense_instance_is_seeded():
    left, right = make_dense_instance(seed=3), make_dense_instance(seed=3)

    assert np.array_equal(left.problem.A.to_dense(), right.problem.A.to_dense())
    assert np.array_equal(left.x0, right.x0)
    assert not np.array_equal(make_dense_instance(seed=4).problem.A.to_dense(), left.problem.A.to_dense())


def test_minimizer_start_is_dual_consistent_and_feasible():
    instance = make_dense_instance(seed=5)
    solver = ILRADMM(instance.problem)

    state = instance.initial_state(solver)

    assert solver.is_dual_consistent(state)
    assert np.linalg.norm(instance.problem.constraints.residual(state.x, state.y)) <= 1e-10


def test_default_instance_satisfies_the_step_size_condition():
    instance = make_dense_instance()

    constants = constants_for(instance.problem, SolverConfig(alpha0=4.0, alpha_max=4.0))

    assert constants.theta == pytest.approx(1.0)
    assert constants.eta == pytest.approx(1.0)
    assert constants.parameters_admissible
    assert constants.nu > 0
    assert constants.dual_bound_checkable
    assert estimate_delta(instance.problem) >= instance.problem.loss.delta


def test_zeros_start():
    instance = make_dense_instance(m=4, n=5, init='zeros')

    assert not np.any(instance.x0) and not np.any(instance.y0) and not np.any(instance.p0)


@pytest.mark.parametrize("kwargs", [
    dict(m=6, n=5),
    dict(a_min_sv=2.0, a_max_sv=1.0),
    dict(loss_min_sv=0.0),
    dict(init='random'),
])
def test_dense_instance_rejects_bad_arguments(kwargs):
    with pytest.raises(ValueError):
        make_dense_instance(**kwargs)


def test_instance_from_config():
    config = parse_config_text("m = 3\nn = 4\nq = 0.8\nsigma = 0.5\nseed = 9\nalpha0 = 2\n")

    instance = instance_from_config(config)

    assert instance.seed == 9
    assert instance.problem.A.shape == (3, 4)
    assert instance.problem.outer.q == 0.8
    assert instance.problem.outer.scale == 0.5
