"""
ILR-ADMM
====================================
Iteratively linearized reweighted ADMM. At each step, the concave outer function is replaced by its
tangent at the current iterate (the weights ``W^k``) and the augmented term by its linearization plus
a proximal term ``(r / 2) ||y - y^k||^2``, so the y-update is one weighted prox of ``h`` per entry:

    ``y_i^{k+1} = prox_{(w_i / r) h}(y_i^k - B_i^T (alpha (A x^k + B y^k - c) + p^k) / r)``.

The x-update and the multiplier update are the usual ADMM ones.

Example usage:

.. code-block:: python

    from ilradmm.solver import SolverConfig, run

    state, trace = run(problem, SolverConfig(alpha0=1.0, rho=1.05, alpha_max=1e3))
    print(trace.to_dataframe().tail())

..
    Copyright 2022, The ilradmm developers.

    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        http://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.

"""
from typing import List, Optional, Tuple

import numpy as np

from ilradmm.base import (BaseADMM, BaseCallback, DivergenceError,
                          SolverConfig, admm_step, alpha_schedule, p_update,
                          x_update)
from ilradmm.penalties import prox_weighted_inner
from ilradmm.problem import ProblemSpec, SolverState
from ilradmm.trace import IterateTrace

__all__ = [
    'ILRADMM', 'SolverConfig', 'DivergenceError',
    'linearized_point', 'y_update', 'x_update', 'p_update', 'step', 'alpha_schedule', 'run',
]


def linearized_point(state: SolverState, problem: ProblemSpec) -> np.ndarray:
    """
    Returns ``y^k - B^T (alpha (A x^k + B y^k - c) + p^k) / r``, the point the weighted prox is taken at.
    """
    residual = problem.constraints.residual(state.x, state.y)
    return state.y - problem.B.adjoint_apply(state.alpha * residual + state.p) / state.r


def y_update(state: SolverState, problem: ProblemSpec) -> np.ndarray:
    if state.weights is None:
        raise ValueError("ILR-ADMM needs the weights W^k of the current y.")
    return prox_weighted_inner(problem.inner, state.weights.w, state.r, linearized_point(state, problem))


class ILRADMM(BaseADMM):
    algorithm = 'ilr'
    tracks_relative_error = True

    def update_y(self, state: SolverState) -> np.ndarray:
        return y_update(state, self.problem)


def step(state: SolverState, problem: ProblemSpec, config: Optional[SolverConfig] = None) -> SolverState:
    """
    One ILR-ADMM step: y-update, x-update, p-update, weights at the new y, then the ``alpha`` schedule.
    Repeated calls on the same problem share one x-subproblem solver and ``||B||``.
    """
    config = config if config is not None else SolverConfig()
    return admm_step(state, problem, config, lambda s: y_update(s, problem))


def run(
        problem: ProblemSpec,
        config: Optional[SolverConfig] = None,
        state: Optional[SolverState] = None,
        callbacks: Optional[List[BaseCallback]] = None
) -> Tuple[SolverState, IterateTrace]:
    """
    Run ILR-ADMM from ``state`` (zeros when None).

    :return: the last state and the trace of the run
    """
    solver = ILRADMM(problem, config, callbacks=callbacks)
    return solver.run(state)
